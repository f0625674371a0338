//! Coupled `(x0, x1)` training pairs and their binary file format.
//!
//! ```text
//! magic     8 bytes "RFLWPAIR"
//! version   u32     1
//! kind      u8      0 independent, 1 ode-coupled
//! count     u64
//! rank      u64, extents u64 × rank     (one sample)
//! grid      u64     waypoints stored at t = j/grid, j = 0..=grid
//! seed      u64
//! skipped   u64     pairs dropped after solver failures
//! solver, parent digest, config digest: u64 length + UTF-8 each
//! values    f64 × count × (grid + 1) × numel(sample)
//! sha256    32 bytes over everything above
//! ```

use std::fs;
use std::path::Path;

use log::{info, warn};

use crate::binio::{put_string, put_u32, put_u64, sha256_hex, sha256_raw, ByteReader};
use crate::error::{Error, Result};
use crate::flow::{Flow, StageTag};
use crate::nn::VelocityField;
use crate::ode::{integrate_span_each, Method, SolverSpec};
use crate::random::{rng, standard_normal};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"RFLWPAIR";
const VERSION: u32 = 1;
const MAX_RANK: u64 = 8;
const MAX_TEXT: usize = 4096;
/// Samples integrated per batched solver call.
const CHUNK: usize = 512;
/// Largest tolerated fraction of failed pairs.
const MAX_SKIP_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    Independent,
    OdeCoupled,
}

impl PairKind {
    pub fn name(self) -> &'static str {
        match self {
            PairKind::Independent => "independent",
            PairKind::OdeCoupled => "ode-coupled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub kind: PairKind,
    pub sample_shape: Vec<usize>,
    /// Number of trajectory segments; `grid + 1` states are stored per pair.
    pub grid: usize,
    /// `[count, grid + 1, ...sample_shape]`.
    pub path: Tensor,
    pub solver: String,
    pub seed: u64,
    pub parent_digest: String,
    pub config_digest: String,
    pub skipped: usize,
}

impl PairDataset {
    /// Pairs drawn without coupling; only useful as a contrast to reflow.
    pub fn independent(x0: &Tensor, x1: &Tensor, seed: u64) -> Result<Self> {
        if x0.shape() != x1.shape() || x0.rank() < 2 {
            return Err(Error::shape("independent pairs", x0.shape(), x1.shape()));
        }
        let n = x0.shape()[0];
        let d = x0.len() / n.max(1);
        let mut data = Vec::with_capacity(2 * x0.len());
        for i in 0..n {
            data.extend_from_slice(&x0.data()[i * d..(i + 1) * d]);
            data.extend_from_slice(&x1.data()[i * d..(i + 1) * d]);
        }
        let mut shape = vec![n, 2];
        shape.extend_from_slice(&x0.shape()[1..]);
        Ok(Self {
            kind: PairKind::Independent,
            sample_shape: x0.shape()[1..].to_vec(),
            grid: 1,
            path: Tensor::new(shape, data)?,
            solver: "none".into(),
            seed,
            parent_digest: String::new(),
            config_digest: String::new(),
            skipped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.path.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn numel(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// States at waypoint `j` (t = j/grid) for the given pair indices.
    pub fn waypoint_rows(&self, idx: &[usize], j: usize) -> Tensor {
        assert!(j <= self.grid, "waypoint {j} beyond grid {}", self.grid);
        let d = self.numel();
        let stride = (self.grid + 1) * d;
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            let at = i * stride + j * d;
            data.extend_from_slice(&self.path.data()[at..at + d]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, data).expect("waypoint rows match the sample shape")
    }

    fn all(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn x0(&self) -> Tensor {
        self.waypoint_rows(&self.all(), 0)
    }

    pub fn x1(&self) -> Tensor {
        self.waypoint_rows(&self.all(), self.grid)
    }

    /// Serialised bytes including the trailing SHA-256.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Vec::with_capacity(self.path.len() * 8 + 256);
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION)?;
        w.push(match self.kind {
            PairKind::Independent => 0,
            PairKind::OdeCoupled => 1,
        });
        put_u64(&mut w, self.len() as u64)?;
        put_u64(&mut w, self.sample_shape.len() as u64)?;
        for &e in &self.sample_shape {
            put_u64(&mut w, e as u64)?;
        }
        put_u64(&mut w, self.grid as u64)?;
        put_u64(&mut w, self.seed)?;
        put_u64(&mut w, self.skipped as u64)?;
        put_string(&mut w, &self.solver)?;
        put_string(&mut w, &self.parent_digest)?;
        put_string(&mut w, &self.config_digest)?;
        for v in self.path.data() {
            w.extend_from_slice(&v.to_le_bytes());
        }
        let digest = sha256_raw(&w);
        w.extend_from_slice(&digest);
        Ok(w)
    }

    /// Hex SHA-256 identifying the dataset contents.
    pub fn digest(&self) -> Result<String> {
        let bytes = self.encode()?;
        Ok(hex_tail(&bytes))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 8,
                msg: format!("unsupported pair file version {version}"),
            });
        }
        let kind = match r.u8()? {
            0 => PairKind::Independent,
            1 => PairKind::OdeCoupled,
            k => {
                return Err(Error::Format {
                    offset: 12,
                    msg: format!("unknown pairing kind {k}"),
                })
            }
        };
        let count = r.u64()?;
        let rank_at = r.offset();
        let rank = r.u64()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format {
                offset: rank_at,
                msg: format!("sample rank {rank} out of range"),
            });
        }
        let mut sample_shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            sample_shape.push(r.u64()? as usize);
        }
        let grid_at = r.offset();
        let grid = r.u64()? as usize;
        if grid == 0 {
            return Err(Error::Format {
                offset: grid_at,
                msg: "waypoint grid must be at least 1".into(),
            });
        }
        let seed = r.u64()?;
        let skipped = r.u64()? as usize;
        let solver = r.string(MAX_TEXT)?;
        let parent_digest = r.string(MAX_TEXT)?;
        let config_digest = r.string(MAX_TEXT)?;
        let header_end = r.offset() as usize;
        let numel: usize = sample_shape.iter().product();
        let values = (count as usize)
            .checked_mul(grid + 1)
            .and_then(|v| v.checked_mul(numel))
            .filter(|&v| v.checked_mul(8).is_some_and(|b| header_end + b + 32 == bytes.len()))
            .ok_or_else(|| Error::Format {
                offset: header_end as u64,
                msg: format!(
                    "payload of {} bytes does not hold {count} pairs of shape {sample_shape:?} on grid {grid}",
                    bytes.len().saturating_sub(header_end)
                ),
            })?;
        let body = &bytes[..bytes.len() - 32];
        let expected = hex::encode(&bytes[bytes.len() - 32..]);
        let found = sha256_hex(body);
        if expected != found {
            return Err(Error::DigestMismatch { expected, found });
        }
        let data: Vec<f64> = body[header_end..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        debug_assert_eq!(data.len(), values);
        let mut shape = vec![count as usize, grid + 1];
        shape.extend_from_slice(&sample_shape);
        Ok(Self {
            kind,
            sample_shape,
            grid,
            path: Tensor::new(shape, data)?,
            solver,
            seed,
            parent_digest,
            config_digest,
            skipped,
        })
    }

    /// Writes the file and returns its content digest.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode()?;
        fs::write(path, &bytes)?;
        Ok(hex_tail(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn hex_tail(encoded: &[u8]) -> String {
    hex::encode(&encoded[encoded.len() - 32..])
}

/// Options for [`generate_reflow_pairs`].
#[derive(Clone, Debug)]
pub struct PairSpec {
    pub count: usize,
    pub solver: SolverSpec,
    /// Waypoints are stored at `j/grid`; distillation to k steps needs `grid = k`.
    pub grid: usize,
    pub seed: u64,
    pub config_digest: String,
}

/// Integrates `count` standard-normal latents through `parent` and stores the
/// coupled endpoints (plus grid waypoints). Failed integrations are skipped;
/// more than 1% failures abort.
pub fn generate_reflow_pairs(
    parent: &Flow,
    parent_digest: &str,
    spec: &PairSpec,
) -> Result<PairDataset> {
    if let StageTag::Distilled { .. } = parent.stage.tag {
        return Err(Error::Stage(format!(
            "cannot generate pairs from a {} model; it only samples on its own grid",
            parent.stage.tag
        )));
    }
    pairs_from_field(&parent.model, parent_digest, spec)
}

/// [`generate_reflow_pairs`] for an arbitrary field.
pub fn pairs_from_field<F: VelocityField + ?Sized>(
    field: &F,
    parent_digest: &str,
    spec: &PairSpec,
) -> Result<PairDataset> {
    if spec.grid == 0 {
        return Err(Error::invalid("pair waypoint grid must be at least 1"));
    }
    if spec.solver.direction != crate::ode::Direction::Forward {
        return Err(Error::invalid("pairs are generated by forward integration"));
    }
    spec.solver.validate()?;
    let mut segment = spec.solver;
    match &mut segment.method {
        Method::Euler { steps } | Method::Midpoint { steps } => {
            if *steps % spec.grid != 0 {
                return Err(Error::invalid(format!(
                    "{} fixed steps cannot be split over a grid of {}",
                    steps, spec.grid
                )));
            }
            *steps /= spec.grid;
        }
        Method::Dopri5 { .. } => {}
    }
    segment.record = false;

    let shape = field.sample_shape();
    let d: usize = shape.iter().product();
    let x0 = standard_normal(spec.count, &shape, &mut rng(spec.seed));
    let mut data = Vec::with_capacity(spec.count * (spec.grid + 1) * d);
    let mut kept = 0;
    let mut skipped = 0;
    for start in (0..spec.count).step_by(CHUNK) {
        let n = CHUNK.min(spec.count - start);
        let mut paths: Vec<Vec<Vec<f64>>> = (start..start + n)
            .map(|i| vec![x0.data()[i * d..(i + 1) * d].to_vec()])
            .collect();
        let mut alive: Vec<usize> = (0..n).collect();
        for j in 0..spec.grid {
            if alive.is_empty() {
                break;
            }
            let t0 = j as f64 / spec.grid as f64;
            let t1 = (j + 1) as f64 / spec.grid as f64;
            let mut bshape = vec![alive.len()];
            bshape.extend_from_slice(&shape);
            let batch = Tensor::new(
                bshape,
                alive
                    .iter()
                    .flat_map(|&a| paths[a][j].iter().copied())
                    .collect(),
            )?;
            let outcomes = integrate_span_each(field, &batch, t0, t1, &segment)?;
            let mut next = Vec::with_capacity(alive.len());
            for (&a, o) in alive.iter().zip(outcomes) {
                match o {
                    Ok((end, _)) => {
                        paths[a].push(end);
                        next.push(a);
                    }
                    Err(e) => {
                        warn!("pair {} skipped: {e}", start + a);
                        skipped += 1;
                    }
                }
            }
            alive = next;
        }
        for a in alive {
            kept += 1;
            paths[a].iter().for_each(|s| data.extend_from_slice(s));
        }
        info!("reflow pairs: {} of {} integrated", start + n, spec.count);
    }
    if spec.count > 0 && skipped as f64 > MAX_SKIP_FRACTION * spec.count as f64 {
        return Err(Error::Solver {
            t: 0.0,
            reason: format!(
                "{skipped} of {} pair integrations failed (limit 1%)",
                spec.count
            ),
            last_state: Vec::new(),
        });
    }
    let mut pshape = vec![kept, spec.grid + 1];
    pshape.extend_from_slice(&shape);
    Ok(PairDataset {
        kind: PairKind::OdeCoupled,
        sample_shape: shape,
        grid: spec.grid,
        path: Tensor::new(pshape, data)?,
        solver: spec.solver.describe(),
        seed: spec.seed,
        parent_digest: parent_digest.to_string(),
        config_digest: spec.config_digest.clone(),
        skipped,
    })
}
