//! Miniature hourglass transformer for `2×H×W` range/reflectance images.
//!
//! Layout: `1×4` patch embedding (+ optional learnable per-token bias), one
//! windowed stage, `2×2` token merge, a bottleneck with global attention,
//! token split, interpolated skip fusion, a second windowed stage and the
//! output projection back to pixels. Every block is pre-normalised with an
//! RMS norm whose gain is modulated by the flow time.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::attention::{skip_fusion, Attention, AttentionGeometry};
use super::layers::{ada_rms_norm, gelu, pv, Init, Linear};
use super::patch::{patchify_indices, unpatchify_indices, PATCH_WIDTH};
use super::TimeEmbedding;
use crate::error::{Error, Result};
use crate::lidar::BeamTable;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct HourglassConfig {
    pub height: usize,
    pub width: usize,
    /// Token widths of the outer stages and of the bottleneck.
    pub widths: [usize; 2],
    pub depth: usize,
    pub head_dim: usize,
    pub ffn_mult: usize,
    pub window: (usize, usize),
    pub time: TimeEmbedding,
    pub ape: bool,
    pub beams: BeamTable,
    pub zero_output: bool,
}

impl HourglassConfig {
    /// Stage widths 64/128, two blocks per stage, `3×9` windows.
    pub fn miniature(beams: BeamTable, width: usize) -> Self {
        Self {
            height: beams.rows(),
            width,
            widths: [64, 128],
            depth: 2,
            head_dim: 32,
            ffn_mult: 3,
            window: (3, 9),
            time: TimeEmbedding::new(16, 100.0),
            ape: true,
            beams,
            zero_output: false,
        }
    }

    pub fn token_rows(&self) -> usize {
        self.height
    }

    pub fn token_cols(&self) -> usize {
        self.width / PATCH_WIDTH
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.token_cols();
        if !self.width.is_multiple_of(PATCH_WIDTH) {
            return Err(Error::invalid(format!(
                "width {} not divisible by 4",
                self.width
            )));
        }
        if self.beams.rows() != self.height {
            return Err(Error::invalid(format!(
                "beam table has {} rows, image height is {}",
                self.beams.rows(),
                self.height
            )));
        }
        if !self.height.is_multiple_of(2) || !cols.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "token grid {}×{cols} must have even extents for 2×2 merging",
                self.height
            )));
        }
        if cols < self.window.1 {
            return Err(Error::invalid(format!(
                "{cols} token columns narrower than window {}",
                self.window.1
            )));
        }
        for w in self.widths {
            if w % self.head_dim != 0 {
                return Err(Error::invalid(format!(
                    "stage width {w} not a multiple of head dim {}",
                    self.head_dim
                )));
            }
        }
        if self.depth == 0 || self.ffn_mult == 0 {
            return Err(Error::invalid("depth and ffn multiplier must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: Linear,
    attn: Attention,
    norm2: Linear,
    ffn_in: Linear,
    ffn_out: Linear,
    width: usize,
}

impl Block {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        width: usize,
        cond: usize,
        cfg: &HourglassConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let hidden = width * cfg.ffn_mult;
        Self {
            norm1: Linear::new(
                ps,
                &format!("{name}.norm1"),
                cond,
                width,
                false,
                Init::Uniform,
                rng,
            ),
            attn: Attention::new(ps, &format!("{name}.attn"), width, cfg.head_dim, rng),
            norm2: Linear::new(
                ps,
                &format!("{name}.norm2"),
                cond,
                width,
                false,
                Init::Uniform,
                rng,
            ),
            ffn_in: Linear::new(
                ps,
                &format!("{name}.ffn_in"),
                width,
                hidden,
                true,
                Init::Uniform,
                rng,
            ),
            ffn_out: Linear::new(
                ps,
                &format!("{name}.ffn_out"),
                hidden,
                width,
                true,
                Init::Uniform,
                rng,
            ),
            width,
        }
    }

    fn gain(&self, tape: &mut Tape, vars: &[Var], lin: &Linear, cond: Var) -> Result<Var> {
        let b = tape.shape(cond)[0];
        let s = lin.apply(tape, vars, cond)?;
        tape.reshape(s, &[b, 1, self.width])
    }

    fn apply(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        cond: Var,
        geom: &AttentionGeometry,
    ) -> Result<Var> {
        let g1 = self.gain(tape, vars, &self.norm1, cond)?;
        let h = ada_rms_norm(tape, x, g1)?;
        let h = self.attn.apply(tape, vars, h, geom)?;
        let x = tape.add(x, h)?;
        let g2 = self.gain(tape, vars, &self.norm2, cond)?;
        let h = ada_rms_norm(tape, x, g2)?;
        let h = self.ffn_in.apply(tape, vars, h)?;
        let h = gelu(tape, h)?;
        let h = self.ffn_out.apply(tape, vars, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct HourglassVelocity {
    config: HourglassConfig,
    patch_in: Linear,
    ape: Option<ParamId>,
    time_in: Linear,
    time_out: Linear,
    encoder: Vec<Block>,
    bottleneck: Vec<Block>,
    decoder: Vec<Block>,
    down: Linear,
    up: Linear,
    fuse: ParamId,
    out_norm: Linear,
    out: Linear,
    outer_geom: AttentionGeometry,
    inner_geom: AttentionGeometry,
}

impl HourglassVelocity {
    pub(crate) fn build(
        config: HourglassConfig,
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let [w0, w1] = config.widths;
        let rows = config.token_rows();
        let cols = config.token_cols();
        let token_dim = CHANNELS * PATCH_WIDTH;
        let cond = w0;

        let patch_in = Linear::new(ps, "patch_in", token_dim, w0, true, Init::Uniform, rng);
        let ape = config
            .ape
            .then(|| ps.add("ape", Tensor::zeros(vec![rows * cols, w0])));
        let time_in = Linear::new(
            ps,
            "time_in",
            config.time.dim,
            cond,
            true,
            Init::Uniform,
            rng,
        );
        let time_out = Linear::new(ps, "time_out", cond, cond, true, Init::Uniform, rng);
        let stage = |ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize| {
            (0..config.depth)
                .map(|i| Block::new(ps, &format!("{name}.{i}"), width, cond, &config, rng))
                .collect::<Vec<_>>()
        };
        let encoder = stage(ps, rng, "enc", w0);
        let down = Linear::new(ps, "down", 4 * w0, w1, false, Init::Uniform, rng);
        let bottleneck = stage(ps, rng, "mid", w1);
        let up = Linear::new(ps, "up", w1, 4 * w0, false, Init::Uniform, rng);
        let fuse = ps.add("fuse", Tensor::full(vec![w0], 0.5));
        let decoder = stage(ps, rng, "dec", w0);
        let out_norm = Linear::new(ps, "out_norm", cond, w0, false, Init::Uniform, rng);
        let out_init = if config.zero_output {
            Init::Zeros
        } else {
            Init::Uniform
        };
        let out = Linear::new(ps, "out", w0, token_dim, true, out_init, rng);

        let fine_elev = config.beams.elevations().to_vec();
        let coarse_elev: Vec<f64> = fine_elev.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let outer_geom =
            AttentionGeometry::windowed(&fine_elev, cols, config.window, config.head_dim)?;
        let inner_geom = AttentionGeometry::global(&coarse_elev, cols / 2, config.head_dim)?;

        Ok(Self {
            config,
            patch_in,
            ape,
            time_in,
            time_out,
            encoder,
            bottleneck,
            decoder,
            down,
            up,
            fuse,
            out_norm,
            out,
            outer_geom,
            inner_geom,
        })
    }

    pub fn config(&self) -> &HourglassConfig {
        &self.config
    }

    pub fn ape_param(&self) -> Option<ParamId> {
        self.ape
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        vec![CHANNELS, self.config.height, self.config.width]
    }

    /// Row order that groups each `2×2` block of fine tokens contiguously.
    fn merge_indices(&self, batch: usize) -> (Arc<[usize]>, Arc<[usize]>) {
        let rows = self.config.token_rows();
        let cols = self.config.token_cols();
        let n = rows * cols;
        let (gr, gc) = (rows / 2, cols / 2);
        let mut merge = Vec::with_capacity(batch * n);
        for b in 0..batch {
            for r in 0..gr {
                for c in 0..gc {
                    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        merge.push(b * n + (2 * r + dr) * cols + 2 * c + dc);
                    }
                }
            }
        }
        let mut split = vec![0; merge.len()];
        for (dst, &src) in merge.iter().enumerate() {
            split[src] = dst;
        }
        (merge.into(), split.into())
    }

    /// `x: [B, 2, H, W]`, one time per batch element.
    pub(crate) fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, t: &[f64]) -> Result<Var> {
        let cfg = &self.config;
        let shape = tape.shape(x).to_vec();
        let expect = [t.len(), CHANNELS, cfg.height, cfg.width];
        if shape != expect {
            return Err(Error::shape("hourglass forward", &shape, &expect));
        }
        let b = t.len();
        let [w0, w1] = cfg.widths;
        let n = cfg.token_rows() * cfg.token_cols();
        let token_dim = CHANNELS * PATCH_WIDTH;

        let flat = tape.reshape(x, &[b * CHANNELS * cfg.height * cfg.width, 1])?;
        let tok = tape.gather(
            flat,
            patchify_indices(b, CHANNELS, cfg.height, cfg.width).into(),
        )?;
        let tok = tape.reshape(tok, &[b * n, token_dim])?;
        let h = self.patch_in.apply(tape, vars, tok)?;
        let mut h = tape.reshape(h, &[b, n, w0])?;
        if let Some(ape) = self.ape {
            h = tape.add(h, pv(vars, ape))?;
        }

        let temb = tape.constant(cfg.time.embed_batch(t));
        let c = self.time_in.apply(tape, vars, temb)?;
        let c = gelu(tape, c)?;
        let cond = self.time_out.apply(tape, vars, c)?;

        for blk in &self.encoder {
            h = blk.apply(tape, vars, h, cond, &self.outer_geom)?;
        }
        let skip = h;

        let (merge, split) = self.merge_indices(b);
        let m = tape.reshape(h, &[b * n, w0])?;
        let m = tape.gather(m, merge)?;
        let m = tape.reshape(m, &[b * n / 4, 4 * w0])?;
        let m = self.down.apply(tape, vars, m)?;
        let mut h = tape.reshape(m, &[b, n / 4, w1])?;
        for blk in &self.bottleneck {
            h = blk.apply(tape, vars, h, cond, &self.inner_geom)?;
        }
        let u = tape.reshape(h, &[b * n / 4, w1])?;
        let u = self.up.apply(tape, vars, u)?;
        let u = tape.reshape(u, &[b * n, w0])?;
        let u = tape.gather(u, split)?;
        let u = tape.reshape(u, &[b, n, w0])?;
        let mut h = skip_fusion(tape, u, skip, pv(vars, self.fuse))?;

        for blk in &self.decoder {
            h = blk.apply(tape, vars, h, cond, &self.outer_geom)?;
        }
        let g = self.out_norm.apply(tape, vars, cond)?;
        let g = tape.reshape(g, &[b, 1, w0])?;
        let h = ada_rms_norm(tape, h, g)?;
        let h = tape.reshape(h, &[b * n, w0])?;
        let y = self.out.apply(tape, vars, h)?;
        let y = tape.reshape(y, &[b * n * token_dim, 1])?;
        let y = tape.gather(
            y,
            unpatchify_indices(b, CHANNELS, cfg.height, cfg.width).into(),
        )?;
        tape.reshape(y, &expect)
    }
}
