//! Command implementations. Each command resolves its [`RunConfig`], writes
//! its artifacts into `out` and finishes with a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use rectflow::data::EightGaussians;
use rectflow::eval::{
    curvature, jsd, midpoint_grid, mmd2_biased, mmd2_unbiased, mmd_permutation_test, sliced_w2,
    BevGrid, BevHistogram, MetricReport,
};
use rectflow::flow::{
    distill, pairs_from_field, train_1rf, train_reflow, Flow, LossKind, PairDataset, PairSpec,
    StageTag, TimeDist, TrainConfig, TrainLog,
};
use rectflow::lidar::{scene_batch, BeamTable, LogCodec, PointCloud, RangeImage, SceneConfig};
use rectflow::nn::{HourglassConfig, MlpConfig, ModelConfig, VelocityField, VelocityModel};
use rectflow::ode::{invert, sample, sample_from, slerp, Method, SolverSpec};
use rectflow::random::standard_normal;
use rectflow::tensor::FloatWidth;
use rectflow::Tensor;

use crate::artifacts::{
    data_err, has_ext, images_to_tensor, list_files, load_clouds, load_images, read_rows_csv,
    rows_csv, write_images, write_manifest, DataError,
};
use crate::config::{usage, RunConfig};

const COMMON: &[(&str, &str)] = &[("seed", "0"), ("out", "run")];

const TRAINING: &[(&str, &str)] = &[
    ("train.steps", "20000"),
    ("train.batch", "256"),
    ("train.lr", "0.001"),
    ("train.lr_floor", "1"),
    ("ckpt.width", "f64"),
];

const PAIRS: &[(&str, &str)] = &[
    ("parent", ""),
    ("pairs.count", "10000"),
    ("pairs.solver", "dopri5:1e-5"),
    ("pairs.file", ""),
    ("train.time", "u-shaped:4"),
    ("train.loss", "pseudo-huber"),
];

pub fn defaults(command: &str) -> Vec<(&'static str, &'static str)> {
    let mut d = COMMON.to_vec();
    let extra: &[&[(&str, &str)]] = match command {
        "train" => &[
            TRAINING,
            &[
                ("stage", "1-RF"),
                ("data", "eight-gaussians"),
                ("data.count", "20000"),
                ("beams", "mini"),
                ("model.hidden", "64,64,64"),
                ("model.widths", "64,128"),
                ("model.depth", "2"),
                ("model.ape", "true"),
                ("train.time", "uniform"),
                ("train.loss", "cfm"),
            ],
        ],
        "reflow" => &[TRAINING, PAIRS],
        "distill" => &[TRAINING, PAIRS, &[("k", "1")]],
        "sample" => &[&[
            ("ckpt", ""),
            ("n", "16"),
            ("solver", "auto"),
            ("latents", ""),
        ]],
        "invert" => &[&[("ckpt", ""), ("input", ""), ("solver", "dopri5:1e-6")]],
        "interp" => &[&[
            ("ckpt", ""),
            ("input", ""),
            ("a", "0"),
            ("b", "1"),
            ("points", "4"),
            ("solver", "dopri5:1e-6"),
            ("sampler", "auto"),
        ]],
        "project" => &[&[
            ("input", ""),
            ("beams", "mini"),
            ("width", "128"),
            ("x_max", "80"),
        ]],
        "eval" => &[&[
            ("a", ""),
            ("b", ""),
            ("beams", "mini"),
            ("projections", "64"),
            ("perms", "200"),
            ("bev.lo", "-50"),
            ("bev.hi", "50"),
            ("bev.bins", "100"),
        ]],
        "curvature" => &[&[
            ("ckpt", ""),
            ("n", "2000"),
            ("grid", "256"),
            ("solver", "midpoint:1"),
            ("top_k", "200"),
        ]],
        _ => &[],
    };
    for block in extra {
        d.extend_from_slice(block);
    }
    d
}

pub fn run(command: &str, cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    validate(command, cfg)?;
    fs::create_dir_all(cfg.out_dir())
        .with_context(|| format!("creating output directory {}", cfg.out_dir().display()))?;
    let files = match command {
        "train" => cmd_train(cfg)?,
        "reflow" => cmd_reflow(cfg)?,
        "distill" => cmd_distill(cfg)?,
        "sample" => cmd_sample(cfg)?,
        "invert" => cmd_invert(cfg)?,
        "interp" => cmd_interp(cfg)?,
        "project" => cmd_project(cfg)?,
        "eval" => cmd_eval(cfg)?,
        "curvature" => cmd_curvature(cfg)?,
        other => return usage(format!("unknown command {other:?}")),
    };
    write_manifest(cfg, &files)?;
    info!("{command} finished in {:.2?}", started.elapsed());
    println!("config_digest {}", cfg.digest());
    Ok(())
}

/// Parses every value the command will use, before anything is written.
fn validate(command: &str, cfg: &RunConfig) -> Result<()> {
    cfg.get::<u64>("seed")?;
    match command {
        "train" => {
            if StageTag::parse(cfg.raw("stage")).ok() != Some(StageTag::OneRf) {
                return usage(format!(
                    "train produces 1-RF checkpoints; stage {:?} is not valid here (use reflow or distill)",
                    cfg.raw("stage")
                ));
            }
            train_config(cfg)?;
            cfg.get::<usize>("data.count")?;
            list_usize(cfg, "model.hidden")?;
            list_usize(cfg, "model.widths")?;
            cfg.get::<usize>("model.depth")?;
            cfg.get::<bool>("model.ape")?;
        }
        "reflow" | "distill" => {
            train_config(cfg)?;
            cfg.path("parent")?;
            cfg.get::<usize>("pairs.count")?;
            cfg.solver("pairs.solver")?;
            if command == "distill" && cfg.get::<usize>("k")? == 0 {
                return usage("k must be at least 1");
            }
        }
        "sample" => {
            cfg.path("ckpt")?;
            cfg.get::<usize>("n")?;
            sampler_setting(cfg, "solver")?;
        }
        "invert" | "interp" => {
            cfg.path("ckpt")?;
            cfg.path("input")?;
            cfg.solver("solver")?;
            if command == "interp" {
                cfg.get::<usize>("a")?;
                cfg.get::<usize>("b")?;
                cfg.get::<usize>("points")?;
                sampler_setting(cfg, "sampler")?;
            }
        }
        "project" => {
            cfg.path("input")?;
            cfg.get::<usize>("width")?;
            cfg.get::<f64>("x_max")?;
        }
        "eval" => {
            cfg.path("a")?;
            cfg.path("b")?;
            cfg.get::<usize>("projections")?;
            cfg.get::<usize>("perms")?;
            bev_grid(cfg)?;
        }
        "curvature" => {
            cfg.path("ckpt")?;
            cfg.get::<usize>("n")?;
            if cfg.get::<usize>("grid")? == 0 {
                return usage("grid must be positive");
            }
            cfg.solver("solver")?;
            cfg.get::<usize>("top_k")?;
        }
        other => return usage(format!("unknown command {other:?}")),
    }
    Ok(())
}

fn list_usize(cfg: &RunConfig, key: &str) -> Result<Vec<usize>> {
    cfg.raw(key)
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .or_else(|_| {
            usage(format!(
                "{key}: expected comma-separated integers, got {:?}",
                cfg.raw(key)
            ))
        })
}

fn width(cfg: &RunConfig) -> Result<FloatWidth> {
    match cfg.raw("ckpt.width") {
        "f64" => Ok(FloatWidth::F64),
        "f32" => Ok(FloatWidth::F32),
        other => usage(format!("ckpt.width must be f32 or f64, got {other:?}")),
    }
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let mut t = TrainConfig::one_rf();
    t.steps = cfg.get("train.steps")?;
    t.batch = cfg.get("train.batch")?;
    t.adam.lr = cfg.get("train.lr")?;
    t.lr_floor = cfg.get("train.lr_floor")?;
    t.seed = cfg.seed_for("train")?;
    t.time =
        TimeDist::parse(cfg.raw("train.time")).or_else(|e| usage(format!("train.time: {e}")))?;
    t.loss = LossKind::parse(cfg.raw("train.loss")).map_or_else(
        || {
            usage(format!(
                "train.loss: unknown loss {:?}",
                cfg.raw("train.loss")
            ))
        },
        Ok,
    )?;
    t.log_every = (t.steps / 10).max(1);
    t.validate().or_else(|e| usage(e.to_string()))?;
    width(cfg)?;
    Ok(t)
}

/// `auto` or a solver string; `auto` picks k-step Euler for distilled stages
/// and 256-step Euler otherwise.
fn sampler_setting(cfg: &RunConfig, key: &str) -> Result<Option<SolverSpec>> {
    match cfg.raw(key) {
        "auto" => Ok(None),
        _ => cfg.solver(key).map(Some),
    }
}

fn sampler_for(cfg: &RunConfig, key: &str, flow: &Flow) -> Result<SolverSpec> {
    Ok(sampler_setting(cfg, key)?
        .unwrap_or_else(|| SolverSpec::euler(flow.stage.tag.fixed_steps().unwrap_or(256))))
}

fn beams(cfg: &RunConfig) -> Result<BeamTable> {
    match cfg.raw("beams") {
        "mini" => Ok(SceneConfig::mini().beams),
        "hdl64" => Ok(BeamTable::default_64()),
        path => {
            BeamTable::load(Path::new(path)).with_context(|| format!("reading beam table {path}"))
        }
    }
}

fn load_flow(path: &Path) -> Result<(Flow, String)> {
    if !path.exists() {
        return data_err(format!("checkpoint {} does not exist", path.display()));
    }
    Flow::load(path).map_err(|e| match e {
        rectflow::Error::Config(msg) => DataError(format!("{}: {msg}", path.display())).into(),
        other => {
            anyhow::Error::from(other).context(format!("loading checkpoint {}", path.display()))
        }
    })
}

fn save_flow(cfg: &RunConfig, mut flow: Flow, log: &TrainLog) -> Result<Vec<PathBuf>> {
    flow.stage.config_digest = cfg.digest();
    let out = cfg.out_dir();
    let ckpt = out.join("model.ckpt");
    let digest = flow.save(&ckpt, width(cfg)?)?;
    let loss = out.join("loss.csv");
    fs::write(
        &loss,
        format!("# config_digest={}\n{}", cfg.digest(), log.to_csv()),
    )?;
    info!(
        "{} checkpoint {} (sha256 {digest})",
        flow.stage.tag,
        ckpt.display()
    );
    println!("checkpoint {} {digest}", ckpt.display());
    Ok(vec![ckpt, loss])
}

fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let tcfg = train_config(cfg)?;
    let count: usize = cfg.get("data.count")?;
    let data_seed = cfg.seed_for("data")?;
    let (data, model_cfg) = match cfg.raw("data") {
        "eight-gaussians" => {
            let data = EightGaussians::default().sample(count, data_seed);
            (data, mlp_config(cfg, 2)?)
        }
        "mini-lidar" => {
            let scene = SceneConfig::mini();
            let data = scene_batch(&scene, count, data_seed)?;
            (data, hourglass_config(cfg, scene.beams, scene.width)?)
        }
        path => {
            let path = Path::new(path);
            if !path.exists() {
                return data_err(format!("dataset {} does not exist", path.display()));
            }
            if has_ext(path, "csv") {
                let data = read_rows_csv(path)?;
                let d = data.shape()[1];
                (data, mlp_config(cfg, d)?)
            } else {
                let table = beams(cfg)?;
                let images = load_images(path, &table)?;
                let w = images[0].width();
                (images_to_tensor(&images)?, hourglass_config(cfg, table, w)?)
            }
        }
    };
    info!(
        "training 1-RF on {} samples of shape {:?}",
        data.shape()[0],
        &data.shape()[1..]
    );
    let model = VelocityModel::new(model_cfg, cfg.seed_for("model")?)?;
    let (flow, log) = train_1rf(model, &data, &tcfg)?;
    save_flow(cfg, flow, &log)
}

fn mlp_config(cfg: &RunConfig, dim: usize) -> Result<ModelConfig> {
    let mut m = MlpConfig::toy(dim);
    m.hidden = list_usize(cfg, "model.hidden")?;
    Ok(ModelConfig::Mlp(m))
}

fn hourglass_config(cfg: &RunConfig, beams: BeamTable, width: usize) -> Result<ModelConfig> {
    let mut h = HourglassConfig::miniature(beams, width);
    let w = list_usize(cfg, "model.widths")?;
    let [a, b] = w[..] else {
        return usage("model.widths needs two entries");
    };
    h.widths = [a, b];
    h.depth = cfg.get("model.depth")?;
    h.ape = cfg.get("model.ape")?;
    h.validate().or_else(|e| usage(e.to_string()))?;
    Ok(ModelConfig::Hourglass(h))
}

/// Loads reusable pairs or generates fresh ones from `parent`.
fn pairs_for(
    cfg: &RunConfig,
    parent: &Flow,
    parent_digest: &str,
    grid: usize,
) -> Result<(PairDataset, PathBuf)> {
    let solver = cfg.solver("pairs.solver")?;
    let count: usize = cfg.get("pairs.count")?;
    let seed = cfg.seed_for("pairs")?;
    let key = format!(
        "count={count}\nsolver={}\ngrid={grid}\nseed={seed}\nparent={parent_digest}\n",
        solver.describe()
    );
    let spec = PairSpec {
        count,
        solver,
        grid,
        seed,
        config_digest: rectflow::binio::sha256_hex(key.as_bytes()),
    };
    let path = match cfg.raw("pairs.file") {
        "" => cfg.out_dir().join("pairs.bin"),
        p => PathBuf::from(p),
    };
    if path.exists() {
        let pairs = PairDataset::load(&path)
            .with_context(|| format!("reading pair file {}", path.display()))?;
        if pairs.config_digest == spec.config_digest && pairs.parent_digest == parent_digest {
            info!(
                "reusing {} pairs from {} (digest match)",
                pairs.len(),
                path.display()
            );
            return Ok((pairs, path));
        }
        info!(
            "pair file {} was made with other settings; regenerating",
            path.display()
        );
    }
    let started = Instant::now();
    if parent.stage.tag.fixed_steps().is_some() {
        return usage(format!(
            "a {} checkpoint cannot generate pairs",
            parent.stage.tag
        ));
    }
    let pairs = pairs_from_field(&parent.model, parent_digest, &spec)?;
    let digest = pairs.save(&path)?;
    info!(
        "generated {} pairs in {:.2?} ({} skipped), sha256 {digest}",
        pairs.len(),
        started.elapsed(),
        pairs.skipped
    );
    Ok((pairs, path))
}

fn cmd_reflow(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (parent, digest) = load_flow(&cfg.path("parent")?)?;
    if parent.stage.tag != StageTag::OneRf {
        return Err(rectflow::Error::Stage(format!(
            "reflow needs a 1-RF parent, got {}",
            parent.stage.tag
        ))
        .into());
    }
    let tcfg = train_config(cfg)?;
    let (pairs, pair_path) = pairs_for(cfg, &parent, &digest, 1)?;
    let (flow, log) = train_reflow(&parent, &digest, &pairs, &tcfg)?;
    let mut files = save_flow(cfg, flow, &log)?;
    if pair_path.starts_with(cfg.out_dir()) {
        files.push(pair_path);
    }
    Ok(files)
}

fn cmd_distill(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (parent, digest) = load_flow(&cfg.path("parent")?)?;
    let k: usize = cfg.get("k")?;
    let tcfg = train_config(cfg)?;
    let (pairs, pair_path) = pairs_for(cfg, &parent, &digest, k)?;
    let (flow, log) = distill(&parent, &digest, k, &pairs, &tcfg)?;
    let mut files = save_flow(cfg, flow, &log)?;
    if pair_path.starts_with(cfg.out_dir()) {
        files.push(pair_path);
    }
    Ok(files)
}

/// Sample-shaped rows from a CSV (toy) or range images (LiDAR).
fn load_inputs(flow: &Flow, path: &Path) -> Result<Tensor> {
    let x = match flow.model.hourglass() {
        None => read_rows_csv(path)?,
        Some(h) => images_to_tensor(&load_images(path, &h.config().beams)?)?,
    };
    let shape = flow.model.sample_shape();
    if x.shape()[1..] != shape[..] {
        return data_err(format!(
            "{}: samples have shape {:?}, the checkpoint expects {:?}",
            path.display(),
            &x.shape()[1..],
            shape
        ));
    }
    Ok(x)
}

/// Flattened `[n, d]` rows from a latent CSV, reshaped to the model's sample shape.
fn load_latents(flow: &Flow, path: &Path) -> Result<Tensor> {
    let x = read_rows_csv(path)?;
    let shape = flow.model.sample_shape();
    let d: usize = shape.iter().product();
    if x.shape()[1] != d {
        return data_err(format!(
            "{}: rows have {} values, expected {d}",
            path.display(),
            x.shape()[1]
        ));
    }
    let mut full = vec![x.shape()[0]];
    full.extend(shape);
    Ok(x.reshape(full)?)
}

fn write_samples(
    cfg: &RunConfig,
    flow: &Flow,
    stem: &str,
    x: &Tensor,
    lead: Option<(&str, &[f64])>,
) -> Result<Vec<PathBuf>> {
    let out = cfg.out_dir();
    let csv = out.join(format!("{stem}.csv"));
    fs::write(&csv, rows_csv(x, &cfg.digest(), lead))?;
    let mut files = vec![csv];
    if let Some(h) = flow.model.hourglass() {
        files.extend(write_images(
            &out,
            stem,
            x,
            &h.config().beams,
            rectflow::lidar::DEFAULT_X_MAX,
        )?);
    }
    Ok(files)
}

fn cmd_sample(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (flow, _) = load_flow(&cfg.path("ckpt")?)?;
    let spec = sampler_for(cfg, "solver", &flow)?;
    let started = Instant::now();
    let batch = match cfg.raw("latents") {
        "" => sample(&flow, cfg.get("n")?, &spec, cfg.seed_for("sample")?)?,
        path => sample_from(&flow, load_latents(&flow, Path::new(path))?, &spec)?,
    };
    let n = batch.nfe.len();
    let elapsed = started.elapsed();
    for (i, nfe) in batch.nfe.iter().enumerate() {
        info!("sample {i}: nfe {nfe}");
    }
    info!(
        "{n} samples with {} in {elapsed:.2?} ({:.3} ms per sample)",
        spec.describe(),
        elapsed.as_secs_f64() * 1e3 / n.max(1) as f64
    );
    let out = cfg.out_dir();
    let mut files = write_samples(cfg, &flow, "samples", &batch.samples, None)?;
    let nfe = out.join("nfe.csv");
    let mut s = format!("# config_digest={}\nsample,nfe\n", cfg.digest());
    for (i, v) in batch.nfe.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    fs::write(&nfe, s)?;
    files.push(nfe);
    Ok(files)
}

fn cmd_invert(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (flow, _) = load_flow(&cfg.path("ckpt")?)?;
    let x1 = load_inputs(&flow, &cfg.path("input")?)?;
    let spec = cfg.solver("solver")?.reversed();
    let started = Instant::now();
    let inv = invert(&flow.model, &x1, &spec)?;
    let nfe = inv.nfe();
    info!(
        "inverted {} samples with {} in {:.2?} (mean nfe {:.1})",
        nfe.len(),
        spec.describe(),
        started.elapsed(),
        nfe.iter().sum::<usize>() as f64 / nfe.len().max(1) as f64
    );
    let path = cfg.out_dir().join("latents.csv");
    fs::write(&path, rows_csv(&inv.end, &cfg.digest(), None))?;
    Ok(vec![path])
}

fn cmd_interp(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (flow, _) = load_flow(&cfg.path("ckpt")?)?;
    let x = load_inputs(&flow, &cfg.path("input")?)?;
    let (a, b): (usize, usize) = (cfg.get("a")?, cfg.get("b")?);
    let n = x.shape()[0];
    if a >= n || b >= n {
        return data_err(format!("input has {n} samples; a={a}, b={b} out of range"));
    }
    let ends = Tensor::stack(&[
        Tensor::new(x.shape()[1..].to_vec(), x.row(a).to_vec())?,
        Tensor::new(x.shape()[1..].to_vec(), x.row(b).to_vec())?,
    ])?;
    let inv = invert(&flow.model, &ends, &cfg.solver("solver")?.reversed())?;
    let points: usize = cfg.get("points")?;
    let lambdas: Vec<f64> = (0..points + 2)
        .map(|i| i as f64 / (points + 1) as f64)
        .collect();
    let mut chain = Vec::with_capacity(lambdas.len());
    for &l in &lambdas {
        let z = slerp(inv.end.row(0), inv.end.row(1), l)?;
        chain.push(Tensor::new(x.shape()[1..].to_vec(), z)?);
    }
    let z = Tensor::stack(&chain)?;
    let spec = sampler_for(cfg, "sampler", &flow)?;
    let gen = sample_from(&flow, z.clone(), &spec)?;
    info!(
        "interpolated {} points with {}",
        lambdas.len(),
        spec.describe()
    );
    let out = cfg.out_dir();
    let latents = out.join("interp_latents.csv");
    fs::write(
        &latents,
        rows_csv(&z, &cfg.digest(), Some(("lambda", &lambdas))),
    )?;
    let mut files = vec![latents];
    files.extend(write_samples(
        cfg,
        &flow,
        "interp",
        &gen.samples,
        Some(("lambda", &lambdas)),
    )?);
    Ok(files)
}

fn cmd_project(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let input = cfg.path("input")?;
    let table = beams(cfg)?;
    if !input.exists() {
        return data_err(format!("{} does not exist", input.display()));
    }
    // a directory converts its point clouds if it has any, else its range images
    let files = if input.is_dir() {
        list_files(&input, "bin").or_else(|_| list_files(&input, "rimg"))?
    } else {
        vec![input]
    };
    files.iter().map(|f| project_file(cfg, f, &table)).collect()
}

fn project_file(cfg: &RunConfig, input: &Path, table: &BeamTable) -> Result<PathBuf> {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scan".into());
    let out = cfg.out_dir();
    if has_ext(input, "rimg") {
        let img = RangeImage::load(input, table)
            .with_context(|| format!("reading {}", input.display()))?;
        let cloud = img.unproject(&LogCodec::new(img.x_max()));
        let path = out.join(format!("{stem}.bin"));
        cloud.save(&path)?;
        info!(
            "{}: unprojected {} valid pixels",
            input.display(),
            img.valid_pixels()
        );
        Ok(path)
    } else {
        let cloud =
            PointCloud::load(input).with_context(|| format!("reading {}", input.display()))?;
        let codec = LogCodec::new(cfg.get("x_max")?);
        let img = RangeImage::project(&cloud, table, cfg.get("width")?, &codec)?;
        if codec.clamped() > 0 {
            log::warn!("{} ranges beyond x_max were clamped", codec.clamped());
        }
        let path = out.join(format!("{stem}.rimg"));
        img.save(&path)?;
        info!(
            "{}: projected {} points onto {} valid pixels",
            input.display(),
            cloud.len(),
            img.valid_pixels()
        );
        Ok(path)
    }
}

fn bev_grid(cfg: &RunConfig) -> Result<BevGrid> {
    let g = BevGrid {
        lo: cfg.get("bev.lo")?,
        hi: cfg.get("bev.hi")?,
        bins: cfg.get("bev.bins")?,
    };
    g.validate().or_else(|e| usage(e.to_string()))?;
    Ok(g)
}

fn cmd_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (pa, pb) = (cfg.path("a")?, cfg.path("b")?);
    let digest = cfg.digest();
    let mut report = MetricReport::default();
    let seed = cfg.seed_for("eval")?;
    if has_ext(&pa, "csv") != has_ext(&pb, "csv") {
        return usage("a and b must both be CSV sample sets or both LiDAR sets");
    }
    if has_ext(&pa, "csv") {
        let (a, b) = (read_rows_csv(&pa)?, read_rows_csv(&pb)?);
        if a.shape()[1] != b.shape()[1] {
            return data_err(format!(
                "sample dimensions differ: {} vs {}",
                a.shape()[1],
                b.shape()[1]
            ));
        }
        report.push(
            "sliced_w2",
            sliced_w2(&a, &b, cfg.get("projections")?, seed)?,
            &digest,
        );
        let (ra, rb) = (rows(&a), rows(&b));
        point_set_metrics(&mut report, &ra, &rb, cfg, seed, &digest)?;
    } else {
        let table = beams(cfg)?;
        let grid = bev_grid(cfg)?;
        let hist = |p: &Path| -> Result<Vec<BevHistogram>> {
            load_clouds(p, &table)?
                .iter()
                .map(|c| BevHistogram::from_points(c.xy(), grid).map_err(Into::into))
                .collect()
        };
        let (ha, hb) = (hist(&pa)?, hist(&pb)?);
        report.push(
            "jsd_bev",
            jsd(&BevHistogram::mean(&ha)?, &BevHistogram::mean(&hb)?)?,
            &digest,
        );
        let ra: Vec<Vec<f64>> = ha.into_iter().map(|h| h.mass).collect();
        let rb: Vec<Vec<f64>> = hb.into_iter().map(|h| h.mass).collect();
        point_set_metrics(&mut report, &ra, &rb, cfg, seed, &digest)?;
    }
    for r in &report.rows {
        info!("{} = {:e} (scaled {:e})", r.metric, r.value, r.scaled);
    }
    let path = cfg.out_dir().join("metrics.csv");
    fs::write(&path, report.to_csv())?;
    Ok(vec![path])
}

fn rows(x: &Tensor) -> Vec<Vec<f64>> {
    (0..x.shape()[0]).map(|i| x.row(i).to_vec()).collect()
}

fn point_set_metrics(
    report: &mut MetricReport,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    cfg: &RunConfig,
    seed: u64,
    digest: &str,
) -> Result<()> {
    if a.len() >= 2 && b.len() >= 2 {
        report.push("mmd2_unbiased", mmd2_unbiased(a, b, None)?.value, digest);
    }
    report.push("mmd2_biased", mmd2_biased(a, b, None)?.value, digest);
    let perms: usize = cfg.get("perms")?;
    if perms > 0 && a.len() >= 2 && b.len() >= 2 {
        let test = mmd_permutation_test(a, b, perms, None, seed)?;
        report.push("perm_p_value", test.p_value, digest);
        report.push("perm_z_score", test.z_score(), digest);
    }
    Ok(())
}

fn cmd_curvature(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (flow, _) = load_flow(&cfg.path("ckpt")?)?;
    let n: usize = cfg.get("n")?;
    let spec = cfg.solver("solver")?;
    if let Method::Dopri5 { .. } = spec.method {
        info!("adaptive curvature integration; expect many evaluations");
    }
    let x0 = standard_normal(
        n,
        &flow.model.sample_shape(),
        &mut rectflow::random::rng(cfg.seed_for("curvature")?),
    );
    let started = Instant::now();
    let prof = curvature(
        &flow.model,
        &x0,
        &spec,
        &midpoint_grid(cfg.get("grid")?),
        cfg.get("top_k")?,
    )?;
    info!(
        "curvature of {} trajectories in {:.2?}: mean integral {:e} ({} failed)",
        prof.integrals.len(),
        started.elapsed(),
        prof.mean_integral(),
        prof.failed
    );
    println!("mean_integral {:e}", prof.mean_integral());
    let out = cfg.out_dir();
    let head = format!("# config_digest={}\n", cfg.digest());
    let profile = out.join("curvature.csv");
    fs::write(&profile, format!("{head}{}", prof.to_csv()))?;
    let top = out.join("curvature_top.csv");
    fs::write(&top, format!("{head}{}", prof.top_csv()))?;
    Ok(vec![profile, top])
}
