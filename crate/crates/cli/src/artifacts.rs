//! Sample-set files and run manifests.
//!
//! Toy sample sets are CSV: an optional `# config_digest=<hex>` line, a header
//! row, then one sample per row. LiDAR sample sets are range-image files
//! (`.rimg`) or point-cloud files (`.bin`), given singly or as a directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rectflow::binio::sha256_hex;
use rectflow::lidar::{BeamTable, LogCodec, PointCloud, RangeImage};
use rectflow::Tensor;

use crate::config::RunConfig;

/// Malformed or missing input data.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

pub fn data_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DataError(msg.into()).into())
}

/// Rows of `x: [n, ...]`, flattened, with columns `prefix0, prefix1, ..`.
pub fn rows_csv(x: &Tensor, digest: &str, lead: Option<(&str, &[f64])>) -> String {
    let n = x.shape().first().copied().unwrap_or(0);
    let d = x.len().checked_div(n).unwrap_or(0);
    let mut s = format!("# config_digest={digest}\n");
    let mut cols: Vec<String> = lead.iter().map(|(name, _)| name.to_string()).collect();
    cols.extend((0..d).map(|j| format!("x{j}")));
    s.push_str(&cols.join(","));
    s.push('\n');
    for i in 0..n {
        let mut fields: Vec<String> = lead.iter().map(|(_, v)| format!("{:?}", v[i])).collect();
        fields.extend(
            x.data()[i * d..(i + 1) * d]
                .iter()
                .map(|v| format!("{v:?}")),
        );
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

/// Inverse of [`rows_csv`] without leading columns; returns `[n, d]`.
pub fn read_rows_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return data_err(format!("{}: no header row", path.display()));
    };
    let d = header.split(',').count();
    let mut data = Vec::new();
    let mut n = 0;
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return data_err(format!(
                "{}:{}: expected {d} fields, found {}",
                path.display(),
                i + 1,
                fields.len()
            ));
        }
        for f in fields {
            match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => return data_err(format!("{}:{}: bad value {f:?}", path.display(), i + 1)),
            }
        }
        n += 1;
    }
    Ok(Tensor::new(vec![n, d], data)?)
}

/// Files with extension `ext` under `path` (sorted), or `path` itself.
pub fn list_files(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return data_err(format!("{} does not exist", path.display()));
    }
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    if files.is_empty() {
        return data_err(format!("no .{ext} files in {}", path.display()));
    }
    Ok(files)
}

pub fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e == ext)
}

/// Range images from a `.rimg` file or a directory of them.
pub fn load_images(path: &Path, beams: &BeamTable) -> Result<Vec<RangeImage>> {
    list_files(path, "rimg")?
        .iter()
        .map(|f| RangeImage::load(f, beams).with_context(|| format!("reading {}", f.display())))
        .collect()
}

/// Stacks model-space images into `[n, 2, H, W]`.
pub fn images_to_tensor(images: &[RangeImage]) -> Result<Tensor> {
    let ms: Vec<Tensor> = images.iter().map(RangeImage::to_model_space).collect();
    Ok(Tensor::stack(&ms)?)
}

/// Point clouds from `.bin` files, or unprojected from `.rimg` files.
pub fn load_clouds(path: &Path, beams: &BeamTable) -> Result<Vec<PointCloud>> {
    let rimg = has_ext(path, "rimg") || (path.is_dir() && list_files(path, "rimg").is_ok());
    if rimg {
        return Ok(load_images(path, beams)?
            .iter()
            .map(|img| img.unproject(&LogCodec::new(img.x_max())))
            .collect());
    }
    list_files(path, "bin")?
        .iter()
        .map(|f| PointCloud::load(f).with_context(|| format!("reading {}", f.display())))
        .collect()
}

/// Writes each model-space sample `[2, H, W]` as `<stem>_NNNN.rimg` plus its
/// unprojected `<stem>_NNNN.bin`.
pub fn write_images(
    out: &Path,
    stem: &str,
    x: &Tensor,
    beams: &BeamTable,
    x_max: f64,
) -> Result<Vec<PathBuf>> {
    let codec = LogCodec::new(x_max);
    let mut files = Vec::new();
    for (i, m) in x.unstack().iter().enumerate() {
        let img = RangeImage::from_model_space(m, beams, x_max)?;
        let rimg = out.join(format!("{stem}_{i:04}.rimg"));
        img.save(&rimg)?;
        let bin = out.join(format!("{stem}_{i:04}.bin"));
        img.unproject(&codec).save(&bin)?;
        files.push(rimg);
        files.push(bin);
    }
    if codec.clamped() > 0 {
        log::warn!("{} decoded ranges were clamped", codec.clamped());
    }
    Ok(files)
}

/// Writes `manifest.txt`: the config digest, the resolved config and the
/// SHA-256 of every produced file.
pub fn write_manifest(cfg: &RunConfig, files: &[PathBuf]) -> Result<()> {
    let out = cfg.out_dir();
    let mut s = format!("config_digest={}\n", cfg.digest());
    for line in cfg.canonical().lines() {
        let _ = writeln!(s, "config.{line}");
    }
    for f in files {
        let bytes = fs::read(f)?;
        let name = f.strip_prefix(&out).unwrap_or(f);
        let _ = writeln!(s, "file.{}={}", name.display(), sha256_hex(&bytes));
    }
    fs::write(out.join("manifest.txt"), s)?;
    Ok(())
}
