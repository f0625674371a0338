use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::binio::sha256_hex;
use crate::error::{Error, Result};
use crate::nn::VelocityModel;
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint, FloatWidth};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageTag {
    OneRf,
    TwoRf,
    /// k-step timestep distillation.
    Distilled {
        k: usize,
    },
}

impl StageTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "1-RF" => Ok(StageTag::OneRf),
            "2-RF" => Ok(StageTag::TwoRf),
            _ => s
                .strip_suffix("-TD")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .map(|k| StageTag::Distilled { k })
                .ok_or_else(|| Error::Config(format!("unknown stage tag {s:?}"))),
        }
    }

    /// Fixed sampling step count, if the stage mandates one.
    pub fn fixed_steps(self) -> Option<usize> {
        match self {
            StageTag::Distilled { k } => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageTag::OneRf => write!(f, "1-RF"),
            StageTag::TwoRf => write!(f, "2-RF"),
            StageTag::Distilled { k } => write!(f, "{k}-TD"),
        }
    }
}

/// Reference to the checkpoint a stage was trained from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParentRef {
    pub tag: StageTag,
    /// SHA-256 of the parent checkpoint file.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowStage {
    pub tag: StageTag,
    pub parent: Option<ParentRef>,
    /// SHA-256 of the training configuration.
    pub config_digest: String,
}

impl FlowStage {
    pub fn new(
        tag: StageTag,
        parent: Option<ParentRef>,
        config_digest: impl Into<String>,
    ) -> Result<Self> {
        let stage = Self {
            tag,
            parent,
            config_digest: config_digest.into(),
        };
        stage.validate()?;
        Ok(stage)
    }

    pub fn validate(&self) -> Result<()> {
        let parent = self.parent.as_ref().map(|p| p.tag);
        match (self.tag, parent) {
            (StageTag::OneRf, None) => Ok(()),
            (StageTag::OneRf, Some(_)) => Err(Error::Stage(
                "1-RF is trained from scratch and has no parent".into(),
            )),
            (StageTag::TwoRf, Some(StageTag::OneRf)) => Ok(()),
            (StageTag::TwoRf, p) => Err(Error::Stage(format!(
                "2-RF must reference a 1-RF parent, found {}",
                p.map_or("none".to_string(), |t| t.to_string())
            ))),
            (StageTag::Distilled { k: 0 }, _) => {
                Err(Error::Stage("distillation needs k >= 1".into()))
            }
            (StageTag::Distilled { .. }, Some(StageTag::OneRf | StageTag::TwoRf)) => Ok(()),
            (StageTag::Distilled { .. }, p) => Err(Error::Stage(format!(
                "k-TD must reference a 2-RF or 1-RF parent, found {}",
                p.map_or("none".to_string(), |t| t.to_string())
            ))),
        }
    }

    /// Training timesteps of a distilled stage: `{0, 1/k, …, (k−1)/k}`.
    pub fn grid(&self) -> Option<Vec<f64>> {
        self.tag.fixed_steps().map(step_grid)
    }

    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("stage.tag".into(), self.tag.to_string());
        m.insert("stage.config_digest".into(), self.config_digest.clone());
        if let Some(p) = &self.parent {
            m.insert("stage.parent_tag".into(), p.tag.to_string());
            m.insert("stage.parent_digest".into(), p.digest.clone());
        }
        if let Some(g) = self.grid() {
            let g: Vec<String> = g.iter().map(|t| t.to_string()).collect();
            m.insert("stage.grid".into(), g.join(","));
        }
        m
    }

    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| meta.get(k).map(String::as_str);
        let tag = StageTag::parse(
            get("stage.tag")
                .ok_or_else(|| Error::Config("checkpoint metadata lacks stage.tag".into()))?,
        )?;
        let parent = match (get("stage.parent_tag"), get("stage.parent_digest")) {
            (Some(t), Some(d)) => Some(ParentRef {
                tag: StageTag::parse(t)?,
                digest: d.to_string(),
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "incomplete parent reference in checkpoint".into(),
                ))
            }
        };
        Self::new(tag, parent, get("stage.config_digest").unwrap_or_default())
    }
}

/// `{0, 1/k, …, (k−1)/k}`.
pub fn step_grid(k: usize) -> Vec<f64> {
    (0..k).map(|j| j as f64 / k as f64).collect()
}

/// A velocity model together with the training stage that produced it.
#[derive(Clone, Debug)]
pub struct Flow {
    pub model: VelocityModel,
    pub stage: FlowStage,
}

impl Flow {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut metadata = self.model.metadata();
        metadata.extend(self.stage.metadata());
        Checkpoint {
            tensors: self.model.params().to_named(),
            metadata,
        }
    }

    pub fn encode(&self, width: FloatWidth) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &self.to_checkpoint(), width)?;
        Ok(buf)
    }

    /// SHA-256 of the encoded checkpoint; this is what children record as
    /// their parent digest.
    pub fn digest(&self, width: FloatWidth) -> Result<String> {
        Ok(sha256_hex(&self.encode(width)?))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let ckpt = read_checkpoint(bytes)?;
        let model = VelocityModel::from_parts(&ckpt.metadata, &ckpt.tensors)?;
        let stage = FlowStage::from_metadata(&ckpt.metadata)?;
        Ok(Self { model, stage })
    }

    /// Writes the checkpoint and returns its digest.
    pub fn save(&self, path: &Path, width: FloatWidth) -> Result<String> {
        let bytes = self.encode(width)?;
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// Loads a checkpoint and returns it with its digest.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path)?;
        Ok((Self::decode(&bytes)?, sha256_hex(&bytes)))
    }

    pub fn parent_ref(&self, width: FloatWidth) -> Result<ParentRef> {
        Ok(ParentRef {
            tag: self.stage.tag,
            digest: self.digest(width)?,
        })
    }
}
