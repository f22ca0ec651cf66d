//! Self-describing checkpoint file: magic, version, a length-prefixed JSON
//! header naming every section, then raw little-endian f32 blobs.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Parameters;
use crate::objectives::ObjectiveKind;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MRPTCKPT";
const VERSION: u32 = 1;

/// Training phase that produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Shared-embedding pre-training on raw code.
    Mapt,
    /// Continued training on docstring/code pairs.
    Mrpt,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Mapt => "mapt",
            Phase::Mrpt => "mrpt",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mapt" => Ok(Phase::Mapt),
            "mrpt" => Ok(Phase::Mrpt),
            other => Err(Error::Config(format!("unknown phase `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    pub step: u64,
    pub total_steps: u64,
    pub objective: Option<ObjectiveKind>,
    pub seed: u64,
    /// Mean training loss of the last completed step.
    pub last_loss: Option<f64>,
    pub config_hash: Option<String>,
}

/// Adam state carried in a checkpoint so training can resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Parameters<f32>,
    pub v: Parameters<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub meta: CheckpointMeta,
    /// Tokenizer the model was trained with.
    pub vocabulary: Option<serde_json::Value>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct Section {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    vocabulary: Option<serde_json::Value>,
    optimizer_step: Option<u64>,
    sections: Vec<Section>,
}

fn sections_of(prefix: &str, p: &Parameters<f32>, sections: &mut Vec<Section>, blob: &mut Vec<u8>) {
    for (name, data, shape) in p.tensors() {
        sections.push(Section {
            name: format!("{prefix}{name}"),
            shape,
        });
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sections = Vec::new();
        let mut blob = Vec::new();
        sections_of("", &self.params, &mut sections, &mut blob);
        if let Some(opt) = &self.optimizer {
            sections_of("adam_m.", &opt.m, &mut sections, &mut blob);
            sections_of("adam_v.", &opt.v, &mut sections, &mut blob);
        }
        let header = Header {
            config: self.params.config.clone(),
            meta: self.meta.clone(),
            vocabulary: self.vocabulary.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            sections,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(blob.len() + header.len() + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        let tmp = path.with_extension("tmp");
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let mut offset = header_end;
        let mut sections = header.sections.iter();
        let mut read_into = |p: &mut Parameters<f32>, prefix: &str| -> Result<()> {
            let names: Vec<(String, Vec<usize>)> = p.tensors().into_iter().map(|(n, _, s)| (n, s)).collect();
            for ((name, shape), dst) in names.into_iter().zip(p.tensors_mut()) {
                let section = sections.next().ok_or_else(|| bad("missing section"))?;
                if section.name != format!("{prefix}{name}") || section.shape != shape {
                    return Err(bad(&format!("unexpected section {} {:?}", section.name, section.shape)));
                }
                let end = offset + 4 * dst.len();
                let raw = bytes.get(offset..end).ok_or_else(|| bad("truncated tensor data"))?;
                for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
                    *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
                }
                offset = end;
            }
            Ok(())
        };
        let mut params = Parameters::<f32>::zeros(&header.config)?;
        read_into(&mut params, "")?;
        let optimizer = match header.optimizer_step {
            Some(step) => {
                let mut m = params.zeros_like();
                let mut v = params.zeros_like();
                read_into(&mut m, "adam_m.")?;
                read_into(&mut v, "adam_v.")?;
                Some(OptimizerState { step, m, v })
            }
            None => None,
        };
        if offset != bytes.len() {
            return Err(bad("trailing bytes after the last section"));
        }
        Ok(Checkpoint {
            params,
            meta: header.meta,
            vocabulary: header.vocabulary,
            optimizer,
        })
    }

    /// Checkpoint file name for a phase and step.
    pub fn file_name(phase: Phase, step: u64) -> String {
        format!("ckpt_{phase}_{step}")
    }
}
