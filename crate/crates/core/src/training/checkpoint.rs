use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::callbacks::{EarlyStopping, ReduceLrOnPlateau};
use super::optim::AdamState;
use super::trainer::{EpochRecord, TrainingConfig};
use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::models::{CaptionModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything besides tensors needed to resume training exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Last completed epoch (1-based).
    pub epoch: usize,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub history: Vec<EpochRecord>,
    /// Learning rate the next epoch will use.
    pub lr: f64,
    pub plateau: ReduceLrOnPlateau,
    pub early_stop: EarlyStopping,
    pub adam_step: u64,
    pub stopped: bool,
    /// Token list by id, when the run knew its vocabulary.
    pub vocab: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: CaptionModel,
    pub adam: AdamState,
    pub meta: CheckpointMeta,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_records(out: &mut Vec<u8>, set: &ParamSet, prefix: &str) -> Result<()> {
    put_u32(out, set.len())?;
    for (name, t) in set.iter() {
        let name = format!("{prefix}{name}");
        put_u32(out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(out, t.rank())?;
        for &e in t.shape() {
            put_u32(out, e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(Error::Truncated {
                what,
                expected: n,
                actual: left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn records(&mut self, prefix: &str) -> Result<ParamSet> {
        let n = self.u32("checkpoint record count")?;
        let mut set = ParamSet::new();
        for _ in 0..n {
            let len = self.u32("checkpoint record name")?;
            let raw = self.take(len, "checkpoint record name")?;
            let name = std::str::from_utf8(raw).map_err(|_| Error::Malformed {
                what: "checkpoint",
                detail: "record name is not UTF-8".into(),
            })?;
            let name = name.strip_prefix(prefix).ok_or_else(|| Error::Malformed {
                what: "checkpoint",
                detail: format!("record {name:?} lacks prefix {prefix:?}"),
            })?;
            let rank = self.u32("checkpoint record rank")?;
            let shape = (0..rank)
                .map(|_| self.u32("checkpoint record extents"))
                .collect::<Result<Vec<_>>>()?;
            let count = shape.iter().product::<usize>();
            let left = (self.bytes.len() - self.pos) / 8;
            if count > left {
                return Err(Error::Truncated {
                    what: "checkpoint tensor",
                    expected: count,
                    actual: left,
                });
            }
            let data = self
                .take(count * 8, "checkpoint tensor")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Malformed {
                what: "checkpoint",
                detail: format!("{name}: {e}"),
            })?;
            set.insert(name, t)?;
        }
        Ok(set)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_records(&mut out, self.model.params(), "")?;
        let mut moments = ParamSet::new();
        for (n, t) in self.adam.m.iter() {
            moments.insert(format!("m/{n}"), t.clone())?;
        }
        for (n, t) in self.adam.v.iter() {
            moments.insert(format!("v/{n}"), t.clone())?;
        }
        put_records(&mut out, &moments, "")?;
        let mut meta = self.meta.clone();
        meta.adam_step = self.adam.t;
        out.extend_from_slice(serde_json::to_string(&meta)?.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "checkpoint header")? != CHECKPOINT_MAGIC {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: "bad magic bytes".into(),
            });
        }
        let version = r.u32("checkpoint header")?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("unsupported version {version}"),
            });
        }
        let params = r.records("")?;
        let moments = r.records("")?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&bytes[r.pos..]).map_err(|e| Error::Malformed {
                what: "checkpoint metadata",
                detail: e.to_string(),
            })?;
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        for (name, t) in moments.iter() {
            match name.split_once('/') {
                Some(("m", rest)) => m.insert(rest, t.clone())?,
                Some(("v", rest)) => v.insert(rest, t.clone())?,
                _ => {
                    return Err(Error::Malformed {
                        what: "checkpoint",
                        detail: format!("unexpected optimizer record {name:?}"),
                    })
                }
            }
        }
        let model = CaptionModel::from_parts(meta.model.clone(), params)?;
        for set in [&m, &v] {
            if set.len() != model.params().len()
                || model
                    .params()
                    .iter()
                    .any(|(n, t)| set.get(n).map(Tensor::shape) != Some(t.shape()))
            {
                return Err(Error::Malformed {
                    what: "checkpoint",
                    detail: "optimizer moments do not mirror the parameters".into(),
                });
            }
        }
        Ok(Self {
            model,
            adam: AdamState {
                m,
                v,
                t: meta.adam_step,
            },
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

/// `epoch_003.ckpt`
pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Parses the epoch back out of [`checkpoint_file_name`].
pub fn epoch_of_file_name(name: &str) -> Option<usize> {
    name.strip_prefix("epoch_")?.strip_suffix(".ckpt")?.parse().ok()
}
