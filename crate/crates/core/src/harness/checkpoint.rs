//! Binary checkpoint: model parameters, run config and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSAD"  u32 version
//! u32 len, config text (key = value lines)
//! u64 epochs completed
//! u32 tensor count, then per tensor:
//!     u32 name len, name, u32 rank, u64 dims[rank], f64 values
//! u8 has_optimizer, and if 1:
//!     u64 step, then m and v payloads per tensor in table order
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::optim::Adam;
use crate::model::Model;
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"MSAD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, epochs_completed: usize, model: &Model, adam: Option<&Adam>) -> Self {
        Self {
            config: config.clone(),
            epochs_completed,
            tensors: model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            optimizer: adam.map(|a| OptimizerState {
                step: a.t,
                m: a.m.clone(),
                v: a.v.clone(),
            }),
        }
    }

    /// Rebuilds the model (and optimizer, if saved) from the stored values.
    pub fn restore(&self) -> Result<(Model, Option<Adam>)> {
        let mut model = Model::new(self.config.model.clone(), self.config.seed)?;
        if model.store.len() != self.tensors.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                model.store.len()
            )));
        }
        for (param, (name, value)) in model.store.iter_mut().zip(&self.tensors) {
            if &param.name != name || param.value.shape() != value.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor `{name}` {:?} does not match parameter `{}` {:?}",
                    value.shape(),
                    param.name,
                    param.value.shape()
                )));
            }
            param.value = value.clone();
        }
        let adam = self.optimizer.as_ref().map(|o| {
            let mut adam = Adam::new(&model.store, self.config.learning_rate);
            adam.t = o.step;
            adam.m = o.m.clone();
            adam.v = o.v.clone();
            adam
        });
        Ok((model, adam))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.epochs_completed as u64).to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_values(&mut out, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                for (m, v) in o.m.iter().zip(&o.v) {
                    put_values(&mut out, m);
                    put_values(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::CorruptCheckpoint("config is not UTF-8".into()))?;
        let config = TrainConfig::parse(text)
            .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let epochs_completed = r.u64()? as usize;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let t = r.tensor(&shape)?;
            tensors.push((name, t));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(tensors.len());
                let mut v = Vec::with_capacity(tensors.len());
                for (_, t) in &tensors {
                    m.push(r.tensor(t.shape())?);
                    v.push(r.tensor(t.shape())?);
                }
                Some(OptimizerState { step, m, v })
            }
            flag => return Err(Error::CorruptCheckpoint(format!("bad optimizer flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config,
            epochs_completed,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_values(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("shape {shape:?} overflows")))?;
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("shape {shape:?} overflows")))?;
        let raw = self.take(bytes)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(
            "image_size = 16\npatch_size = 4\nembed_dim = 8\nencoder_heads = 2\ntpca_heads = 2\n\
             vision_depth = 1\ntext_depth = 1\nprompt_len = 10\nlearnable_tokens = 2\ndecoder_hidden = 4",
        )
        .unwrap();
        cfg
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let cfg = tiny();
        let model = Model::new(cfg.model.clone(), cfg.seed).unwrap();
        let mut adam = Adam::new(&model.store, cfg.learning_rate);
        adam.t = 3;
        adam.m[0].fill(0.25);
        let ck = Checkpoint::capture(&cfg, 2, &model, Some(&adam));
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let (restored, opt) = back.restore().unwrap();
        assert_eq!(restored.store, model.store);
        assert_eq!(opt.unwrap(), adam);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = tiny();
        let model = Model::new(cfg.model.clone(), cfg.seed).unwrap();
        let bytes = Checkpoint::capture(&cfg, 0, &model, None).to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::CorruptCheckpoint(_))));
        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&newer),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
