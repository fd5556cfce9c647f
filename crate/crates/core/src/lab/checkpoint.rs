//! Binary checkpoint container.
//!
//! ```text
//! "DAMA"  u32 version
//! u64 len, config (TOML)
//! u64 len, model metadata (TOML)
//! u64 len, vocabulary (one regular token per line)
//! u32 tensor count
//!   u32 name len, name, u32 rank, rank × u64 dims, f64 values
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::lab::config::ExperimentConfig;
use crate::lab::train::EpochLog;
use crate::net::{DamNet, NetConfig};
use crate::numerics::{RngStream, Tensor};
use crate::xlstm::ForgetMode;

pub const MAGIC: &[u8; 4] = b"DAMA";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub net: DamNet,
    pub vocab: Vocab,
    pub domains: Vec<String>,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    gamma: f64,
    dropout: f64,
    forget_mode: String,
    domains: Vec<String>,
    log: Vec<LogEntry>,
}

#[derive(Serialize, Deserialize)]
struct LogEntry {
    epoch: usize,
    loss: f64,
    sentiment_loss: f64,
    domain_loss: f64,
    val_accuracy: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            gamma: self.net.gamma,
            dropout: self.net.dropout_p,
            forget_mode: self.net.xlstm_d.forget_mode.as_str().to_string(),
            domains: self.domains.clone(),
            log: self
                .log
                .iter()
                .map(|l| LogEntry {
                    epoch: l.epoch,
                    loss: l.loss,
                    sentiment_loss: l.sentiment_loss,
                    domain_loss: l.domain_loss,
                    val_accuracy: l.val_accuracy,
                })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for text in [
            self.config.to_toml(),
            toml::to_string(&meta).expect("metadata serializes"),
            self.vocab.regular_tokens().join("\n"),
        ] {
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        let tensors = self.net.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.err_at(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_at(4, &format!("unsupported version {version}")));
        }
        let cfg_at = r.pos;
        let config = ExperimentConfig::from_toml(&r.text()?).map_err(|e| r.err_at(cfg_at, &e.to_string()))?;
        let meta_at = r.pos;
        let meta: Meta = toml::from_str(&r.text()?).map_err(|e| r.err_at(meta_at, &e.to_string()))?;
        let vocab_at = r.pos;
        let vocab_text = r.text()?;
        let tokens = vocab_text.lines().filter(|l| !l.is_empty()).map(str::to_string);
        let vocab = Vocab::from_tokens(tokens, config.data.min_freq).map_err(|e| r.err_at(vocab_at, &e.to_string()))?;

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.err_at(at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.err_at(at, "tensor too large"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((at, name, Tensor::new(shape, data).map_err(|e| r.err_at(at, &e.to_string()))?));
        }
        if r.pos != bytes.len() {
            return Err(r.err_at(r.pos, "trailing bytes"));
        }

        let find = |name: &str| tensors.iter().find(|t| t.1 == name).map(|t| &t.2);
        let shape_of = |name: &str, axis: usize| -> Result<usize> {
            find(name)
                .and_then(|t| t.shape().get(axis).copied())
                .ok_or_else(|| Error::Checkpoint {
                    offset: bytes.len(),
                    msg: format!("missing tensor `{name}`"),
                })
        };
        let forget_mode: ForgetMode = meta.forget_mode.parse().map_err(|e: Error| r.err_at(meta_at, &e.to_string()))?;
        let net_cfg = NetConfig {
            vocab_size: shape_of("embedding", 0)?,
            embed_dim: shape_of("embedding", 1)?,
            hidden_dim: shape_of("xlstm_d.r_z", 0)?,
            proj_dim: shape_of("proj_d.w", 1)?,
            num_domains: shape_of("head_d.w", 1)?,
            forget_mode,
            embed_init_scale: 0.1,
        };
        if net_cfg.vocab_size != vocab.len() {
            return Err(r.err_at(vocab_at, "vocabulary size does not match the embedding table"));
        }
        let mut net = DamNet::new(&net_cfg, meta.gamma, meta.dropout, &RngStream::new(0))
            .map_err(|e| r.err_at(meta_at, &e.to_string()))?;
        let expected = net.tensors().len();
        if count != expected {
            return Err(r.err_at(bytes.len(), &format!("expected {expected} tensors, found {count}")));
        }
        for (name, slot) in net.tensors_mut() {
            let Some((at, _, t)) = tensors.iter().find(|t| t.1 == name) else {
                return Err(r.err_at(bytes.len(), &format!("missing tensor `{name}`")));
            };
            if t.shape() != slot.shape() {
                return Err(r.err_at(*at, &format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t.clone();
        }
        Ok(Checkpoint {
            config,
            net,
            vocab,
            domains: meta.domains,
            log: meta
                .log
                .into_iter()
                .map(|l| EpochLog {
                    epoch: l.epoch,
                    loss: l.loss,
                    sentiment_loss: l.sentiment_loss,
                    domain_loss: l.domain_loss,
                    val_accuracy: l.val_accuracy,
                })
                .collect(),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err_at(&self, offset: usize, msg: &str) -> Error {
        Error::Checkpoint {
            offset,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err_at(self.pos, &format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<String> {
        let at = self.pos;
        let len = usize::try_from(self.u64()?).map_err(|_| self.err_at(at, "section too large"))?;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err_at(at, "section is not UTF-8"))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
