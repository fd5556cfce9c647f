//! Experiment configuration.
//!
//! Files are TOML: `key = value` lines grouped under `[data]`, `[synth]`,
//! `[model]`, `[train]` and `[stage2]`. Missing keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::error::{Error, Result};
use crate::layers::AdamConfig;
use crate::modulation::ModulationConfig;
use crate::net::NetConfig;
use crate::xlstm::ForgetMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus directory; synthetic data is generated when unset.
    pub dir: Option<PathBuf>,
    /// Domain names to load; all `*.task.train` files when empty.
    pub domains: Vec<String>,
    pub label_last: bool,
    pub val_ratio: f64,
    pub max_len: usize,
    pub min_freq: usize,
    /// Optional `token v1 .. vN` pretrained vectors.
    pub vectors: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            domains: Vec::new(),
            label_last: false,
            val_ratio: 0.2,
            max_len: 64,
            min_freq: 1,
            vectors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub domains: usize,
    /// One value per domain; spread evenly over `[0, 0.9]` when empty.
    pub utility: Vec<f64>,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub marker_rate: f64,
    pub topic_rate: f64,
    pub polar_words: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::new(4, vec![]);
        SynthConfig {
            domains: 4,
            utility: vec![],
            vocab_size: s.vocab_size,
            seq_len: s.seq_len,
            n_train: s.n_train,
            n_val: s.n_val,
            n_test: s.n_test,
            marker_rate: s.marker_rate,
            topic_rate: s.topic_rate,
            polar_words: s.polar_words,
        }
    }
}

/// Evenly spaced utilities `0, …, 0.9`.
pub fn default_utility(domains: usize) -> Vec<f64> {
    match domains {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n).map(|j| round_grid(0.9 * j as f64 / (n - 1) as f64)).collect(),
    }
}

impl SynthConfig {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            num_domains: self.domains,
            vocab_size: self.vocab_size,
            seq_len: self.seq_len,
            n_train: self.n_train,
            n_val: self.n_val,
            n_test: self.n_test,
            domain_utility: if self.utility.is_empty() { default_utility(self.domains) } else { self.utility.clone() },
            marker_rate: self.marker_rate,
            topic_rate: self.topic_rate,
            polar_words: self.polar_words,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub forget_mode: String,
    pub embed_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            hidden_dim: 32,
            proj_dim: 16,
            forget_mode: ForgetMode::Sigmoid.as_str().to_string(),
            embed_init_scale: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn net_config(&self, vocab_size: usize, num_domains: usize) -> Result<NetConfig> {
        Ok(NetConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            proj_dim: self.proj_dim,
            num_domains,
            forget_mode: self.forget_mode.parse()?,
            embed_init_scale: self.embed_init_scale,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma_grid: parse_grid("0.0:0.1:0.02").expect("valid default grid"),
            dropout_grid: parse_grid("0.5:0.9:0.1").expect("valid default grid"),
            epochs: 5,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub b_grid: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub t_window: usize,
    pub n_t: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        let m = ModulationConfig::default();
        Stage2Config {
            b_grid: parse_grid("100:500:100").expect("valid default grid"),
            alpha: m.alpha,
            beta: m.beta,
            t_window: m.t_window,
            n_t: m.n_t,
            lr: m.adam.lr,
            epochs: m.epochs,
            batch_size: m.batch_size,
        }
    }
}

impl Stage2Config {
    /// Modulation settings for the first bound of the grid.
    pub fn modulation(&self) -> ModulationConfig {
        let d = ModulationConfig::default();
        ModulationConfig {
            b: self.b_grid.first().copied().unwrap_or(d.b),
            alpha: self.alpha,
            beta: self.beta,
            t_window: self.t_window,
            n_t: self.n_t,
            adam: AdamConfig { lr: self.lr, ..d.adam },
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stage2: Stage2Config,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str::<ExperimentConfig>(&text)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
                msg: e.message().to_string(),
            })
            .and_then(|c| c.validate().map(|_| c))
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.gamma_grid.is_empty() || t.dropout_grid.is_empty() || self.stage2.b_grid.is_empty() {
            return Err(Error::invalid("grids must be nonempty"));
        }
        if t.gamma_grid.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("gamma values must be finite and ≥ 0"));
        }
        if t.dropout_grid.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::invalid("dropout values must lie in [0, 1)"));
        }
        if t.epochs == 0 || t.batch_size == 0 || !(t.lr > 0.0) {
            return Err(Error::invalid("epochs, batch size and lr must be positive"));
        }
        if self.data.max_len == 0 {
            return Err(Error::invalid("max_len must be positive"));
        }
        self.model.forget_mode.parse::<ForgetMode>()?;
        for &b in &self.stage2.b_grid {
            self.stage2.modulation().with_bound(b).validate()?;
        }
        if self.data.dir.is_none() {
            self.synth.spec().validate()?;
        }
        Ok(())
    }
}

fn round_grid(v: f64) -> f64 {
    (v * 1e10).round() / 1e10
}

/// Parses `lo:hi:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::invalid(format!("bad grid `{s}`"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    let out = match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if !(step > 0.0) || hi < lo {
                return Err(bad());
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            (0..n).map(|k| round_grid(lo + k as f64 * step)).collect()
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if out.is_empty() || out.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(out)
}
