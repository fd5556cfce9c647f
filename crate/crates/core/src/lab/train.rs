//! Stage 1: joint training, grid search and plain evaluation.

use std::collections::BTreeMap;

use log::info;
use rayon::prelude::*;

use crate::data::{
    batches, build_vocab, discover_domains, encode_corpus, gen_synthetic, load_corpus, load_vectors, split_val,
    DomainCorpus, EncodedDomain, Example, Split, Vocab,
};
use crate::error::{Error, Result};
use crate::layers::{AdamState, Mode};
use crate::lab::config::ExperimentConfig;
use crate::modulation::{eval_modulated, prepare, EvalMetrics};
use crate::net::{param_grads, DamNet};
use crate::numerics::RngStream;

/// Corpora as raw text, before encoding.
pub fn load_raw(cfg: &ExperimentConfig) -> Result<Vec<DomainCorpus>> {
    let root = RngStream::new(cfg.seed);
    let Some(dir) = &cfg.data.dir else {
        return gen_synthetic(&cfg.synth.spec(), cfg.seed);
    };
    let names = if cfg.data.domains.is_empty() { discover_domains(dir)? } else { cfg.data.domains.clone() };
    if names.is_empty() {
        return Err(Error::invalid(format!("no *.task.train files in {}", dir.display())));
    }
    names
        .iter()
        .map(|name| {
            let c = load_corpus(dir, name, cfg.data.label_last)?;
            if c.val.is_empty() {
                split_val(&c, cfg.data.val_ratio, &mut root.derive(&format!("split/{name}")))
            } else {
                Ok(c)
            }
        })
        .collect()
}

/// Encoded domains, in corpus order, with a shared vocabulary.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub domains: Vec<EncodedDomain>,
}

impl Prepared {
    pub fn names(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.name.clone()).collect()
    }

    pub fn train_examples(&self) -> Vec<Example> {
        self.domains.iter().flat_map(|d| d.train.iter().cloned()).collect()
    }
}

pub fn encode_all(raw: &[DomainCorpus], vocab: Vocab, max_len: usize) -> Prepared {
    let domains = raw.iter().enumerate().map(|(j, c)| encode_corpus(c, &vocab, j, max_len)).collect();
    Prepared { vocab, domains }
}

/// Loads (or generates) and encodes the configured data.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let raw = load_raw(cfg)?;
    let vocab = build_vocab(&raw, cfg.data.min_freq)?;
    Ok(encode_all(&raw, vocab, cfg.data.max_len))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub sentiment_loss: f64,
    pub domain_loss: f64,
    /// Mean over domains.
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct Stage1 {
    pub net: DamNet,
    pub gamma: f64,
    pub dropout: f64,
    pub log: Vec<EpochLog>,
}

/// Eval-mode metrics for one split of every domain.
pub fn base_metrics(net: &DamNet, data: &Prepared, split: Split) -> Result<Vec<EvalMetrics>> {
    data.domains.iter().map(|d| eval_modulated(net, &prepare(net, d.split(split))?, 0.0)).collect()
}

pub fn mean_accuracy(m: &[EvalMetrics]) -> f64 {
    m.iter().map(|x| x.accuracy).sum::<f64>() / m.len() as f64
}

/// Trains one model on the union of all training splits. Every epoch draws
/// freshly shuffled mixed-domain batches; the final epoch's weights are kept.
pub fn train_stage1(cfg: &ExperimentConfig, data: &Prepared, gamma: f64, dropout: f64) -> Result<Stage1> {
    let root = RngStream::new(cfg.seed);
    let net_cfg = cfg.model.net_config(data.vocab.len(), data.domains.len())?;
    let mut net = DamNet::new(&net_cfg, gamma, dropout, &root.derive("init"))?;
    if let Some(path) = &cfg.data.vectors {
        let stats = load_vectors(path, &data.vocab, &mut net.embedding)?;
        info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * stats.coverage);
    }
    let adam_cfg = cfg.train.adam();
    let mut opt: Vec<AdamState> = net.tensors().iter().map(|(_, t)| AdamState::new(t.shape(), adam_cfg)).collect();
    let train = data.train_examples();
    let mut shuffle = root.derive("batches");
    let mut drop_rng = root.derive("dropout");
    let mut log = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let (mut total, mut ls, mut ld, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (bi, batch) in batches(&train, cfg.train.batch_size, Some(&mut shuffle))?.iter().enumerate() {
            let (terms, grads) = match param_grads(&net, &batch.ids, &batch.labels, gamma, Mode::Train, &mut drop_rng) {
                Err(Error::NonFinite(_)) => {
                    let tr = crate::net::forward(&net, &batch.ids, Mode::Eval, &mut RngStream::new(0))?;
                    let t = crate::net::loss_terms(&tr, &batch.labels, gamma)?;
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        sentiment: t.sentiment,
                        domain: t.domain,
                    });
                }
                r => r?,
            };
            for ((state, (_, p)), (_, g)) in opt.iter_mut().zip(net.tensors_mut()).zip(grads.tensors()) {
                state.step(p, g)?;
            }
            let w = batch.len() as f64;
            total += terms.total * w;
            ls += terms.sentiment * w;
            ld += terms.domain * w;
            n += batch.len();
        }
        let val = mean_accuracy(&base_metrics(&net, data, Split::Val)?);
        let n = n as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: total / n,
            sentiment_loss: ls / n,
            domain_loss: ld / n,
            val_accuracy: val,
        };
        info!(
            "γ={gamma} p={dropout} epoch {}: loss {:.4} val acc {:.4}",
            entry.epoch, entry.loss, entry.val_accuracy
        );
        log.push(entry);
    }
    Ok(Stage1 {
        net,
        gamma,
        dropout,
        log,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub gamma: f64,
    pub dropout: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub final_loss: f64,
}

pub struct GridResult {
    /// In grid order: gamma-major.
    pub cells: Vec<GridCell>,
    pub best: usize,
    pub model: Stage1,
}

pub const GRID_HEADER: &str = "gamma,dropout,val_acc,test_acc,final_loss";

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(GRID_HEADER.split(',')).expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                c.gamma.to_string(),
                c.dropout.to_string(),
                c.val_accuracy.to_string(),
                c.test_accuracy.to_string(),
                c.final_loss.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// Trains every (γ, dropout) cell and keeps the best mean validation
/// accuracy; ties go to the smaller γ, then the smaller dropout.
pub fn grid_search(cfg: &ExperimentConfig, data: &Prepared) -> Result<GridResult> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64)> = cfg
        .train
        .gamma_grid
        .iter()
        .flat_map(|&g| cfg.train.dropout_grid.iter().map(move |&p| (g, p)))
        .collect();
    let runs: Vec<(GridCell, Stage1)> = pairs
        .par_iter()
        .map(|&(gamma, dropout)| {
            let s1 = train_stage1(cfg, data, gamma, dropout)?;
            let cell = GridCell {
                gamma,
                dropout,
                val_accuracy: mean_accuracy(&base_metrics(&s1.net, data, Split::Val)?),
                test_accuracy: mean_accuracy(&base_metrics(&s1.net, data, Split::Test)?),
                final_loss: s1.log.last().map(|l| l.loss).unwrap_or(f64::NAN),
            };
            Ok((cell, s1))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, (c, _)) in runs.iter().enumerate().skip(1) {
        let b = &runs[best].0;
        let better = c.val_accuracy > b.val_accuracy
            || (c.val_accuracy == b.val_accuracy
                && (c.gamma < b.gamma || (c.gamma == b.gamma && c.dropout < b.dropout)));
        if better {
            best = i;
        }
    }
    let (cells, mut models): (Vec<GridCell>, Vec<Stage1>) = runs.into_iter().unzip();
    let model = models.swap_remove(best);
    Ok(GridResult { cells, best, model })
}

/// Per-domain evaluation row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub domain: String,
    pub lambda: f64,
    pub metrics: EvalMetrics,
}

/// Eval-mode metrics for `split`, modulated by the given per-domain λ
/// (domains absent from the map use λ = 0).
pub fn evaluate(
    net: &DamNet,
    lambdas: Option<&BTreeMap<String, f64>>,
    data: &Prepared,
    split: Split,
) -> Result<Vec<EvalRow>> {
    if let Some(map) = lambdas {
        if let Some(unknown) = map.keys().find(|k| !data.domains.iter().any(|d| &d.name == *k)) {
            return Err(Error::UnknownDomain(unknown.clone()));
        }
    }
    data.domains
        .iter()
        .map(|d| {
            let lambda = lambdas.and_then(|m| m.get(&d.name).copied()).unwrap_or(0.0);
            let metrics = eval_modulated(net, &prepare(net, d.split(split))?, lambda)?;
            Ok(EvalRow {
                domain: d.name.clone(),
                lambda,
                metrics,
            })
        })
        .collect()
}
