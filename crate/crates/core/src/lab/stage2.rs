//! Stage 2 over every domain, and the resulting metrics tables.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lab::config::ExperimentConfig;
use crate::lab::train::Prepared;
use crate::modulation::{prepare, run_domain_stage2, DomainStage2};
use crate::net::DamNet;
use crate::numerics::RngStream;

/// One domain's row. Accuracies are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub domain: String,
    pub b: f64,
    pub lambda_learned: f64,
    pub lambda_final: f64,
    pub o_vc: f64,
    pub o_tc: f64,
    pub s_vc: f64,
    pub s_tc: f64,
    pub d_vc_base: f64,
    pub d_vc: f64,
    pub d_tc_base: f64,
    pub d_tc: f64,
}

pub const METRICS_HEADER: &str = "domain,b,lambda_learned,lambda_final,o_vc,o_tc,s_vc,s_tc,d_vc_base,d_vc,d_tc_base,d_tc";
pub const LAMBDA_HEADER: &str = "domain,b,lambda_learned,lambda_final,a_x,a_xplus,l_x,l_xplus,d_x,d_xplus";
pub const SWEEP_HEADER: &str = "domain,b,lambda_learned,lambda_final,val_acc,val_loss,evaluations";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        if self.rows.is_empty() {
            w.write_record(METRICS_HEADER.split(',')).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::invalid(format!("metrics csv: {e}")))?;
        if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
            return Err(Error::invalid(format!("metrics csv header must be `{METRICS_HEADER}`")));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsRow>, _>>()
            .map_err(|e| Error::invalid(format!("metrics csv: {e}")))?;
        Ok(MetricsTable { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Base-only table (every λ = 0) for a plain stage-1 model.
    pub fn base_only(names: &[String], val: &[crate::modulation::EvalMetrics], test: &[crate::modulation::EvalMetrics]) -> Self {
        let rows = names
            .iter()
            .zip(val.iter().zip(test))
            .map(|(name, (v, t))| MetricsRow {
                domain: name.clone(),
                b: 0.0,
                lambda_learned: 0.0,
                lambda_final: 0.0,
                o_vc: pct(v.accuracy),
                o_tc: pct(t.accuracy),
                s_vc: pct(v.accuracy),
                s_tc: pct(t.accuracy),
                d_vc_base: pct(v.domain_accuracy),
                d_vc: pct(v.domain_accuracy),
                d_tc_base: pct(t.domain_accuracy),
                d_tc: pct(t.domain_accuracy),
            })
            .collect();
        MetricsTable { rows }
    }
}

/// Stage-2 results for all domains, in domain order.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Results {
    pub names: Vec<String>,
    pub domains: Vec<DomainStage2>,
}

fn write_csv<S: Serialize>(header: &str, rows: impl IntoIterator<Item = S>) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(',')).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

impl Stage2Results {
    pub fn metrics(&self) -> MetricsTable {
        let rows = self
            .names
            .iter()
            .zip(&self.domains)
            .map(|(name, d)| MetricsRow {
                domain: name.clone(),
                b: d.b,
                lambda_learned: d.lambda_learned,
                lambda_final: d.lambda_final,
                o_vc: pct(d.base_val.accuracy),
                o_tc: pct(d.base_test.accuracy),
                s_vc: pct(d.mod_val.accuracy),
                s_tc: pct(d.mod_test.accuracy),
                d_vc_base: pct(d.base_val.domain_accuracy),
                d_vc: pct(d.mod_val.domain_accuracy),
                d_tc_base: pct(d.base_test.domain_accuracy),
                d_tc: pct(d.mod_test.domain_accuracy),
            })
            .collect();
        MetricsTable { rows }
    }

    /// Validation-side λ summary, one row per domain.
    pub fn lambda_csv(&self) -> String {
        write_csv(
            LAMBDA_HEADER,
            self.names.iter().zip(&self.domains).map(|(n, d)| {
                (
                    n,
                    d.b,
                    d.lambda_learned,
                    d.lambda_final,
                    d.effect.a_x,
                    d.effect.a_xplus,
                    d.effect.l_x,
                    d.effect.l_xplus,
                    d.base_val.domain_accuracy,
                    d.mod_val.domain_accuracy,
                )
            }),
        )
    }

    /// Every (domain, b) trial.
    pub fn sweep_csv(&self) -> String {
        write_csv(
            SWEEP_HEADER,
            self.names.iter().zip(&self.domains).flat_map(|(n, d)| {
                d.sweep.iter().map(move |t| {
                    (n, t.b, t.lambda_learned, t.lambda_final, t.val.accuracy, t.val.loss, t.history.count)
                })
            }),
        )
    }
}

/// Reads `domain → lambda_final` from a λ CSV (or a metrics CSV).
pub fn read_lambdas(path: &Path) -> Result<std::collections::BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(dc), Some(lc)) = (col("domain"), col("lambda_final")) else {
        return Err(parse_err("need `domain` and `lambda_final` columns".into()));
    };
    let mut out = std::collections::BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let lam = rec[lc].parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        out.insert(rec[dc].to_string(), lam);
    }
    Ok(out)
}

/// Runs stage 2 for every domain. Each domain uses its own RNG sub-stream,
/// so results do not depend on `concurrent`.
pub fn stage2_all(net: &DamNet, data: &Prepared, cfg: &ExperimentConfig, concurrent: bool) -> Result<Stage2Results> {
    let root = RngStream::new(cfg.seed).derive("stage2");
    let mcfg = cfg.stage2.modulation();
    let run = |j: usize| -> Result<DomainStage2> {
        let d = &data.domains[j];
        let train = prepare(net, &d.train)?;
        let val = prepare(net, &d.val)?;
        let test = prepare(net, &d.test)?;
        run_domain_stage2(net, j, &train, &val, &test, &cfg.stage2.b_grid, &mcfg, &root.derive_index("domain", j as u64))
    };
    let n = data.domains.len();
    let domains = if concurrent {
        (0..n).into_par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        (0..n).map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(Stage2Results {
        names: data.names(),
        domains,
    })
}
