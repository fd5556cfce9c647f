//! Experiment orchestration: training, stage 2, persistence, reports, CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod gradcheck;
pub mod report;
pub mod stage2;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ExperimentConfig;
pub use report::{make_report, Report};
pub use stage2::{stage2_all, MetricsRow, MetricsTable, Stage2Results};
pub use train::{evaluate, grid_search, prepare_data, train_stage1, GridResult, Prepared};

use crate::error::{Error, Result};

/// Data for a saved model: the checkpoint's corpora encoded with its own
/// vocabulary.
pub fn prepare_for_checkpoint(ckpt: &Checkpoint) -> Result<Prepared> {
    let raw = train::load_raw(&ckpt.config)?;
    let names: Vec<String> = raw.iter().map(|c| c.name.clone()).collect();
    if names != ckpt.domains {
        return Err(Error::invalid(format!(
            "checkpoint was trained on {:?}, data has {:?}",
            ckpt.domains, names
        )));
    }
    Ok(train::encode_all(&raw, ckpt.vocab.clone(), ckpt.config.data.max_len))
}

pub struct PipelineOutput {
    pub data: Prepared,
    pub grid: GridResult,
    pub stage2: Stage2Results,
}

impl PipelineOutput {
    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        Checkpoint {
            config: cfg.clone(),
            net: self.grid.model.net.clone(),
            vocab: self.data.vocab.clone(),
            domains: self.data.names(),
            log: self.grid.model.log.clone(),
        }
    }
}

/// Grid search followed by stage 2 on the selected model.
pub fn run_pipeline(cfg: &ExperimentConfig, concurrent: bool) -> Result<PipelineOutput> {
    let data = prepare_data(cfg)?;
    let grid = grid_search(cfg, &data)?;
    let stage2 = stage2_all(&grid.model.net, &data, cfg, concurrent)?;
    Ok(PipelineOutput { data, grid, stage2 })
}
