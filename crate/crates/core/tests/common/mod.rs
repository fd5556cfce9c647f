//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use dama::lab::config::ExperimentConfig;

/// Two small synthetic domains and a one-cell grid; trains in well under a
/// second.
pub fn tiny_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.synth.domains = 2;
    cfg.synth.utility = vec![0.0, 0.9];
    cfg.synth.vocab_size = 80;
    cfg.synth.seq_len = 8;
    cfg.synth.n_train = 40;
    cfg.synth.n_val = 16;
    cfg.synth.n_test = 16;
    cfg.model.embed_dim = 6;
    cfg.model.hidden_dim = 5;
    cfg.model.proj_dim = 4;
    cfg.train.gamma_grid = vec![0.1];
    cfg.train.dropout_grid = vec![0.5];
    cfg.train.epochs = 1;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.01;
    cfg.stage2.b_grid = vec![100.0];
    cfg
}
