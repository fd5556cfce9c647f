//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::data::{gen_synthetic, write_corpus, Split};
use crate::error::{Error, Result};
use crate::lab::config::{default_utility, parse_grid, ExperimentConfig};
use crate::lab::gradcheck::run_gradcheck;
use crate::lab::report::make_report;
use crate::lab::stage2::{read_lambdas, stage2_all, MetricsTable};
use crate::lab::train::{base_metrics, evaluate, grid_search, prepare_data};
use crate::lab::{load_checkpoint, prepare_for_checkpoint, save_checkpoint, Checkpoint};

#[derive(Parser, Debug)]
#[command(name = "dama", version, about = "Domain-attention sentiment models with per-domain input modulation")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-domain corpus.
    Synth {
        #[arg(long, default_value_t = 4)]
        domains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated per-domain utilities (default: spread over 0..0.9).
        #[arg(long)]
        utility: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: grid search over gamma and dropout, save the best model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus directory (synthetic data when omitted).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label_last: bool,
        /// `lo:hi:step` or a comma-separated list.
        #[arg(long)]
        gamma_grid: Option<String>,
        #[arg(long)]
        dropout_grid: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: learn and scale one lambda per domain.
    Modulate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        b_grid: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        t_window: Option<usize>,
        #[arg(long)]
        nt: Option<usize>,
        /// Adam learning rate for lambda.
        #[arg(long)]
        lr: Option<f64>,
        /// Process domains one after another.
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-domain accuracy of a checkpoint, optionally modulated.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// CSV with `domain` and `lambda_final` columns.
        #[arg(long)]
        lambdas: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render metrics CSVs as tables.
    Report {
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        modulated: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Txt)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of all gradients.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Txt,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            domains,
            seed,
            utility,
            config,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.synth.domains = domains;
            cfg.synth.utility = match utility {
                Some(u) => parse_grid(&u)?,
                None => default_utility(domains),
            };
            for c in gen_synthetic(&cfg.synth.spec(), seed)? {
                write_corpus(&out, &c)?;
            }
            println!("wrote {domains} domains to {}", out.display());
        }
        Command::Train {
            config,
            data,
            label_last,
            gamma_grid,
            dropout_grid,
            epochs,
            batch,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if data.is_some() {
                cfg.data.dir = data;
            }
            cfg.data.label_last |= label_last;
            if let Some(g) = gamma_grid {
                cfg.train.gamma_grid = parse_grid(&g)?;
            }
            if let Some(g) = dropout_grid {
                cfg.train.dropout_grid = parse_grid(&g)?;
            }
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = batch.unwrap_or(cfg.train.batch_size);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;

            let prepared = prepare_data(&cfg)?;
            let grid = grid_search(&cfg, &prepared)?;
            let ckpt = Checkpoint {
                config: cfg.clone(),
                net: grid.model.net.clone(),
                vocab: prepared.vocab.clone(),
                domains: prepared.names(),
                log: grid.model.log.clone(),
            };
            save_checkpoint(&ckpt, &out.join("checkpoint.dama"))?;
            write(&out.join("grid.csv"), &grid.to_csv())?;
            let val = base_metrics(&ckpt.net, &prepared, Split::Val)?;
            let test = base_metrics(&ckpt.net, &prepared, Split::Test)?;
            write(&out.join("base_metrics.csv"), &MetricsTable::base_only(&prepared.names(), &val, &test).to_csv())?;
            let best = &grid.cells[grid.best];
            println!(
                "selected gamma={} dropout={} (mean val acc {:.4}); wrote {}",
                best.gamma,
                best.dropout,
                best.val_accuracy,
                out.display()
            );
        }
        Command::Modulate {
            ckpt,
            data,
            b_grid,
            alpha,
            beta,
            t_window,
            nt,
            lr,
            serial,
            out,
        } => {
            let mut ck = load_checkpoint(&ckpt)?;
            let s2 = &mut ck.config.stage2;
            if let Some(b) = b_grid {
                s2.b_grid = parse_grid(&b)?;
            }
            s2.alpha = alpha.unwrap_or(s2.alpha);
            s2.beta = beta.unwrap_or(s2.beta);
            s2.t_window = t_window.unwrap_or(s2.t_window);
            s2.n_t = nt.unwrap_or(s2.n_t);
            s2.lr = lr.unwrap_or(s2.lr);
            if data.is_some() {
                ck.config.data.dir = data;
            }
            ck.config.validate()?;
            let prepared = prepare_for_checkpoint(&ck)?;
            let results = stage2_all(&ck.net, &prepared, &ck.config, !serial)?;
            let metrics = results.metrics();
            write(&out.join("metrics.csv"), &metrics.to_csv())?;
            write(&out.join("lambda.csv"), &results.lambda_csv())?;
            write(&out.join("b_sweep.csv"), &results.sweep_csv())?;
            let report = make_report(&metrics, &metrics)?;
            write(&out.join("report.txt"), &report.text())?;
            print!("{}", report.text());
        }
        Command::Eval {
            ckpt,
            lambdas,
            split,
            data,
        } => {
            let split: Split = split.parse()?;
            if split == Split::Train {
                return Err(Error::invalid("eval split must be `val` or `test`"));
            }
            let mut ck = load_checkpoint(&ckpt)?;
            if data.is_some() {
                ck.config.data.dir = data;
            }
            let prepared = prepare_for_checkpoint(&ck)?;
            let map = lambdas.as_deref().map(read_lambdas).transpose()?;
            let rows = evaluate(&ck.net, map.as_ref(), &prepared, split)?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let io = |e: csv::Error| Error::invalid(e.to_string());
            w.write_record(["domain", "lambda", "accuracy", "loss", "domain_accuracy"]).map_err(io)?;
            for r in rows {
                w.write_record([
                    r.domain,
                    r.lambda.to_string(),
                    r.metrics.accuracy.to_string(),
                    r.metrics.loss.to_string(),
                    r.metrics.domain_accuracy.to_string(),
                ])
                .map_err(io)?;
            }
            w.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Report {
            base,
            modulated,
            format,
            out,
        } => {
            let m = MetricsTable::load(&modulated)?;
            let b = match base {
                Some(p) => MetricsTable::load(&p)?,
                None => m.clone(),
            };
            let report = make_report(&m, &b)?;
            let text = match format {
                Format::Csv => report.csv,
                Format::Txt => report.text(),
            };
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Gradcheck { seed } => {
            let reports = run_gradcheck(seed)?;
            let failed = reports.iter().filter(|r| !r.passed).count();
            for r in &reports {
                println!("{r}");
            }
            if failed > 0 {
                return Err(Error::invalid(format!("{failed} of {} gradient checks failed", reports.len())));
            }
            println!("all {} gradient checks passed", reports.len());
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
