//! Benchmark CLI: spectrum stress tests for eigendecomposition gradients, a
//! micro-training stability harness, and the minimum-iteration table.

mod baselines;
mod records;
mod spectrum_bench;
mod train_bench;

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use eigengrad::io::fmt_g;
use records::{emit_csv, LayerChoice, Method};
use spectrum_bench::SpectrumConfig;
use train_bench::{DataKind, TrainConfig};

#[derive(Parser)]
#[command(
    name = "eigbench",
    about = "Stability benchmarks for differentiable eigendecomposition",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Master seed; every random quantity derives from it deterministically.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Trials per configuration.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Write the CSV here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Diagonal regularization strength.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Backward iteration count K.
    #[arg(long, default_value_t = 19)]
    iters: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Gradient stress test over synthetic spectra; emits one CSV row per
    /// (trial, method).
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Matrix dimension.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Geometric decay ratios, comma separated.
        #[arg(long, default_value = "0.5", value_delimiter = ',')]
        ratio: Vec<f64>,
        /// Adds a two-eigenvalue cluster with this gap to the sweep.
        #[arg(long)]
        gap: Option<f64>,
        /// Gradient method: svd, pi, hybrid, or all.
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Micro-training stability harness; emits one CSV row per trial.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Normalization layer: none, bn-like, zca, or pca.
        #[arg(long, default_value = "none")]
        layer: String,
        /// Gradient method for the layer: svd, pi, or hybrid.
        #[arg(long, default_value = "hybrid")]
        method: String,
        /// Channels per group (d); must divide the hidden width 64.
        #[arg(long, default_value_t = 16)]
        group_size: usize,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Input distribution: gaussian, or degenerate (duplicated features).
        #[arg(long, default_value = "gaussian")]
        data: String,
        /// PCA: retain the smallest rank reaching this energy fraction.
        #[arg(long, conflicts_with = "rank")]
        energy: Option<f64>,
        /// PCA: retain exactly this many eigenvectors.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Prints the minimum iteration counts guaranteeing the decay factor
    /// drops to 0.05, across the reference eigenvalue ratios.
    Kmin {
        /// Write the CSV here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// The reference ratios tabulated for the iteration-count rule.
pub const KMIN_RATIOS: [f64; 14] = [
    0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.99, 0.995, 0.999,
];

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Spectrum { common, dim, ratio, gap, method } => {
            let methods = parse_methods(&method)?;
            let config = SpectrumConfig {
                dim,
                ratios: ratio,
                gap,
                methods,
                trials: common.trials,
                iterations: common.iters,
                epsilon: common.epsilon,
                seed: common.seed,
            };
            let records = spectrum_bench::run_spectrum_bench(&config)?;
            let rows: Vec<String> = records.iter().map(|r| r.to_csv()).collect();
            emit_csv(records::TrialRecord::HEADER, &rows, common.out.as_deref())?;
        }
        Command::Train {
            common,
            layer,
            method,
            group_size,
            epochs,
            lr,
            data,
            energy,
            rank,
        } => {
            let layer = LayerChoice::parse(&layer)
                .ok_or_else(|| anyhow::anyhow!("unknown layer {layer:?}; expected none, bn-like, zca or pca"))?;
            let method = Method::parse(&method)
                .ok_or_else(|| anyhow::anyhow!("unknown method {method:?}; expected svd, pi or hybrid"))?;
            let data = DataKind::parse(&data)
                .ok_or_else(|| anyhow::anyhow!("unknown data kind {data:?}; expected gaussian or degenerate"))?;
            let config = TrainConfig {
                layer,
                method,
                group_size,
                trials: common.trials,
                epochs,
                lr,
                iterations: common.iters,
                epsilon: common.epsilon,
                seed: common.seed,
                data,
                pca_rank: rank,
                pca_energy: energy,
            };
            let records = train_bench::run_train_bench(&config)?;
            let rows: Vec<String> = records.iter().map(|r| r.to_csv()).collect();
            emit_csv(records::TrainRecord::HEADER, &rows, common.out.as_deref())?;
        }
        Command::Kmin { out } => {
            let rows: Vec<String> = KMIN_RATIOS
                .iter()
                .map(|&ratio| {
                    let k = eigengrad::k_min_default(ratio).expect("reference ratio in range");
                    format!("{},{}", fmt_g(ratio, 10), k)
                })
                .collect();
            emit_csv("ratio,k_min", &rows, out.as_deref())?;
        }
    }
    Ok(())
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        match Method::parse(part) {
            Some(m) => out.push(m),
            None => bail!("unknown method {part:?}; expected svd, pi, hybrid or all"),
        }
    }
    Ok(out)
}
