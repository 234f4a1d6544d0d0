//! Command-line driver: ingest raw datasets, train, evaluate under the
//! conventional/inductive protocols, transfer across catalogs, and dump
//! debug artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! divergence.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "retagnn", version, about = "Holistic sequential recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Key=value configuration file; command-line overrides win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeated key=value overrides for any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed for initialization, sampling, and splits.
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for data-parallel sections (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw dataset, binarize and filter it, and write the normalized
    /// bundle plus statistics.
    Ingest {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset flavor: movielens or bookcrossing.
        #[arg(long)]
        kind: String,
        /// Directory holding the raw files.
        #[arg(long)]
        input: PathBuf,
        /// Implicit-feedback threshold; defaults to 4 (movielens) or 9
        /// (bookcrossing).
        #[arg(long)]
        threshold: Option<i32>,
    },
    /// Train on a normalized bundle and write a checkpoint plus loss curve.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        bundle: PathBuf,
        /// Protocol context: csr (default) or isr.
        #[arg(long, default_value = "csr")]
        protocol: String,
        /// Seen-user fraction for the inductive protocol.
        #[arg(long, default_value_t = 0.7)]
        train_frac: f64,
    },
    /// Evaluate a checkpoint on a bundle under csr or isr.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "csr")]
        protocol: String,
        #[arg(long, default_value_t = 0.7)]
        train_frac: f64,
    },
    /// Zero-shot transfer: load a source checkpoint and evaluate it on a
    /// disjoint target bundle.
    Transfer {
        #[command(flatten)]
        common: CommonOpts,
        /// Source checkpoint file.
        #[arg(long)]
        source: PathBuf,
        /// Target bundle directory.
        #[arg(long)]
        target: PathBuf,
        /// Fine-tuning epochs on the target (default zero-shot).
        #[arg(long, default_value_t = 0)]
        fine_tune_epochs: usize,
    },
    /// Dump one sample's enclosing subgraph as an annotated edge list.
    DumpSubgraph {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        bundle: PathBuf,
        /// User index to expand around.
        #[arg(long)]
        user: u32,
        /// Window start position within the user's sequence.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Export mean self-attention matrices over train and validation
    /// sessions.
    ExportAttention {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            common,
            kind,
            input,
            threshold,
        } => run::ingest(&common, &kind, &input, threshold),
        Command::Train {
            common,
            bundle,
            protocol,
            train_frac,
        } => run::train(&common, &bundle, &protocol, train_frac),
        Command::Eval {
            common,
            bundle,
            checkpoint,
            protocol,
            train_frac,
        } => run::eval(&common, &bundle, &checkpoint, &protocol, train_frac),
        Command::Transfer {
            common,
            source,
            target,
            fine_tune_epochs,
        } => run::transfer(&common, &source, &target, fine_tune_epochs),
        Command::DumpSubgraph {
            common,
            bundle,
            user,
            start,
        } => run::dump_subgraph(&common, &bundle, user, start),
        Command::ExportAttention {
            common,
            bundle,
            checkpoint,
        } => run::export_attention(&common, &bundle, &checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(run::exit_code(&err))
        }
    }
}
