//! `socrec` — one binary for the whole workflow: synthesize data, train,
//! evaluate, export embeddings, build the similarity index, and answer
//! similar-user / recommendation queries, all against one working
//! directory.
//!
//! Exit codes: 0 success, 1 runtime failure (missing or malformed
//! artifacts, training divergence, I/O), 2 usage or configuration error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
mod lock;

use commands::SynthArgs;

#[derive(Parser)]
#[command(
    name = "socrec",
    version,
    about = "Sequential social recommender: train on a clickstream plus a friendship graph, evaluate with a temporal split, and serve embedding-based retrieval."
)]
struct Cli {
    /// Directory all artifacts are read from and written to.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    workdir: PathBuf,

    /// Flat `key = value` configuration file (train only; other commands
    /// read the configuration echoed into their input artifacts).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Single `key=value` override, applied after --config; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clickstream with a planted social signal.
    Synth(SynthArgs),
    /// Train a model; writes checkpoint.ckpt and train_log.tsv.
    Train {
        /// Continue from the existing checkpoint instead of starting fresh.
        #[arg(long)]
        resume: bool,
    },
    /// Hold out the trailing time window and rank the true next items;
    /// writes report.tsv.
    Eval {
        /// Span of trailing history (in timestamp units) to hold out.
        #[arg(long, value_name = "SPAN")]
        window: Option<i64>,
    },
    /// Export per-user personal, social, and fused embeddings via the
    /// staged file pipeline.
    Embed,
    /// Build the similarity index over the fused embeddings.
    Index,
    /// Nearest neighbors of a user by embedding cosine.
    Similar {
        /// User id as it appears in the event file.
        #[arg(long)]
        user: i64,
        /// How many neighbors to return.
        #[arg(long, value_name = "N")]
        ku: Option<usize>,
    },
    /// Recommend items through the user's nearest neighbors.
    Recommend {
        /// User id as it appears in the event file.
        #[arg(long)]
        user: i64,
        /// How many items to return.
        #[arg(long, value_name = "N")]
        k: Option<usize>,
        /// Size of the neighbor pool feeding the recommendation.
        #[arg(long, value_name = "N")]
        ku: Option<usize>,
    },
}

fn run(cli: Cli) -> socrec_core::Result<()> {
    let w = cli.workdir.as_path();
    let config = cli.config.as_deref();
    let sets = &cli.sets;
    match cli.command {
        Command::Synth(args) => commands::synth(w, config, sets, &args),
        Command::Train { resume } => commands::train(w, config, sets, resume),
        Command::Eval { window } => commands::eval(w, config, sets, window),
        Command::Embed => commands::embed(w, config, sets),
        Command::Index => commands::index(w, config, sets),
        Command::Similar { user, ku } => commands::similar(w, config, sets, user, ku),
        Command::Recommend { user, k, ku } => commands::recommend(w, config, sets, user, k, ku),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            socrec_core::Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
