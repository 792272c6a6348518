//! Command-line driver: every experiment is a subcommand over a JSON config
//! file, with a few common overrides as flags.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/schema error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lexhead::exp::{self, ExperimentConfig, SyntheticKind};

#[derive(Parser)]
#[command(name = "lexhead", version, about = "Vocabulary-space head attribution and causal-intervention experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's model path.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Accuracy tables across tasks, styles and templates.
    Eval(RunArgs),
    /// Per-head vocabulary-space rankings for one prompt.
    Decode(RunArgs),
    /// Lexical and retrieval head sets per task and style.
    Detect(RunArgs),
    /// Cross-style head-set overlap matrix.
    Overlap(RunArgs),
    /// Accuracy-vs-scale patching curves per activation source.
    CrossPatch(RunArgs),
    /// Head-output norm comparison between prompt groups.
    Norms(RunArgs),
    /// Accuracy/head-count/norm vs shot count, with correlations.
    ManyShot(RunArgs),
    /// Fraction of incorrect prompts fixed by scaled patching.
    FixIncorrect(RunArgs),
    /// Retrieval-head response to lexical-head patching.
    Modulate(RunArgs),
    /// Ambiguous-vs-control competing-task comparison.
    Competing(RunArgs),
    /// Head counts across detection-criteria grids.
    Sensitivity(RunArgs),
    /// Steered generation with a language label per scale.
    Steer(RunArgs),
    /// Build and persist mean-activation caches.
    Cache(RunArgs),
    /// Detect + overlap + norms across many tasks with shared captures.
    Pipeline(RunArgs),
    /// Materialize a synthetic model directory.
    GenModel {
        /// Which synthetic model to write.
        #[arg(long, value_enum)]
        kind: GenKind,
        /// Task directory feeding the tokenizer corpus (gpt2-small).
        #[arg(long, default_value = "tasks")]
        tasks_dir: PathBuf,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum GenKind {
    Gpt2Small,
    TinyLlama,
    Planted,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        config.workers = Some(workers);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(model) = &args.model {
        config.model = model.clone();
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn run(cmd: &Command) -> ExitCode {
    let (args, runner): (&RunArgs, fn(&ExperimentConfig) -> lexhead::Result<Vec<PathBuf>>) =
        match cmd {
            Command::Eval(a) => (a, exp::run_eval),
            Command::Decode(a) => (a, exp::run_decode),
            Command::Detect(a) => (a, exp::run_detect),
            Command::Overlap(a) => (a, exp::run_overlap),
            Command::CrossPatch(a) => (a, exp::run_cross_patch),
            Command::Norms(a) => (a, exp::run_norms),
            Command::ManyShot(a) => (a, exp::run_many_shot),
            Command::FixIncorrect(a) => (a, exp::run_fix_incorrect),
            Command::Modulate(a) => (a, exp::run_modulate),
            Command::Competing(a) => (a, exp::run_competing),
            Command::Sensitivity(a) => (a, exp::run_sensitivity),
            Command::Steer(a) => (a, exp::run_steer),
            Command::Cache(a) => (a, exp::run_cache),
            Command::Pipeline(a) => (a, exp::run_pipeline),
            Command::GenModel { kind, tasks_dir, out } => {
                let kind = match kind {
                    GenKind::Gpt2Small => SyntheticKind::Gpt2Small,
                    GenKind::TinyLlama => SyntheticKind::TinyLlama,
                    GenKind::Planted => SyntheticKind::Planted,
                };
                return match exp::run_gen_model(kind, tasks_dir, out) {
                    Ok(paths) => {
                        for p in paths {
                            println!("{}", p.display());
                        }
                        ExitCode::SUCCESS
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        ExitCode::from(1)
                    }
                };
            }
        };

    let config = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match runner(&config) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    run(&cli.command)
}
