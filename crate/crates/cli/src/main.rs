use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use augkit::error::PipelineError;
use augkit::llm::mock::{Fixture, MockServer};
use augkit::pipeline::{
    cmd_augment, cmd_compare, cmd_evaluate, cmd_synth, cmd_train, render_table, MethodChoice,
    Overrides, PipelineConfig, Workspace,
};
use clap::{Args, Parser, Subcommand};

/// Text augmentation, augmented-set scoring and few-shot training.
#[derive(Parser, Debug)]
#[command(name = "augkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (for `augment`: the output file).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "k-shot")]
    k_shot: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Only cached responses and loopback endpoints.
    #[arg(long)]
    offline: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate variants for a dataset.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
        /// Dataset to augment; defaults to the k-shot draw from the novel set.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score an augmented file for faithfulness and TransRate.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        augmented: PathBuf,
        /// Reference dataset; defaults to the novel test split.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Base training, then few-shot training on augmented data.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "raw")]
        method: String,
    },
    /// Augment, score and train for several methods and the raw baseline.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Repeatable or comma-separated; defaults to the config's methods.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
    },
    /// Serve scripted chat, fill-mask and translation responses on loopback.
    MockServe {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
    /// Write a synthetic dataset, vectors and config into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn workspace(c: &Common, augment_out: bool) -> Result<Workspace, PipelineError> {
    let overrides = Overrides {
        seed: c.seed,
        out_dir: if augment_out { None } else { c.out.clone() },
        k_shot: c.k_shot,
        lambda: c.lambda,
        epsilon: c.epsilon,
        offline: c.offline,
    };
    Workspace::open(PipelineConfig::load(&c.config, &overrides)?)
}

fn print(line: impl AsRef<str>) -> Result<(), PipelineError> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", line.as_ref())?;
    out.flush()?;
    Ok(())
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Augment {
            common,
            method,
            input,
        } => {
            let method: MethodChoice = method.parse()?;
            let ws = workspace(&common, true)?;
            let (set, path) = cmd_augment(&ws, method, input.as_deref(), common.out.as_deref())?;
            let failed = set.failures().count();
            print(format!(
                "{} variants for {} samples ({failed} failed) -> {}",
                set.variant_count(),
                set.entries().len(),
                show(&path)
            ))
        }
        Command::Evaluate {
            common,
            augmented,
            reference,
        } => {
            let ws = workspace(&common, false)?;
            for r in cmd_evaluate(&ws, &augmented, reference.as_deref())? {
                print(serde_json::to_string(&r)?)?;
            }
            Ok(())
        }
        Command::Train { common, method } => {
            let method: MethodChoice = method.parse()?;
            let ws = workspace(&common, false)?;
            let (run, path) = cmd_train(&ws, method)?;
            print(format!(
                "accuracy {:.4} -> {}",
                run.eval_accuracy,
                show(&path)
            ))
        }
        Command::Compare { common, method } => {
            let methods = method
                .iter()
                .map(|m| m.parse())
                .collect::<Result<Vec<MethodChoice>, _>>()?;
            let ws = workspace(&common, false)?;
            let (rows, path) = cmd_compare(&ws, &methods)?;
            print(render_table(&rows))?;
            print(format!("-> {}", show(&path)))
        }
        Command::MockServe { fixture, port } => {
            let fixture =
                Fixture::load(&fixture).map_err(|e| PipelineError::Config(e.to_string()))?;
            let server = MockServer::start(fixture, port)
                .map_err(|e| PipelineError::Runtime(e.to_string()))?;
            print(server.base_url())?;
            server.wait();
            Ok(())
        }
        Command::Synth { out, seed } => {
            let path = cmd_synth(&out, seed)?;
            print(show(&path))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.summary());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
