use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use advobf::pipeline::{execute, Command, ErrorRecord, ExperimentConfig};
use clap::{Parser, Subcommand};

/// Adversarial frame obfuscation: data, training, evaluation and reports.
///
/// Any config key can be overridden with a namespaced flag, for example
/// `--schedule.total-epochs 10` or `--model.width-multiplier=0.5`.
#[derive(Debug, Parser)]
#[command(name = "advobf", version = advobf::pipeline::VERSION)]
struct Cli {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Render a synthetic dataset (and the second camera if enabled).
    Synth,
    /// Extract, subsample and resize frames from a video or image directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Keep every n-th frame (overrides dataset.ingest_stride).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Label the dataset with the training detector's thresholded detections.
    PseudoGt,
    /// Fit the toy detectors named in the detector section.
    TrainDetector,
    /// Adversarially train the obfuscator against the deobfuscator.
    Train {
        /// Continue from a checkpoint written under the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write obfuscated frames for a manifest (default: the test split).
    Obfuscate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Person AP on clean and obfuscated test frames.
    EvalAp,
    /// SSIM, MSE, PSNR and NMI of obfuscated and reconstructed frames.
    EvalSimilarity,
    /// Baselines against the trained obfuscator.
    Table3,
    /// Person AP of every obfuscator under every evaluation detector.
    CrossModel,
    /// MAC and parameter counts of the configured obfuscator.
    Macs,
    /// Width-multiplier sweep with an AP-against-MACs plot.
    Sweep,
    /// Image grids plus every result table, with config-hash checks.
    Report {
        /// Combine artifacts even when their config hashes differ.
        #[arg(long)]
        force: bool,
    },
}

impl Cmd {
    fn into_command(self) -> (Command, Vec<(String, String)>) {
        let mut extra = Vec::new();
        let cmd = match self {
            Cmd::Synth => Command::Synth,
            Cmd::Ingest { input, stride } => {
                if let Some(s) = stride {
                    extra.push(("dataset.ingest_stride".into(), s.to_string()));
                }
                Command::Ingest { input }
            }
            Cmd::PseudoGt => Command::PseudoGt,
            Cmd::TrainDetector => Command::TrainDetector,
            Cmd::Train { resume } => Command::Train { resume },
            Cmd::Obfuscate { input } => Command::Obfuscate { input },
            Cmd::EvalAp => Command::EvalAp,
            Cmd::EvalSimilarity => Command::EvalSimilarity,
            Cmd::Table3 => Command::Table3,
            Cmd::CrossModel => Command::CrossModel,
            Cmd::Macs => Command::Macs,
            Cmd::Sweep => Command::Sweep,
            Cmd::Report { force } => Command::Report { force },
        };
        (cmd, extra)
    }
}

/// Splits `--section.key value` and `--section.key=value` out of the arguments.
fn split_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.to_str().and_then(|s| s.strip_prefix("--")).filter(|f| {
            let name = f.split('=').next().unwrap_or("");
            name.contains('.')
        }) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let value = it
                    .next()
                    .and_then(|v| v.into_string().ok())
                    .ok_or_else(|| format!("--{flag} needs a value"))?;
                overrides.push((flag.to_string(), value));
            }
        }
    }
    Ok((rest, overrides))
}

fn emit_error(rec: &ErrorRecord) -> ExitCode {
    eprintln!("{}", serde_json::to_string(rec).expect("error record serializes"));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, mut overrides) = match split_overrides(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    if let Some(d) = &cli.output_dir {
        overrides.push(("output_dir".into(), toml_string(&d.to_string_lossy())));
    }
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    let (command, extra) = cli.command.into_command();
    overrides.extend(extra);
    let config = match ExperimentConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return emit_error(&ErrorRecord::new(command.name(), &e, None)),
    };
    match execute(&command, &config) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
            ExitCode::SUCCESS
        }
        Err(rec) => emit_error(&rec),
    }
}

/// A TOML basic string literal, so paths never parse as other value types.
fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}
