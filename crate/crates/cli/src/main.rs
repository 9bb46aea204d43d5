//! `srn` command-line tool: generate data, train, predict, evaluate.
//!
//! Any `--section.key value` (or `--section.key=value`) flag overrides one
//! entry of the run configuration, e.g. `--train.lr 1e-4`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srn::synth::Difficulty;
use srn::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "srn",
    version,
    about = "Side-output residual network for symmetry detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArg {
    /// Config file with `section.key=value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/test benchmark with manifests.
    Gen {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        difficulty: Option<Difficulty>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Train on a manifest; writes checkpoint, loss trace, and config.
    Train {
        /// Training manifest (`image<TAB>mask` lines).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Write soft and NMS-thinned response maps for images.
    Predict {
        /// `.srnt` checkpoint; a `.txt` sidecar next to it supplies the model config.
        #[arg(long)]
        checkpoint: PathBuf,
        /// A single PGM/PPM image, or a manifest `.txt`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Score soft response maps against a manifest's ground truth.
    Eval {
        /// Directory of `<image stem>.pgm` soft responses, as written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Matching tolerance in pixels; defaults to a fraction of the diagonal.
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        thresholds: Option<usize>,
        /// Skip the SVG plot.
        #[arg(long)]
        no_svg: bool,
        #[command(flatten)]
        cfg: ConfigArg,
    },
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

/// Removes `--a.b value` / `--a.b=value` pairs from `args`.
fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), Failure> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg
            .strip_prefix("--")
            .filter(|f| f.split('=').next().is_some_and(|k| k.contains('.')))
        else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::Usage(format!("--{flag} needs a value")))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

fn resolve_config(cfg: &ConfigArg, overrides: &[(String, String)]) -> Result<RunConfig, Failure> {
    let mut rc = match &cfg.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    for (k, v) in overrides {
        rc.set_dotted(k, v)
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(rc)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SRN_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Usage(format!(
            "SRN_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let (rest, overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(rest) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Failure::Usage(e.to_string().trim_end().to_string())),
    };
    configure_threads()?;
    match cli.command {
        Command::Gen {
            n_train,
            n_test,
            difficulty,
            seed,
            size,
            out,
            cfg,
        } => {
            let mut rc = resolve_config(&cfg, &overrides)?;
            rc.data.n_train = n_train.unwrap_or(rc.data.n_train);
            rc.data.n_test = n_test.unwrap_or(rc.data.n_test);
            rc.data.difficulty = difficulty.unwrap_or(rc.data.difficulty);
            rc.data.seed = seed.unwrap_or(rc.data.seed);
            rc.data.size = size.unwrap_or(rc.data.size);
            commands::gen(&rc, &out)
        }
        Command::Train { data, out, cfg } => {
            commands::train(&resolve_config(&cfg, &overrides)?, &data, &out)
        }
        Command::Predict {
            checkpoint,
            input,
            out,
            cfg,
        } => commands::predict(&cfg.config, &overrides, &checkpoint, &input, &out),
        Command::Eval {
            predictions,
            manifest,
            out,
            tolerance,
            thresholds,
            no_svg,
            cfg,
        } => {
            let mut rc = resolve_config(&cfg, &overrides)?;
            if tolerance.is_some() {
                rc.eval.tolerance_px = tolerance;
            }
            rc.eval.thresholds = thresholds.unwrap_or(rc.eval.thresholds);
            commands::eval(&rc, &predictions, &manifest, &out, !no_svg)
        }
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("srn: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("srn: {msg}");
            ExitCode::from(1)
        }
    }
}
