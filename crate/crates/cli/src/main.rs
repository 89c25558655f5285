use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bimanual_cli::commands::{
    cmd_eval, cmd_gen, cmd_gradcheck, cmd_loso, cmd_predict, cmd_relations, cmd_train, EvalSource,
};
use bimanual_cli::config::{RunConfig, CONFIG_ENV};
use bimanual_core::evaluation::AblationMode;
use bimanual_core::{Error, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Per-hand action recognition from tracked 3D boxes via scene graphs and a
/// graph network.
///
/// Every command writes below `<output_dir>/<config hash>/` and prints the
/// directory it wrote. Errors are printed as one line on stderr:
/// `error kind=<kind> exit=<code>: <message>`. Exit codes: 0 success,
/// 2 config error, 3 data error, 4 numeric divergence or failed gradient check.
#[derive(Parser, Debug)]
#[command(name = "bimanual", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; unknown keys are rejected. Without it the
    /// built-in defaults listed below apply.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Root seed for all randomness [default: config `seed`, 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that holds run directories [default: config `output_dir`, "runs"]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Feature ablation: full, contact_only, centroids, no_temporal [default: config `experiment.ablation`, full]
    #[arg(long, global = true)]
    ablation: Option<AblationMode>,
    /// k of the top-k metrics [default: config `experiment.top_k`, 3]
    #[arg(long, global = true)]
    top_k: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic suite (one frame file per recording).
    Gen,
    /// Track, smooth and relate boxes; write one scene-graph file per recording.
    Relations {
        /// Frame file or directory of frame files.
        #[arg(long)]
        frames: PathBuf,
    },
    /// Train a model; validation uses repetition 0 of each task.
    Train {
        /// Directory of frame files.
        #[arg(long)]
        dataset: PathBuf,
        /// Exclude this subject's recordings [default: train on all subjects]
        #[arg(long)]
        test_subject: Option<u32>,
    },
    /// Per-frame action distributions for both hands, plus segment timelines.
    Predict {
        /// Weight file written by `train`.
        #[arg(long)]
        weights: PathBuf,
        /// Frame file or directory of frame files.
        #[arg(long)]
        frames: PathBuf,
    },
    /// Metrics and confusion matrices for weights or a predictions file.
    Eval {
        /// Directory of labeled frame files.
        #[arg(long)]
        dataset: PathBuf,
        /// Weight file to run on the dataset.
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        weights: Option<PathBuf>,
        /// Predictions file written by `predict`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Score only this subject's recordings [default: all]
        #[arg(long)]
        test_subject: Option<u32>,
    },
    /// Leave-one-subject-out training and testing with pooled predictions.
    Loso {
        /// Directory of frame files.
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated ablation modes [default: the configured ablation]
        #[arg(long, value_delimiter = ',')]
        modes: Vec<AblationMode>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Number of random graphs.
        #[arg(long, default_value_t = 100)]
        graphs: usize,
    },
}

fn merged(g: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    if let Some(a) = g.ablation {
        cfg.experiment.ablation = a;
    }
    if let Some(k) = g.top_k {
        cfg.experiment.top_k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_dir(p: &Path) {
    println!("{}", p.display());
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = merged(&cli.global)?;
    match cli.command {
        Command::Gen => print_dir(&cmd_gen(&cfg)?),
        Command::Relations { frames } => print_dir(&cmd_relations(&cfg, &frames)?),
        Command::Train { dataset, test_subject } => print_dir(&cmd_train(&cfg, &dataset, test_subject)?),
        Command::Predict { weights, frames } => print_dir(&cmd_predict(&cfg, &weights, &frames)?),
        Command::Eval { dataset, weights, predictions, test_subject } => {
            let source = match (&weights, &predictions) {
                (Some(w), _) => EvalSource::Weights(w),
                (None, Some(p)) => EvalSource::Predictions(p),
                (None, None) => return Err(Error::InvalidArgument("--weights or --predictions is required".into())),
            };
            let (dir, s) = cmd_eval(&cfg, source, &dataset, test_subject)?;
            print_dir(&dir);
            println!(
                "samples={} top1_macro_f1={:.4} top{}_macro_f1={:.4}",
                s.samples, s.top1_macro_f1, s.top_k, s.topk_macro_f1
            );
        }
        Command::Loso { dataset, modes } => {
            let modes = if modes.is_empty() { vec![cfg.experiment.ablation] } else { modes };
            for (dir, r) in cmd_loso(&cfg, &dataset, &modes)? {
                print_dir(&dir);
                println!("mode={} top1_macro_f1={:.4} top3_macro_f1={:.4}", r.mode, r.top1.macro_avg.f1, r.top3.macro_avg.f1);
            }
        }
        Command::Gradcheck { graphs } => {
            let (dir, r) = cmd_gradcheck(&cfg, graphs)?;
            print_dir(&dir);
            println!(
                "graphs={} parameters={} kinks_skipped={} max_rel_error={:.3e} passed={}",
                r.graphs, r.parameters_checked, r.kinks_skipped, r.max_rel_error, r.passed
            );
            if !r.passed {
                eprintln!("error kind=gradcheck_failed exit=4: max relative error {:.3e}", r.max_rel_error);
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let defaults = format!("Configuration keys and defaults:\n\n{}", RunConfig::default().to_toml());
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} exit={}: {msg}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
