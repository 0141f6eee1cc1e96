use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retention_flow::config::RunConfig;
use retention_flow::driver::{
    run_calibrate, run_eval, run_gradcheck, run_sanity, run_train, SanityConfig, CHECKPOINT_FILE,
};
use retention_flow::metrics::Metrics;
use retention_flow::tabular::TabularTrainConfig;
use retention_flow::Result;

/// Retention-oriented flow-network recommender and user simulator.
#[derive(Parser)]
#[command(name = "retflow", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured policy.
    Train,
    /// Evaluate a frozen policy on a fresh simulator.
    Eval {
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `run.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Finite-difference check of every model gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train a tabular model on a reward tree and report terminal TV distance.
    Sanity {
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 3)]
        branching: usize,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        #[arg(long, default_value_t = TabularTrainConfig::default().steps)]
        steps: usize,
    },
    /// Fit behavior weights and base rates from an interaction log.
    Calibrate {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long = "write")]
        write: Option<PathBuf>,
    },
}

fn load(global: &Global) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.run.out = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(m: &Metrics) {
    println!("return_time    {:.4}", m.return_time);
    println!("retention      {:.4}", m.retention);
    println!("click_rate     {:.4}", m.click_rate);
    println!("long_view_rate {:.4}", m.long_view_rate);
    println!("like_rate      {:.4}", m.like_rate);
}

/// `Ok(true)` when the command succeeded, `Ok(false)` when a check failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train => {
            let cfg = load(&cli.global)?;
            let o = run_train(&cfg)?;
            println!(
                "{} episodes, {} train steps in {:.1}s, output in {}",
                o.episodes,
                o.losses.len(),
                o.seconds,
                o.out_dir.display()
            );
            print_metrics(&o.final_metrics);
            Ok(true)
        }
        Command::Eval { checkpoint, episodes } => {
            let cfg = load(&cli.global)?;
            let ckpt = checkpoint.unwrap_or_else(|| PathBuf::from(&cfg.run.out).join(CHECKPOINT_FILE));
            let m = run_eval(&cfg, Some(&ckpt), episodes.unwrap_or(cfg.run.eval_episodes))?;
            print_metrics(&m);
            Ok(true)
        }
        Command::Gradcheck { eps, tol } => {
            let cfg = load(&cli.global)?;
            let r = run_gradcheck(&cfg, eps, tol)?;
            for t in &r.tensors {
                println!("{:<20} {:>4} probes  max rel err {:.3e}", t.name, t.checked, t.max_rel_error);
            }
            println!(
                "max relative error {:.3e} ({}), tolerance {:.1e}: {}",
                r.max_rel_error,
                r.worst.as_deref().unwrap_or("-"),
                r.tolerance,
                if r.passed { "PASS" } else { "FAIL" }
            );
            Ok(r.passed)
        }
        Command::Sanity {
            depth,
            branching,
            threshold,
            steps,
        } => {
            let cfg = SanityConfig {
                depth,
                branching,
                seed: cli.global.seed.unwrap_or(SanityConfig::default().seed),
                threshold,
                train: TabularTrainConfig {
                    steps,
                    ..TabularTrainConfig::default()
                },
            };
            let r = run_sanity(&cfg)?;
            println!(
                "terminal TV {:.5} (threshold {}) in {:.2}s: {}",
                r.tv,
                r.threshold,
                r.seconds,
                if r.passed { "PASS" } else { "FAIL" }
            );
            Ok(r.passed)
        }
        Command::Calibrate { logs, write } => {
            let out = write
                .or(cli.global.out)
                .ok_or_else(|| retention_flow::Error::Usage("calibrate needs --out <path>".into()))?;
            let fits = run_calibrate(&logs, &out)?;
            for f in &fits {
                println!("{:<10} rate {:.4}  omega {:.4}  c {:.4}", f.name, f.rate, f.omega, f.bias);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
