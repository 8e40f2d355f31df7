use std::path::PathBuf;
use std::process::ExitCode;

use actscale_cli::commands;
use actscale_cli::{ExperimentConfig, ExperimentReport, HarnessError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "actscale", version, about = "Action-scaled guidance and truncation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `workers`
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits
    GenDataset(Common),
    /// Train the denoiser on the train split
    Train(Common),
    /// Evaluate baseline, +CFG and +CFG & truncation on the test split
    Evaluate(Common),
    /// Evaluate the fixed vs action-scaled guidance/truncation grid
    Ablate(Common),
    /// Run the closed-form verification suite
    OracleCheck(Common),
    /// Write per-variant frame strips as PGM images
    DumpFrames {
        #[command(flatten)]
        common: Common,
        /// Comma-separated test episode ids
        #[arg(long, value_delimiter = ',', default_value = "0")]
        episodes: Vec<u64>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(report: &ExperimentReport) {
    println!(
        "{} episodes x {} variants, {} frames each, mu_act {:.4}, {:.1}s",
        report.rows.len() / report.variants.len().max(1),
        report.variants.len(),
        report.frames_per_episode,
        report.mu_act,
        report.wall_clock_secs
    );
    println!("{:<24} {:>9} {:>8} {:>10} {:>7} {:>12}", "variant", "psnr", "ssim", "latent_l2", "failed", "evaluations");
    for s in &report.summaries {
        println!(
            "{:<24} {:>9.4} {:>8.4} {:>10.5} {:>7} {:>12}",
            s.variant, s.mean_psnr, s.mean_ssim, s.mean_latent_l2, s.failed, s.evaluations
        );
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenDataset(c) => {
            for path in commands::cmd_gen_dataset(&load(&c)?)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let every = (cfg.train.steps / 20).max(1);
            let s = commands::cmd_train(&cfg, |step, loss| {
                if step % every == 0 || step + 1 == cfg.train.steps {
                    eprintln!("step {step:>6}  loss {loss:.6}");
                }
            })?;
            println!(
                "trained {} steps in {:.1}s, loss {:.6} -> {:.6}, wrote {}",
                s.steps,
                s.wall_clock_secs,
                s.initial_loss,
                s.final_loss,
                s.checkpoint.display()
            );
        }
        Command::Evaluate(c) => print_report(&commands::cmd_evaluate(&load(&c)?)?),
        Command::Ablate(c) => print_report(&commands::cmd_ablate(&load(&c)?)?),
        Command::OracleCheck(c) => {
            let results = commands::cmd_oracle_check(&load(&c)?)?;
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(HarnessError::ChecksFailed { failed, total: results.len() });
            }
        }
        Command::DumpFrames { common, episodes } => {
            for path in commands::cmd_dump_frames(&load(&common)?, &episodes)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
