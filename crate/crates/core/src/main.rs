use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use feudal::harness::{self, RunConfig};

#[derive(Parser)]
#[command(name = "feudal", version, about = "Feudal multi-agent PPO with advantage-propagating rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.epochs=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut sets = self.sets.clone();
        if let Some(seed) = self.seed {
            sets.push(format!("seed={seed}"));
        }
        Ok(harness::load_config(self.config.as_deref(), &sets)?)
    }

    fn out_dir(&self, cfg: &RunConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and write logs, a checkpoint and a replay.
    Train(Common),
    /// Greedy return statistics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameters to load; defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `train.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Check the alignment identities on the bundled tabular systems.
    Verify(Common),
    /// Finite-difference audit of every network in the config.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg).context("train needs --out or `output` in the config")?;
            let summary = harness::train(&cfg, &out, |e| {
                eprintln!("step {:>8}  eval {:>3}  return {:.3} +- {:.3}", e.global_step, e.index, e.mean_return, e.std_return);
            })?;
            println!(
                "{} updates, {} steps; final return {}",
                summary.updates,
                summary.global_step,
                summary.final_mean(1).map_or("n/a".into(), |m| format!("{m:.3}"))
            );
            Ok(true)
        }
        Command::Eval { common, checkpoint, episodes } => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg);
            let ckpt = checkpoint.or_else(|| out.as_ref().map(|d| d.join(harness::artifacts::CHECKPOINT_FILE)).filter(|p| p.exists()));
            let n = episodes.unwrap_or(cfg.train.eval_episodes);
            let log = harness::eval(&cfg, ckpt.as_deref(), n, out.as_deref())?;
            println!("episodes {}  mean {:.6}  std {:.6}", log.episodes, log.mean_return, log.std_return);
            let agents: Vec<String> = log.agent_returns.iter().map(|r| format!("{r:.4}")).collect();
            println!("per agent {}", agents.join(" "));
            Ok(true)
        }
        Command::Verify(common) => {
            let cfg = common.load()?;
            let report = harness::verify(cfg.seed)?;
            for r in &report.checked {
                print!("{r}");
            }
            for r in &report.flagged {
                let verdict = if r.holds() { "gap within tolerance" } else { "gap as expected" };
                println!("flagged, assumptions violated ({verdict}):");
                print!("{r}");
            }
            let failures = report.failures();
            for f in &failures {
                eprintln!("FAILED {f}");
            }
            Ok(failures.is_empty())
        }
        Command::Gradcheck { common, trials } => {
            let cfg = common.load()?;
            let groups = harness::gradcheck(&cfg, trials)?;
            let mut ok = true;
            for g in &groups {
                let pass = g.max_rel_error < 1e-4;
                ok &= pass;
                println!(
                    "{:?}/{:?}: max relative error {:.3e} over {} entries ({} kinks skipped) {}",
                    g.level,
                    g.group,
                    g.max_rel_error,
                    g.checked,
                    g.kinks,
                    if pass { "ok" } else { "FAILED" }
                );
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
