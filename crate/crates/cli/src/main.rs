use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use shed_core::baselines::TeacherKind;
use shed_core::env::Family;
use shed_core::evalrep::perf_vector;
use shed_core::exec::Exec;
use shed_core::harness::{
    aggregate, export_plots, parse_strict, run, run_worldmodel_check, AggregateReport, Bounds, Checkpoint,
    FidelityConfig, RunConfig, RunLog, RunOptions,
};

#[derive(Parser)]
#[command(name = "shed", version, about = "Teacher-student environment design experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the evaluation and test sets a run config implies.
    GenEvalSet {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one teacher and write the run log and checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Evaluate a checkpointed student on the test set.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the world model against a scripted oracle and report fidelity.
    WorldmodelCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-seed statistics over run logs.
    Aggregate {
        logs: Vec<PathBuf>,
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write CSV series from an aggregate report or from run logs.
    ExportPlots {
        #[arg(long)]
        report: Option<PathBuf>,
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    teacher: Option<TeacherKind>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    env_budget: Option<usize>,
    #[arg(long)]
    student_steps: Option<usize>,
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(t) = self.teacher {
            c.teacher = t;
        }
        if let Some(f) = self.family {
            c.family = f;
            if self.config.is_none() {
                c.bounds = None;
            }
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(e) = self.episodes {
            c.episodes = e;
        }
        if let Some(t) = self.env_budget {
            c.env_budget = t;
        }
        if let Some(s) = self.student_steps {
            c.student_steps = s;
        }
        if self.sequential {
            c.parallel = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<RunLog>> {
    if paths.is_empty() {
        bail!("no run logs given");
    }
    paths
        .iter()
        .map(|p| {
            let p = if p.is_dir() { p.join("run.jsonl") } else { p.clone() };
            RunLog::load(&p).with_context(|| format!("reading {}", p.display()))
        })
        .collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenEvalSet { run, out } => {
            let c = run.resolve()?;
            let (eval, test) = c.build_sets()?;
            write_json(
                &out,
                &serde_json::json!({
                    "family": c.family,
                    "eval_set": eval.entries(),
                    "test_set": test.entries(),
                }),
            )?;
            info!("wrote {} evaluation and {} test environments to {}", eval.len(), test.len(), out.display());
        }
        Command::Train {
            run: args,
            out,
            no_checkpoints,
        } => {
            let c = args.resolve()?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), c.to_toml_string()?)?;
            let options = RunOptions {
                checkpoint_dir: (!no_checkpoints).then(|| out.clone()),
            };
            info!("training {} on {} (seed {}, config {})", c.teacher, c.family.name(), c.seed, c.hash());
            let log = run(&c, &options)?;
            let path = out.join("run.jsonl");
            log.save(&path)?;
            match log.final_test_mean() {
                Some(m) => info!("final mean test return {m:.4}; log at {}", path.display()),
                None => info!("log at {}", path.display()),
            }
        }
        Command::Evaluate {
            run: args,
            checkpoint,
            out,
        } => {
            let c = args.resolve()?;
            let ck = Checkpoint::load(&checkpoint)?;
            let student = ck.student(c.family, c.ppo.gamma, c.ppo.gae_lambda)?;
            let (_, test) = c.build_sets()?;
            let exec = if c.parallel { Exec::Parallel } else { Exec::Sequential };
            let returns = perf_vector(&student, &test, c.test_episodes, c.seed, exec)?.values;
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            let report = serde_json::json!({
                "checkpoint": checkpoint,
                "episode": ck.episode,
                "returns": returns,
                "mean": mean,
            });
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::WorldmodelCheck {
            config,
            seed,
            train_steps,
            out,
        } => {
            let mut c: FidelityConfig = match &config {
                Some(p) => parse_strict(&std::fs::read_to_string(p)?)?,
                None => FidelityConfig::default(),
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(t) = train_steps {
                c.train_steps = t;
            }
            let report = run_worldmodel_check(&c)?;
            for r in &report.reports {
                info!("sigma {}: {}", r.sigma, if r.pass { "pass" } else { "FAIL" });
            }
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if !report.pass {
                bail!("world-model fidelity check failed");
            }
        }
        Command::Aggregate { logs, bounds, out } => {
            let logs = load_logs(&logs)?;
            let bounds: Option<Bounds> = match bounds {
                Some(p) => Some(parse_strict(&std::fs::read_to_string(p)?)?),
                None => None,
            };
            let report = aggregate(&logs, bounds)?;
            for m in &report.methods {
                info!(
                    "{}: mean {:.4} +- {:.4}, IQM {:.4}, optimality gap {:.4} over {} runs",
                    m.method,
                    m.mean,
                    m.stderr,
                    m.iqm,
                    m.optimality_gap,
                    m.final_returns.len()
                );
            }
            write_json(&out, &report)?;
        }
        Command::ExportPlots { report, logs, out } => {
            let report: AggregateReport = match report {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => aggregate(&load_logs(&logs)?, None)?,
            };
            let files = export_plots(&report, &out)?;
            info!("wrote {} CSV files to {}", files.len(), out.display());
        }
    }
    Ok(())
}
