use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use diffcore::Tensor;
use latentpref::ensemble::{EnsembleManifest, EnsembleMode, RewardEnsemble};
use latentpref::envs::{Task, TaskKind};
use latentpref::harness::api;
use latentpref::harness::{
    analyze_latents, analyze_reward_range, run_experiment, run_experiment_with, sweep, AnnotationService,
    ExperimentConfig, PoolSpec, SweepAxis,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "latentpref", version, about = "Preference-based RL experiments on toy tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for config.json, metrics.csv, events.log and checkpoints.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Run one experiment per (value, seed) along an axis.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// phi | pool_size | ensemble_mode
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Reward-range and latent analyses of saved ensembles.
    Analyze {
        /// Ensemble checkpoint directories (each holding manifest.json).
        #[arg(required = true)]
        ensembles: Vec<PathBuf>,
        #[arg(long, default_value = "gridworld")]
        task: TaskKind,
        #[arg(long, default_value_t = 100)]
        probe_states: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment labelled through the HTTP annotation API.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "runs/human")]
        out: PathBuf,
    },
}

/// Flags override values from `--config`.
#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    ensemble_mode: Option<EnsembleMode>,
    #[arg(long)]
    feedback_every: Option<usize>,
    #[arg(long)]
    queries_per_session: Option<usize>,
    /// Pool size, "oracle" or "human".
    #[arg(long)]
    pool: Option<PoolSpec>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    reward_steps: Option<usize>,
    #[arg(long)]
    policy_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        set!(
            task,
            seed,
            phi,
            ensemble_size,
            ensemble_mode,
            feedback_every,
            queries_per_session,
            pool,
            iterations,
            reward_steps,
            policy_steps,
            eval_every
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(out: &latentpref::harness::RunOutput, dir: &Path) {
    match out.final_return() {
        Some(r) => println!("final return {r:.4}; run written to {}", dir.display()),
        None => println!("no evaluations; run written to {}", dir.display()),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    match Cli::parse().command {
        Command::Run { config, out } => {
            let cfg = config.resolve()?;
            if cfg.pool == PoolSpec::Human {
                bail!("a human pool needs the annotation API; use `serve`");
            }
            let result = run_experiment(&cfg, Some(&out))?;
            report(&result, &out);
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let result = sweep(&config.resolve()?, axis, &values, &seeds, Some(&out))?;
            for v in &values {
                let finals = result.final_returns(v);
                println!(
                    "{v}: mean final return {:?} over {} runs",
                    result.mean_final_return(v),
                    finals.len()
                );
            }
            for r in result.runs.iter().filter(|r| r.error.is_some()) {
                println!(
                    "{} seed {} failed: {}",
                    r.value,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
        }
        Command::Analyze {
            ensembles,
            task,
            probe_states,
            bins,
            out,
        } => {
            let task = Task::new(task);
            let probe = Tensor::from_rows(&task.probe_inputs(probe_states, &mut ChaCha8Rng::seed_from_u64(0)))?;
            let loaded = ensembles
                .iter()
                .map(|d| Ok((EnsembleManifest::read(d)?.phi, RewardEnsemble::load(d)?)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(f64, &RewardEnsemble)> = loaded.iter().map(|(p, e)| (*p, e)).collect();
            let ranges = analyze_reward_range(&refs, &probe, bins)?;
            let latents = loaded
                .iter()
                .map(|(_, e)| analyze_latents(e, &probe))
                .collect::<latentpref::Result<Vec<_>>>()?;
            let report = serde_json::json!({ "reward_ranges": ranges, "latents": latents });
            match out {
                Some(p) => std::fs::write(&p, serde_json::to_string_pretty(&report)?)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Serve { config, addr, out } => {
            let mut cfg = config.resolve()?;
            cfg.pool = PoolSpec::Human;
            std::fs::create_dir_all(&out)?;
            let task = Task::new(cfg.task);
            let service = Arc::new(AnnotationService::new(
                task.meta(),
                Some(&out.join("preferences.jsonl")),
            )?);
            let runtime = tokio::runtime::Runtime::new()?;
            let server = runtime.spawn(api::serve(service.clone(), addr));
            println!("annotation api on http://{addr}");
            let result = run_experiment_with(&cfg, Some(&out), Some(service))?;
            report(&result, &out);
            server.abort();
        }
    }
    Ok(())
}
