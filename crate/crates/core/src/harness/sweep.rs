use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PoolSpec};
use super::metrics::MetricsRecord;
use super::runner::run_experiment;
use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Phi,
    PoolSize,
    EnsembleMode,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi" => Ok(SweepAxis::Phi),
            "pool_size" => Ok(SweepAxis::PoolSize),
            "ensemble_mode" => Ok(SweepAxis::EnsembleMode),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// Applies one axis value to `template`. `single` also forces one member.
pub fn apply_axis(template: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = template.clone();
    match axis {
        SweepAxis::Phi => {
            cfg.phi = value.parse().map_err(|_| Error::Config(format!("bad phi {value:?}")))?;
        }
        SweepAxis::PoolSize => cfg.pool = value.parse::<PoolSpec>()?,
        SweepAxis::EnsembleMode => {
            cfg.ensemble_mode = value.parse()?;
            if cfg.ensemble_mode == EnsembleMode::Single {
                cfg.ensemble_size = 1;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub metrics: Vec<MetricsRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: String,
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub runs: Vec<SweepRun>,
    pub curves: Vec<CurvePoint>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl SweepResult {
    /// Final evaluation returns of the successful runs for `value`.
    pub fn final_returns(&self, value: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.value == value)
            .filter_map(|r| r.metrics.last().map(|m| m.eval_return))
            .collect()
    }

    pub fn mean_final_return(&self, value: &str) -> Option<f64> {
        let r = self.final_returns(value);
        (!r.is_empty()).then(|| mean_std(&r).0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for p in &self.curves {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One run per `(value, seed)`, in parallel. Failed runs are recorded and
/// do not stop the sweep. Run directories go under `dir/<value>/seed_<s>`.
pub fn sweep(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
    dir: Option<&Path>,
) -> Result<SweepResult> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let jobs: Vec<(String, u64)> = values
        .iter()
        .flat_map(|v| seeds.iter().map(move |s| (v.clone(), *s)))
        .collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|(value, seed)| {
            let outcome = apply_axis(template, axis, value).and_then(|mut cfg| {
                cfg.seed = *seed;
                let run_dir = dir.map(|d| d.join(value).join(format!("seed_{seed}")));
                run_experiment(&cfg, run_dir.as_deref())
            });
            match outcome {
                Ok(out) => SweepRun {
                    value: value.clone(),
                    seed: *seed,
                    metrics: out.metrics,
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(value, seed, error = %e, "sweep run failed");
                    SweepRun {
                        value: value.clone(),
                        seed: *seed,
                        metrics: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();

    let mut curves = Vec::new();
    for value in values {
        let group: Vec<&SweepRun> = runs.iter().filter(|r| &r.value == value && r.error.is_none()).collect();
        let Some(first) = group.first() else { continue };
        for (k, point) in first.metrics.iter().enumerate() {
            let xs: Vec<f64> = group
                .iter()
                .filter_map(|r| r.metrics.get(k))
                .map(|m| m.eval_return)
                .collect();
            let (mean_return, std_return) = mean_std(&xs);
            curves.push(CurvePoint {
                value: value.clone(),
                iteration: point.iteration,
                mean_return,
                std_return,
                runs: xs.len(),
            });
        }
    }
    let result = SweepResult { axis, runs, curves };
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        result.write_csv(&d.join("sweep.csv"))?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values_apply() {
        let t = ExperimentConfig::default();
        assert_eq!(apply_axis(&t, SweepAxis::Phi, "10").unwrap().phi, 10.0);
        assert_eq!(
            apply_axis(&t, SweepAxis::PoolSize, "1").unwrap().pool,
            PoolSpec::Size(1)
        );
        let single = apply_axis(&t, SweepAxis::EnsembleMode, "single").unwrap();
        assert_eq!((single.ensemble_mode, single.ensemble_size), (EnsembleMode::Single, 1));
        assert!(apply_axis(&t, SweepAxis::Phi, "-3").is_err());
    }

    #[test]
    fn empty_sweep_rejected() {
        let t = ExperimentConfig::default();
        assert!(sweep(&t, SweepAxis::Phi, &[], &[0], None).is_err());
    }
}
