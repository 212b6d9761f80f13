use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One evaluation point. `env_steps` is the logical timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub env_steps: u64,
    pub eval_return: f64,
    pub success_rate: f64,
    pub loss_supervised: f64,
    pub loss_constraint: f64,
    pub loss_total: f64,
    /// Mean probe-set latent KL of each member, `;`-separated.
    pub member_kl: String,
    pub reward_min: f64,
    pub reward_max: f64,
    pub reward_mean: f64,
    pub labels: usize,
}

/// Append-only `metrics.csv` writer; each record is flushed immediately.
pub struct MetricsWriter {
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(File::create(path)?);
        writer.write_record(HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        self.writer.serialize(record)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub const HEADER: [&str; 12] = [
    "iteration",
    "env_steps",
    "eval_return",
    "success_rate",
    "loss_supervised",
    "loss_constraint",
    "loss_total",
    "member_kl",
    "reward_min",
    "reward_max",
    "reward_mean",
    "labels",
];

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Plain-text event log. Lines carry wall-clock offsets, so unlike
/// `metrics.csv` this file is not reproducible byte for byte.
pub struct EventLog {
    file: Option<File>,
    start: std::time::Instant,
}

impl EventLog {
    pub fn create(path: Option<&Path>) -> Result<Self> {
        Ok(Self {
            file: path.map(File::create).transpose()?,
            start: std::time::Instant::now(),
        })
    }

    pub fn log(&mut self, message: impl AsRef<str>) {
        let message = message.as_ref();
        tracing::info!("{message}");
        if let Some(f) = &mut self.file {
            let ms = self.start.elapsed().as_millis();
            // the log is diagnostic; a failed write must not abort a run
            let _ = writeln!(f, "{ms:>9} {message}");
        }
    }
}
