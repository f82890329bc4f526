//! Per-episode training metrics, streamed to CSV.

use std::fs::File;
use std::path::Path;

pub const METRICS_HEADER: [&str; 7] =
    ["step", "episode", "episode_return", "loss", "epsilon", "mean_q", "wall_seconds"];

/// One finished episode. `loss` is the mean over the updates made during
/// the episode (NaN when there were none); `mean_q` averages the greedy
/// action value over the episode's decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub episode_return: f64,
    pub loss: f64,
    pub epsilon: f64,
    pub mean_q: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    fn fields(&self) -> [String; 7] {
        [
            self.step.to_string(),
            self.episode.to_string(),
            self.episode_return.to_string(),
            self.loss.to_string(),
            self.epsilon.to_string(),
            self.mean_q.to_string(),
            self.wall_seconds.to_string(),
        ]
    }
}

/// Writes the header on creation and flushes after every row, so a
/// partially finished run still leaves a readable file.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> csv::Result<()> {
        self.inner.write_record(row.fields())?;
        self.inner.flush()?;
        Ok(())
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.inner.flush();
    }
}

/// Mean of the values seen so far, NaN when empty.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct RunningMean {
    sum: f64,
    count: u64,
}

impl RunningMean {
    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}
