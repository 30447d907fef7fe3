//! Newline-delimited JSON metrics log, one row per completed epoch.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use structvae_core::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Optimisation steps completed.
    pub step: u64,
    /// Epochs completed.
    pub epoch: u64,
    pub recon: f64,
    pub kl_gauss: f64,
    pub cat_term: f64,
    pub classifier: f64,
    pub total: f64,
    pub test_error_pct: f64,
    /// Wall-clock seconds since the process started training; `null` unless
    /// requested, so logs stay byte-identical across runs.
    pub seconds: Option<f64>,
}

/// Running sums of the per-step loss breakdown within the current epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochAccumulator {
    pub steps: u64,
    pub sums: LossBreakdown,
}

impl EpochAccumulator {
    pub fn add(&mut self, b: &LossBreakdown) {
        self.steps += 1;
        let s = &mut self.sums;
        s.recon += b.recon;
        s.kl_gauss += b.kl_gauss;
        s.cat_term += b.cat_term;
        s.classifier += b.classifier;
        s.total += b.total;
    }

    pub fn mean(&self) -> LossBreakdown {
        let n = self.steps.max(1) as f64;
        let s = &self.sums;
        LossBreakdown {
            recon: s.recon / n,
            kl_gauss: s.kl_gauss / n,
            cat_term: s.cat_term / n,
            classifier: s.classifier / n,
            total: s.total / n,
        }
    }
}

impl MetricsRow {
    pub fn new(step: u64, epoch: u64, loss: &LossBreakdown, test_error_pct: f64) -> Self {
        MetricsRow {
            step,
            epoch,
            recon: loss.recon,
            kl_gauss: loss.kl_gauss,
            cat_term: loss.cat_term,
            classifier: loss.classifier,
            total: loss.total,
            test_error_pct,
            seconds: None,
        }
    }
}

/// Appends one row and flushes it to disk.
pub fn append_row(path: &Path, row: &MetricsRow) -> Result<()> {
    let mut line = serde_json::to_string(row)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    f.write_all(line.as_bytes())
        .and_then(|_| f.sync_data())
        .with_context(|| format!("appending to {}", path.display()))
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}: row {}", path.display(), i + 1))
        })
        .collect()
}

/// Drops rows past `step`, e.g. ones written after the checkpoint a run
/// resumes from.
pub fn truncate_after(path: &Path, step: u64) -> Result<()> {
    let rows = read_rows(path)?;
    if rows.iter().all(|r| r.step <= step) {
        return Ok(());
    }
    let mut text = String::new();
    for r in rows.iter().filter(|r| r.step <= step) {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("rewriting {}", path.display()))
}
