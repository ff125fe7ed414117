use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae_db: f64,
    pub rmse_db: f64,
    pub median_abs_err_db: f64,
    /// Nearest-rank 95th percentile of absolute errors.
    pub p95_abs_err_db: f64,
    pub count: usize,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str = "count\tmae_db\trmse_db\tmedian_abs_err_db\tp95_abs_err_db";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            self.count, self.mae_db, self.rmse_db, self.median_abs_err_db, self.p95_abs_err_db
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples      {}", self.count)?;
        writeln!(f, "MAE (dB)     {:.3}", self.mae_db)?;
        writeln!(f, "RMSE (dB)    {:.3}", self.rmse_db)?;
        writeln!(f, "median (dB)  {:.3}", self.median_abs_err_db)?;
        write!(f, "P95 (dB)     {:.3}", self.p95_abs_err_db)
    }
}

/// Value at rank `⌈q·n⌉` (1-based) of the ascending `sorted`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn error_metrics(predictions: &[f64], truths: &[f64]) -> Result<MetricReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut abs: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).collect();
    if abs.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid("non-finite prediction or truth"));
    }
    let n = abs.len() as f64;
    let mae = abs.iter().sum::<f64>() / n;
    let rmse = (abs.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    abs.sort_by(f64::total_cmp);
    Ok(MetricReport {
        mae_db: mae,
        rmse_db: rmse,
        median_abs_err_db: median(&abs).expect("non-empty"),
        p95_abs_err_db: nearest_rank(&abs, 0.95).expect("non-empty"),
        count: abs.len(),
    })
}
