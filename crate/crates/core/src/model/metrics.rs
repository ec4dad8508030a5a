//! Popularity metrics on log2-scaled counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cascade's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cascade_id: String,
    pub truth: u64,
    pub predicted: f64,
    pub squared_log_error: f64,
}

impl PredictionRecord {
    pub fn new(cascade_id: impl Into<String>, truth: u64, predicted: f64) -> Self {
        PredictionRecord {
            cascade_id: cascade_id.into(),
            truth,
            predicted,
            squared_log_error: squared_log_error(truth as f64, predicted),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub msle: f64,
    pub mape: f64,
    pub r2: f64,
    pub count: usize,
}

impl Metrics {
    pub fn from_records(records: &[PredictionRecord]) -> Result<Self> {
        let truth: Vec<f64> = records.iter().map(|r| r.truth as f64).collect();
        let pred: Vec<f64> = records.iter().map(|r| r.predicted).collect();
        Ok(Metrics {
            msle: msle(&truth, &pred)?,
            mape: mape(&truth, &pred)?,
            r2: r2(&truth, &pred)?,
            count: records.len(),
        })
    }
}

pub fn squared_log_error(truth: f64, predicted: f64) -> f64 {
    let d = (truth + 1.0).log2() - (predicted + 1.0).log2();
    d * d
}

fn check(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::Empty("metric inputs".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::Config(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    Ok(())
}

/// Mean of `(log2(P+1) - log2(P̂+1))²`.
pub fn msle(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    Ok(truth.iter().zip(pred).map(|(&p, &q)| squared_log_error(p, q)).sum::<f64>() / truth.len() as f64)
}

/// Mean of `|log2(P+2) - log2(P̂+2)| / log2(P+2)`.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let total: f64 = truth
        .iter()
        .zip(pred)
        .map(|(&p, &q)| {
            let a = (p + 2.0).log2();
            (a - (q + 2.0).log2()).abs() / a
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// `1 - SSE/SST` on `log2(P+1)`. With zero variance in the labels the value
/// is 1 for a perfect fit and negative infinity otherwise.
pub fn r2(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check(truth, pred)?;
    let y: Vec<f64> = truth.iter().map(|p| (p + 1.0).log2()).collect();
    let yh: Vec<f64> = pred.iter().map(|p| (p + 1.0).log2()).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sse: f64 = y.iter().zip(&yh).map(|(a, b)| (a - b) * (a - b)).sum();
    if sst == 0.0 {
        return Ok(if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - sse / sst)
}
