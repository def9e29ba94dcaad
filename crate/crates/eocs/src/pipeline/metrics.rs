//! Accuracy metrics against the enumeration oracle, report rendering and
//! the steady-state timing helper.
//!
//! The four metrics are nested in stringency: an exact current match also
//! passes both tolerance bands, and anything within 5% satisfies the
//! selectivity criterion with reliability factor 1.2. A failed fault solve
//! under a predicted condition counts against every current metric.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use super::dataset::Dataset;
use super::PipelineError;
use crate::config::MetricsConfig;
use crate::fault::{fault_current_magnitude, FaultConfig};
use crate::features::encode;
use crate::grid::GridModel;
use crate::nn::{decode_eoc, pgnn_forward, PgnnModel};

/// Absolute tolerance for "the same short-circuit current".
pub const SCC_EXACT_TOL: f64 = 1e-9;

/// Accuracy row for one method.
#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub samples: usize,
    /// Exact operating-condition match rate, percent.
    pub oc_acc: f64,
    /// Exact fault-current match rate, percent.
    pub scc_acc: f64,
    /// (relative tolerance, rate) pairs, ascending tolerance.
    pub e_scc_acc: Vec<(f64, f64)>,
    /// Selectivity-criterion rate, percent.
    pub ps_acc: f64,
    /// Mean wall time per problem, milliseconds.
    pub mean_time_ms: f64,
}

impl MethodReport {
    /// Stringency chain: PS >= loosest band >= ... >= exact SCC.
    pub fn ordering_ok(&self) -> bool {
        let mut chain = vec![self.scc_acc];
        chain.extend(self.e_scc_acc.iter().map(|&(_, acc)| acc));
        chain.push(self.ps_acc);
        chain.windows(2).all(|w| w[0] <= w[1] + 1e-12)
    }
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct EvalReport {
    pub rows: Vec<MethodReport>,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bands: Vec<f64> = self
            .rows
            .first()
            .map(|r| r.e_scc_acc.iter().map(|&(e, _)| e).collect())
            .unwrap_or_default();
        write!(f, "{:<12} {:>8} {:>8}", "method", "OC-Acc", "SCC-Acc")?;
        for e in &bands {
            write!(f, " {:>9}", format!("{}%-SCC", e * 100.0))?;
        }
        writeln!(f, " {:>8} {:>12}", "PS-Acc", "time")?;
        for row in &self.rows {
            write!(f, "{:<12} {:>7.1}% {:>7.1}%", row.method, row.oc_acc, row.scc_acc)?;
            for &(_, acc) in &row.e_scc_acc {
                write!(f, " {:>8.1}%", acc)?;
            }
            let time = if row.mean_time_ms >= 1000.0 {
                format!("{:.2}s", row.mean_time_ms / 1000.0)
            } else {
                format!("{:.2}ms", row.mean_time_ms)
            };
            writeln!(f, " {:>7.1}% {:>12}", row.ps_acc, time)?;
        }
        Ok(())
    }
}

pub(crate) struct SampleScore {
    pub oc: bool,
    pub scc: bool,
    pub bands: Vec<bool>,
    pub ps: bool,
}

/// Score a predicted current against the oracle current.
pub(crate) fn score_currents(
    predicted: Option<f64>,
    oracle: f64,
    oc: bool,
    metrics: &MetricsConfig,
) -> SampleScore {
    let mut bands = vec![false; metrics.e_values.len()];
    let (mut scc, mut ps) = (false, false);
    if let Some(i_pred) = predicted {
        scc = (i_pred - oracle).abs() <= SCC_EXACT_TOL;
        for (slot, &e) in bands.iter_mut().zip(&metrics.e_values) {
            *slot = (i_pred - oracle).abs() <= e * oracle.abs();
        }
        ps = metrics.k_reliability * i_pred > oracle;
    }
    SampleScore { oc, scc, bands, ps }
}

pub(crate) fn aggregate_scores(
    method: &str,
    scores: &[SampleScore],
    metrics: &MetricsConfig,
    mean_time_ms: f64,
) -> MethodReport {
    let n = scores.len().max(1) as f64;
    let pct = |count: usize| 100.0 * count as f64 / n;
    let report = MethodReport {
        method: method.to_string(),
        samples: scores.len(),
        oc_acc: pct(scores.iter().filter(|s| s.oc).count()),
        scc_acc: pct(scores.iter().filter(|s| s.scc).count()),
        e_scc_acc: metrics
            .e_values
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, pct(scores.iter().filter(|s| s.bands[i]).count())))
            .collect(),
        ps_acc: pct(scores.iter().filter(|s| s.ps).count()),
        mean_time_ms,
    };
    debug_assert!(report.ordering_ok(), "metric stringency chain violated");
    report
}

/// Evaluate a trained model on an oracle-labeled dataset.
pub fn evaluate(
    model: &PgnnModel,
    grid: &GridModel,
    ds: &Dataset,
    metrics: &MetricsConfig,
    fault_cfg: &FaultConfig,
) -> Result<MethodReport, PipelineError> {
    if ds.is_empty() {
        return Err(PipelineError::Format("empty evaluation set".into()));
    }
    let outcomes: Vec<Result<(SampleScore, Duration), PipelineError>> = ds
        .samples
        .par_iter()
        .map(|sample| {
            let started = Instant::now();
            let fs = encode(grid, &sample.tau0, sample.p_l, &model.scaling)?;
            let scores = pgnn_forward(model, &fs)?;
            let predicted = decode_eoc(&scores, ds.k);
            let inference = started.elapsed();

            let oc = predicted == sample.label;
            let outages: Vec<usize> = predicted
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| i)
                .collect();
            let tau_pred = sample.tau0.with_outages(&outages);
            let i_pred = fault_current_magnitude(grid, &tau_pred, sample.p_l, fault_cfg).ok();
            Ok((score_currents(i_pred, sample.i_max_oracle, oc, metrics), inference))
        })
        .collect();
    let mut scores = Vec::with_capacity(ds.len());
    let mut total_time = Duration::ZERO;
    for outcome in outcomes {
        let (score, time) = outcome?;
        scores.push(score);
        total_time += time;
    }
    let mean_ms = total_time.as_secs_f64() * 1000.0 / ds.len() as f64;
    Ok(aggregate_scores("pgnn", &scores, metrics, mean_ms))
}

/// Steady-state wall-time measurement: skip warm-up runs, report the median
/// of the remaining repetitions.
pub fn median_duration(warmup: usize, reps: usize, mut f: impl FnMut()) -> Duration {
    for _ in 0..warmup {
        f();
    }
    let mut times: Vec<Duration> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    times.sort();
    times[times.len() / 2]
}
