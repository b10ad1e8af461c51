//! Versioned JSON report of a sweep and the CSV tables derived from it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use tgedmd::amuse::EstimatorMode;

use crate::config::DataSource;
use crate::error::CliResult;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

/// Smallest kept and largest discarded singular value at one core.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularValueTail {
    pub kept_min: f64,
    pub dropped_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCounters {
    /// Scalar multiplies of the reduced-matrix assembly.
    pub reduced_multiplies: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    /// `r_0, ..., r_p` for tensor trains; the single whitening rank for
    /// the dense estimator.
    pub achieved_ranks: Vec<usize>,
    pub singular_value_tails: Vec<SingularValueTail>,
    pub eigenvalues: Vec<Eigenvalue>,
    /// `null` where the rate vanishes.
    pub timescales: Vec<Option<f64>>,
    pub op_counters: Option<OpCounters>,
}

impl PointReport {
    pub fn max_rank(&self) -> usize {
        self.achieved_ranks.iter().copied().max().unwrap_or(0)
    }

    pub fn last_rank(&self) -> usize {
        self.achieved_ranks.last().copied().unwrap_or(0)
    }
}

/// Timescales `t_1, t_2, ...` over all seeds of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub epsilon: f64,
    pub samples: usize,
    pub seeds: usize,
    pub mean: Vec<Option<f64>>,
    /// `null` with fewer than two finite values.
    pub stderr: Vec<Option<f64>>,
    pub max_rank_min: usize,
    pub max_rank_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// `tgedmd` or `gedmd`.
    pub estimator: String,
    pub model: String,
    pub mode: EstimatorMode,
    pub data: DataSource,
    pub mode_sizes: Vec<usize>,
    /// Dimension of the basis coordinates.
    pub coordinate_dim: usize,
    pub points: Vec<PointReport>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointTiming {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    pub seconds: f64,
}

pub fn timescale_entry(t: f64) -> Option<f64> {
    t.is_finite().then_some(t)
}

fn mean_and_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// Groups points by `(epsilon, samples)` in order of first appearance.
pub fn summarize(points: &[PointReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for p in points {
        if !keys.contains(&(p.epsilon, p.samples)) {
            keys.push((p.epsilon, p.samples));
        }
    }
    keys.into_iter()
        .map(|(epsilon, samples)| {
            let group: Vec<&PointReport> =
                points.iter().filter(|p| p.epsilon == epsilon && p.samples == samples).collect();
            let n_t = group.iter().map(|p| p.timescales.len()).min().unwrap_or(0);
            let (mean, stderr) = (1..n_t)
                .map(|k| {
                    let finite: Vec<f64> = group.iter().filter_map(|p| p.timescales[k]).collect();
                    mean_and_stderr(&finite)
                })
                .unzip();
            SummaryRow {
                epsilon,
                samples,
                seeds: group.len(),
                mean,
                stderr,
                max_rank_min: group.iter().map(|p| p.max_rank()).min().unwrap_or(0),
                max_rank_max: group.iter().map(|p| p.max_rank()).max().unwrap_or(0),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:e}"))
}

/// `epsilon,samples,k,mean,stderr,seeds,max_rank_min,max_rank_max`.
pub fn write_timescales_csv(out: &mut impl Write, summary: &[SummaryRow]) -> CliResult<()> {
    writeln!(out, "epsilon,samples,k,mean,stderr,seeds,max_rank_min,max_rank_max")?;
    for row in summary {
        for (k, (mean, stderr)) in row.mean.iter().zip(&row.stderr).enumerate() {
            writeln!(
                out,
                "{:e},{},{},{},{},{},{},{}",
                row.epsilon,
                row.samples,
                k + 1,
                cell(*mean),
                cell(*stderr),
                row.seeds,
                row.max_rank_min,
                row.max_rank_max
            )?;
        }
    }
    Ok(())
}

/// Side-by-side mean timescales of two reports at matching sweep points.
pub fn write_comparison_csv(out: &mut impl Write, tt: &RunReport, dense: &RunReport) -> CliResult<()> {
    writeln!(out, "epsilon,samples,k,tgedmd_mean,tgedmd_stderr,gedmd_mean,gedmd_stderr")?;
    for d in &dense.summary {
        let Some(t) = tt.summary.iter().find(|t| t.epsilon == d.epsilon && t.samples == d.samples) else {
            continue;
        };
        for k in 0..d.mean.len().min(t.mean.len()) {
            writeln!(
                out,
                "{:e},{},{},{},{},{},{}",
                d.epsilon,
                d.samples,
                k + 1,
                cell(t.mean[k]),
                cell(t.stderr[k]),
                cell(d.mean[k]),
                cell(d.stderr[k])
            )?;
        }
    }
    Ok(())
}
