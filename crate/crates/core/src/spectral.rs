//! Eigenvalues, implied timescales, eigenfunctions along the data and
//! metastable clustering.

use std::io::Write;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::amuse::EstimatorMode;
use crate::error::{Error, Result};
use crate::linalg::{self, c64};
use crate::tgedmd::ReducedGenerator;

/// Below this magnitude of the real part the timescale is reported as
/// infinite.
pub const ZERO_RATE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    /// Sorted by descending real part.
    pub eigenvalues: Vec<c64>,
    /// `-1 / Re(kappa)`, infinite when the rate vanishes.
    pub timescales: Vec<f64>,
    /// `r_p x n_ev`.
    pub eigenvectors: Mat<c64>,
    /// Eigenfunction values at the samples, `m x n_ev`.
    pub eigenfunctions: Mat<c64>,
}

impl SpectrumReport {
    /// Distance of the leading eigenvalue from zero.
    pub fn leading_deviation(&self) -> f64 {
        self.eigenvalues.first().map_or(0.0, |k| k.norm())
    }
}

pub fn implied_timescale(kappa: c64) -> f64 {
    if kappa.re.abs() < ZERO_RATE {
        f64::INFINITY
    } else {
        -1.0 / kappa.re
    }
}

/// Leading `n_ev` eigenpairs of a reduced generator; the reversible matrix is
/// symmetrized and solved with a symmetric eigensolver.
pub fn spectrum(rg: &ReducedGenerator, n_ev: usize) -> Result<SpectrumReport> {
    let r = rg.m.nrows();
    if n_ev == 0 || n_ev > r {
        return Err(Error::Argument(format!("requested {n_ev} eigenpairs of a rank-{r} model")));
    }
    let (vals, vecs) = match rg.mode {
        EstimatorMode::Reversible => {
            let (vals, vecs) = linalg::symmetric_eigen(rg.m.as_ref())?;
            (
                vals.into_iter().map(|v| c64::new(v, 0.0)).collect::<Vec<_>>(),
                Mat::from_fn(r, r, |i, j| c64::new(vecs[(i, j)], 0.0)),
            )
        }
        EstimatorMode::NonReversible => linalg::general_eigen(rg.m.as_ref())?,
    };
    if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numeric("eigenvalues are not finite".into()));
    }
    let eigenvalues: Vec<c64> = vals[..n_ev].to_vec();
    let eigenvectors = vecs.subcols(0, n_ev).to_owned();
    let v = &rg.svd.v;
    let weights = rg.svd.weights.as_deref();
    let mut eigenfunctions = Mat::from_fn(v.nrows(), n_ev, |l, j| {
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..r {
            acc += eigenvectors[(i, j)] * v[(l, i)];
        }
        match weights {
            Some(w) if w[l] > 0.0 => acc / w[l].sqrt(),
            _ => acc,
        }
    });
    for (l, features) in &rg.svd.zero_weight_features {
        for j in 0..n_ev {
            eigenfunctions[(*l, j)] = features.iter().enumerate().map(|(i, f)| eigenvectors[(i, j)] * f).sum();
        }
    }
    Ok(SpectrumReport {
        timescales: eigenvalues.iter().map(|&k| implied_timescale(k)).collect(),
        eigenvalues,
        eigenvectors,
        eigenfunctions,
    })
}

/// Multiplies all timescales so that the first non-trivial one equals
/// `reference_t1`.
pub fn rescale_timescales(report: &SpectrumReport, reference_t1: f64) -> Result<SpectrumReport> {
    let t1 = *report
        .timescales
        .get(1)
        .ok_or_else(|| Error::Argument("report has no first timescale".into()))?;
    if !t1.is_finite() || t1 == 0.0 {
        return Err(Error::Argument(format!("cannot rescale from timescale {t1}")));
    }
    let factor = reference_t1 / t1;
    let mut out = report.clone();
    for t in out.timescales.iter_mut().skip(1) {
        *t *= factor;
    }
    out.timescales[1] = reference_t1;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// One label in `1..=n_clusters` per sample.
    pub labels: Vec<usize>,
    /// `n_clusters x (n_clusters - 1)` centers in kinetic-map coordinates.
    pub centers: Mat<f64>,
}

const RESTARTS: usize = 20;
const MAX_ITERATIONS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Kinetic-map coordinates of every sample: the real parts of
/// eigenfunctions `1..count`, each scaled by its implied timescale so that
/// slow processes dominate the distance. The stationary eigenfunction is
/// left out.
pub fn kinetic_map(report: &SpectrumReport, count: usize) -> Vec<Vec<f64>> {
    let ef = &report.eigenfunctions;
    let scale: Vec<f64> = report.eigenvalues[1..count]
        .iter()
        .map(|k| 1.0 / (-k.re).max(ZERO_RATE))
        .collect();
    (0..ef.nrows())
        .map(|l| scale.iter().enumerate().map(|(j, s)| ef[(l, j + 1)].re * s).collect())
        .collect()
}

/// k-means with k-means++ seeding on the kinetic map of the leading
/// `n_clusters` eigenfunctions; best of 20 restarts.
pub fn cluster(report: &SpectrumReport, n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    let ef = &report.eigenfunctions;
    if n_clusters == 0 || n_clusters > ef.ncols() {
        return Err(Error::Argument(format!(
            "{n_clusters} clusters from {} eigenfunctions",
            ef.ncols()
        )));
    }
    if n_clusters == 1 {
        return Ok(ClusterAssignment {
            labels: vec![1; ef.nrows()],
            centers: Mat::zeros(1, 0),
        });
    }
    let points = kinetic_map(report, n_clusters);
    let (labels, centers) = kmeans(&points, n_clusters, seed)?;
    let centers = Mat::from_fn(n_clusters, n_clusters - 1, |c, j| centers[c][j]);
    Ok(ClusterAssignment { labels, centers })
}

/// k-means on arbitrary points; labels are 1-based and numbered in order of
/// first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let n = points.len();
    if n == 0 || k == 0 || k > n {
        return Err(Error::Clustering(format!("{k} clusters from {n} points")));
    }
    if points.iter().all(|p| p == &points[0]) && k > 1 {
        return Err(Error::Clustering("all points coincide".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)> = None;
    for _ in 0..RESTARTS {
        let (inertia, labels, centers) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, labels, centers));
        }
    }
    let (_, labels, centers) = best.unwrap();
    let mut order = Vec::with_capacity(k);
    for &l in &labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    let relabel: Vec<usize> = (0..k).map(|c| order.iter().position(|&o| o == c).unwrap() + 1).collect();
    let mut sorted_centers = vec![vec![]; k];
    for (c, center) in centers.into_iter().enumerate() {
        sorted_centers[relabel[c] - 1] = center;
    }
    Ok((labels.into_iter().map(|l| relabel[l]).collect(), sorted_centers))
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>, Vec<Vec<f64>>) {
    let n = points.len();
    let dim = points[0].len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }
    let mut labels = vec![0usize; n];
    for iteration in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let label = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .unwrap();
            if label != labels[i] || iteration == 0 {
                changed |= label != labels[i];
                labels[i] = label;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed with the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .unwrap();
                centers[c] = points[far].clone();
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed && iteration > 0 {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (inertia, labels, centers)
}

fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else if x > 0.0 {
        "inf".into()
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

/// `k,re,im,timescale` per eigenvalue.
pub fn write_eigenvalues_csv(out: &mut impl Write, report: &SpectrumReport) -> Result<()> {
    writeln!(out, "k,re,im,timescale")?;
    for (k, (v, t)) in report.eigenvalues.iter().zip(&report.timescales).enumerate() {
        writeln!(out, "{k},{},{},{}", fmt_float(v.re), fmt_float(v.im), fmt_float(*t))?;
    }
    Ok(())
}

/// Sample index followed by the real parts of every eigenfunction.
pub fn write_eigenfunctions_csv(out: &mut impl Write, report: &SpectrumReport) -> Result<()> {
    let ef = &report.eigenfunctions;
    let header: Vec<String> = (0..ef.ncols()).map(|j| format!("phi{j}")).collect();
    writeln!(out, "sample,{}", header.join(","))?;
    for l in 0..ef.nrows() {
        let row: Vec<String> = (0..ef.ncols()).map(|j| fmt_float(ef[(l, j)].re)).collect();
        writeln!(out, "{l},{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_clusters_csv(out: &mut impl Write, assignment: &ClusterAssignment) -> Result<()> {
    writeln!(out, "sample,label")?;
    for (l, label) in assignment.labels.iter().enumerate() {
        writeln!(out, "{l},{label}")?;
    }
    Ok(())
}
