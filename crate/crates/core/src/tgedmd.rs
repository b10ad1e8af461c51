//! Generator EDMD in tensor-train format: global SVD of the data tensor and
//! assembly of the reduced generator matrix from per-sample trains.

use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amuse::EstimatorMode;
use crate::basis::ProductBasis;
use crate::error::{Error, Result};
use crate::generator_data::{basis_coordinate_dim, l_psi_from_pack, nabla_psi_from_pack, pack_at, DataTensorTT, GeneratorTrain};
use crate::linalg;
use crate::sde::{SdeModel, Trajectory};
use crate::tt::{Core, OpCounter, SharedContraction, TensorTrain, RANK_TOLERANCE};

/// Samples per reduction block.
pub const BLOCK_SIZE: usize = 1024;

/// Whitening refuses singular values below this fraction of the largest.
pub const WHITENING_TOLERANCE: f64 = 1e-14;

/// Singular value cut-off rule applied at every core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Threshold {
    /// Keep `s >= sqrt(m) * eps`.
    Absolute { epsilon: f64 },
    /// Keep `s >= sqrt(m) * eps_k` with one value per basis mode.
    AbsolutePerMode { epsilon: Vec<f64> },
    /// Keep `s >= sqrt(m) * eps * s_1` with `s_1` the largest at that core.
    Relative { epsilon: f64 },
    /// Keep everything above the numerical rank tolerance.
    KeepAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    #[serde(flatten)]
    pub threshold: Threshold,
    #[serde(default)]
    pub rank_cap: Option<usize>,
}

impl TruncationPolicy {
    pub fn absolute(epsilon: f64) -> Self {
        TruncationPolicy {
            threshold: Threshold::Absolute { epsilon },
            rank_cap: None,
        }
    }

    pub fn relative(epsilon: f64) -> Self {
        TruncationPolicy {
            threshold: Threshold::Relative { epsilon },
            rank_cap: None,
        }
    }

    pub fn keep_all() -> Self {
        TruncationPolicy {
            threshold: Threshold::KeepAll,
            rank_cap: None,
        }
    }

    pub fn with_rank_cap(mut self, cap: usize) -> Self {
        self.rank_cap = Some(cap);
        self
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        let positive = |e: f64| e > 0.0 && e.is_finite();
        match &self.threshold {
            Threshold::Absolute { epsilon } | Threshold::Relative { epsilon } if !positive(*epsilon) => {
                return Err(Error::Argument(format!("threshold must be positive, got {epsilon}")));
            }
            Threshold::AbsolutePerMode { epsilon } => {
                if epsilon.len() != order || !epsilon.iter().all(|&e| positive(e)) {
                    return Err(Error::Argument(format!(
                        "need {order} positive per-mode thresholds, got {epsilon:?}"
                    )));
                }
            }
            _ => {}
        }
        if self.rank_cap == Some(0) {
            return Err(Error::Argument("rank cap must be at least one".into()));
        }
        Ok(())
    }

    /// Number of singular values kept at core `k` (0-based).
    pub fn keep(&self, s: &[f64], k: usize, m: usize) -> usize {
        let Some(&top) = s.first() else { return 0 };
        let root_m = (m as f64).sqrt();
        let kept = match &self.threshold {
            Threshold::Absolute { epsilon } => s.iter().take_while(|&&x| x >= root_m * epsilon && x > 0.0).count(),
            Threshold::AbsolutePerMode { epsilon } => {
                s.iter().take_while(|&&x| x >= root_m * epsilon[k] && x > 0.0).count()
            }
            Threshold::Relative { epsilon } => s.iter().take_while(|&&x| x >= root_m * epsilon * top && x > 0.0).count(),
            Threshold::KeepAll => s.iter().take_while(|&&x| x > RANK_TOLERANCE * top).count(),
        };
        self.rank_cap.map_or(kept, |cap| kept.min(cap))
    }
}

/// Left-orthonormal factor, singular values and right singular vectors of
/// the last unfolding of the data tensor.
#[derive(Clone, Debug)]
pub struct GlobalSvdResult {
    pub u: TensorTrain,
    pub sigma: Vec<f64>,
    /// `m x r_p`.
    pub v: Mat<f64>,
    /// `r_1, ..., r_p`.
    pub ranks: Vec<usize>,
    /// Full singular value spectrum at every core before truncation.
    pub spectra: Vec<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    /// `Sigma^-1 U^T psi(x_l)` for samples of zero weight, whose rows of `V`
    /// vanish.
    pub zero_weight_features: Vec<(usize, Vec<f64>)>,
}

impl GlobalSvdResult {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn sample_count(&self) -> usize {
        self.v.nrows()
    }
}

/// Left-to-right sweep of core SVDs over the data tensor; interior
/// unfoldings are assembled from the diagonal cores without forming them.
pub fn global_svd(data: &DataTensorTT, policy: &TruncationPolicy) -> Result<GlobalSvdResult> {
    let p = data.order();
    policy.validate(p)?;
    let m = data.sample_count();
    // rows: current rank, columns: samples
    let mut carry = Mat::<f64>::from_fn(1, m, |_, _| 1.0);
    let mut cores = Vec::with_capacity(p);
    let mut ranks = Vec::with_capacity(p);
    let mut spectra = Vec::with_capacity(p);
    let mut last = None;
    for k in 0..p {
        let values = data.absorbed_values(k);
        let n = values.nrows();
        let r = carry.nrows();
        let unfolding = Mat::from_fn(r * n, m, |row, l| carry[(row / n, l)] * values[(row % n, l)]);
        let (u, s, v) = linalg::thin_svd(unfolding.as_ref())?;
        let keep = policy.keep(&s, k, m);
        if keep == 0 {
            return Err(Error::EmptySubspace { core: k + 1 });
        }
        let basis = u.subcols(0, keep);
        cores.push(Core::from_left_unfolding(basis, r, n)?);
        ranks.push(keep);
        carry = Mat::from_fn(keep, m, |i, l| s[i] * v[(l, i)]);
        if k + 1 == p {
            last = Some((s[..keep].to_vec(), v.subcols(0, keep).to_owned()));
        }
        spectra.push(s);
    }
    let (sigma, v) = last.expect("order is at least one");
    let u = TensorTrain::new(cores)?;
    let zero_weight_features = match data.weights() {
        Some(w) => (0..m)
            .filter(|&l| w[l] == 0.0)
            .map(|l| (l, whitened_features(&u, &sigma, data, l)))
            .collect(),
        None => Vec::new(),
    };
    Ok(GlobalSvdResult {
        u,
        sigma,
        v,
        ranks,
        spectra,
        weights: data.weights().map(<[f64]>::to_vec),
        zero_weight_features,
    })
}

/// `Sigma^-1 U^T psi(x_l)` from the unweighted mode values.
fn whitened_features(u: &TensorTrain, sigma: &[f64], data: &DataTensorTT, l: usize) -> Vec<f64> {
    let mut carry = vec![1.0];
    for (k, core) in u.cores().iter().enumerate() {
        let values = data.mode_values(k);
        let (left, n, right) = core.shape();
        let mut next = vec![0.0; right];
        for (a, &c) in carry.iter().enumerate().take(left) {
            for i in 0..n {
                let scale = c * values[(i, l)];
                if scale != 0.0 {
                    for (b, out) in next.iter_mut().enumerate() {
                        *out += scale * core.get(a, i, b);
                    }
                }
            }
        }
        carry = next;
    }
    carry.iter().zip(sigma).map(|(c, s)| c / s).collect()
}

/// Per-sample generator data consumed by [`reduced_matrix`].
pub trait GeneratorSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generator train of sample `l`.
    fn generator(&self, l: usize) -> Result<GeneratorTrain>;

    /// Gradient train of sample `l` and the diffusion matrix in the same
    /// coordinates.
    fn gradient(&self, l: usize) -> Result<(GeneratorTrain, Mat<f64>)>;
}

/// Trains built on demand from a basis, samples and a model.
pub struct ModelSource<'a> {
    pub basis: &'a ProductBasis,
    pub samples: &'a Trajectory,
    pub model: &'a dyn SdeModel,
}

impl GeneratorSource for ModelSource<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn generator(&self, l: usize) -> Result<GeneratorTrain> {
        let x = self.samples.state(l);
        let pack = pack_at(self.basis, x, self.model)?;
        l_psi_from_pack(&pack, self.model.diffusion(x).as_ref())
    }

    fn gradient(&self, l: usize) -> Result<(GeneratorTrain, Mat<f64>)> {
        let x = self.samples.state(l);
        let pack = pack_at(self.basis, x, self.model)?;
        let c = basis_coordinate_dim(self.basis, x.len());
        let train = nabla_psi_from_pack(&pack, c, None)?;
        Ok((train, pack.reduced_diffusion))
    }
}

/// The reduced generator matrix with the data needed to evaluate its
/// eigenfunctions at the samples.
#[derive(Clone, Debug)]
pub struct ReducedGenerator {
    pub m: Mat<f64>,
    pub mode: EstimatorMode,
    pub svd: GlobalSvdResult,
    pub multiplies: u64,
}

fn tree_sum(mut parts: Vec<Mat<f64>>) -> Option<Mat<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

fn block_partial(
    svd: &GlobalSvdResult,
    engine: &SharedContraction,
    source: &dyn GeneratorSource,
    mode: EstimatorMode,
    range: std::ops::Range<usize>,
) -> Result<(Mat<f64>, u64)> {
    let r = svd.rank();
    let weight = |l: usize| svd.weights.as_ref().map_or(1.0, |w| w[l]);
    let mut counter = OpCounter::default();
    match mode {
        EstimatorMode::NonReversible => {
            let trains = range.clone().map(|l| source.generator(l)).collect::<Result<Vec<_>>>()?;
            let cores: Vec<&[Core]> = trains.iter().map(GeneratorTrain::basis_cores).collect();
            let stacked = engine.contract_block(&cores, Some(&mut counter))?;
            if stacked.nrows() != trains.len() {
                return Err(Error::Shape("generator trains must have unit trailing rank".into()));
            }
            let vw = Mat::from_fn(range.len(), r, |i, j| svd.v[(range.start + i, j)] * weight(range.start + i).sqrt());
            Ok((linalg::matmul(vw.transpose(), stacked.as_ref()), counter.multiplies))
        }
        EstimatorMode::Reversible => {
            let items = range.clone().map(|l| source.gradient(l)).collect::<Result<Vec<_>>>()?;
            let cores: Vec<&[Core]> = items.iter().map(|(t, _)| t.basis_cores()).collect();
            let stacked = engine.contract_block(&cores, Some(&mut counter))?;
            let c = stacked.nrows() / items.len();
            let mut scaled = Mat::<f64>::zeros(stacked.nrows(), r);
            for (i, (_, a)) in items.iter().enumerate() {
                if a.nrows() != c || a.ncols() != c {
                    return Err(Error::Shape(format!("diffusion is {}x{}, expected {c}x{c}", a.nrows(), a.ncols())));
                }
                let w = weight(range.start + i);
                let g = stacked.subrows(i * c, c);
                let ag = a * g;
                scaled.subrows_mut(i * c, c).copy_from(ag * w);
            }
            Ok((linalg::matmul(stacked.transpose(), scaled.as_ref()), counter.multiplies))
        }
    }
}

/// Assembles the reduced generator matrix from a per-sample stream.
///
/// Samples are processed in fixed blocks whose partial sums are combined by
/// a fixed pairwise tree, so the result does not depend on the thread count.
pub fn reduced_matrix(svd: GlobalSvdResult, source: &dyn GeneratorSource, mode: EstimatorMode) -> Result<ReducedGenerator> {
    let m = svd.sample_count();
    if source.len() != m {
        return Err(Error::Shape(format!("{} generator samples for {m} data samples", source.len())));
    }
    let top = svd.sigma[0];
    let bottom = *svd.sigma.last().unwrap();
    if !(bottom >= WHITENING_TOLERANCE * top) {
        return Err(Error::IllConditioned { min: bottom, max: top });
    }
    linalg::init();
    let structure = match mode {
        EstimatorMode::NonReversible => source.generator(0)?.structure,
        EstimatorMode::Reversible => source.gradient(0)?.0.structure,
    };
    let engine = SharedContraction::new(&svd.u, structure)?;
    let blocks: Vec<std::ops::Range<usize>> = (0..m)
        .step_by(BLOCK_SIZE)
        .map(|start| start..(start + BLOCK_SIZE).min(m))
        .collect();
    let partials = blocks
        .into_par_iter()
        .map(|range| block_partial(&svd, &engine, source, mode, range))
        .collect::<Result<Vec<_>>>()?;
    let multiplies = partials.iter().map(|(_, c)| c).sum();
    let total = tree_sum(partials.into_iter().map(|(p, _)| p).collect()).expect("at least one block");
    let inv = |i: usize| 1.0 / svd.sigma[i];
    let r = svd.rank();
    let m_hat = match mode {
        EstimatorMode::NonReversible => Mat::from_fn(r, r, |i, j| total[(i, j)] * inv(j)),
        EstimatorMode::Reversible => Mat::from_fn(r, r, |i, j| {
            -0.25 * (total[(i, j)] + total[(j, i)]) * inv(i) * inv(j)
        }),
    };
    Ok(ReducedGenerator {
        m: m_hat,
        mode,
        svd,
        multiplies,
    })
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TgedmdRun {
    pub reduced: ReducedGenerator,
    pub ranks: Vec<usize>,
    pub svd_seconds: f64,
    pub assembly_seconds: f64,
}

/// Global SVD followed by reduced-matrix assembly.
pub fn tgedmd_run(
    samples: &Trajectory,
    basis: &ProductBasis,
    model: &dyn SdeModel,
    mode: EstimatorMode,
    policy: &TruncationPolicy,
    weights: Option<&[f64]>,
) -> Result<TgedmdRun> {
    if samples.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "samples of dimension {} for a {}-dimensional model",
            samples.dim(),
            model.dim()
        )));
    }
    let start = Instant::now();
    let normalized = weights.map(crate::amuse::normalize_weights);
    let data = DataTensorTT::new(basis, samples, normalized.as_deref())?;
    let svd = global_svd(&data, policy)?;
    let svd_seconds = start.elapsed().as_secs_f64();
    let ranks = svd.ranks.clone();
    let start = Instant::now();
    let source = ModelSource { basis, samples, model };
    let reduced = reduced_matrix(svd, &source, mode)?;
    Ok(TgedmdRun {
        reduced,
        ranks,
        svd_seconds,
        assembly_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Operation counts of the three stages: the core SVDs
/// `sum_k min(r^2 n^2 m, r n m^2)`, the contractions
/// `m sum_k n_k d r_{k-1} r_k` and the final eigenproblem `r_p^3`.
/// `ranks` lists `r_0, ..., r_p`.
pub fn tt_cost_estimate(mode_sizes: &[usize], ranks: &[usize], m: usize, d: usize) -> Result<(f64, f64, f64)> {
    if ranks.len() != mode_sizes.len() + 1 {
        return Err(Error::Shape(format!(
            "{} ranks for {} modes; expected r_0 through r_p",
            ranks.len(),
            mode_sizes.len()
        )));
    }
    let m = m as f64;
    let mut svd = 0.0;
    let mut contraction = 0.0;
    for (k, &n) in mode_sizes.iter().enumerate() {
        let (r0, r1, n) = (ranks[k] as f64, ranks[k + 1] as f64, n as f64);
        svd += (r0 * r0 * n * n * m).min(r0 * n * m * m);
        contraction += n * d as f64 * r0 * r1;
    }
    let rp = *ranks.last().unwrap() as f64;
    Ok((svd, m * contraction, rp * rp * rp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_rules() {
        let s = [10.0, 3.0, 1.0, 0.1];
        // sqrt(4) * eps
        assert_eq!(TruncationPolicy::absolute(0.5).keep(&s, 0, 4), 3);
        assert_eq!(TruncationPolicy::absolute(0.5).with_rank_cap(2).keep(&s, 0, 4), 2);
        assert_eq!(TruncationPolicy::relative(0.1).keep(&s, 0, 4), 2);
        assert_eq!(TruncationPolicy::keep_all().keep(&s, 0, 4), 4);
        assert_eq!(TruncationPolicy::absolute(0.5).keep(&[1.0], 0, 4), 1);
    }

    #[test]
    fn equality_at_cut_is_kept() {
        assert_eq!(TruncationPolicy::absolute(0.5).keep(&[2.0, 1.0, 0.5], 0, 4), 2);
    }

    #[test]
    fn invalid_policies_rejected() {
        assert!(TruncationPolicy::absolute(0.0).validate(2).is_err());
        assert!(TruncationPolicy::keep_all().with_rank_cap(0).validate(2).is_err());
        let per_mode = TruncationPolicy {
            threshold: Threshold::AbsolutePerMode { epsilon: vec![1e-3] },
            rank_cap: None,
        };
        assert!(per_mode.validate(2).is_err());
    }

    #[test]
    fn cost_terms() {
        let (a, b, c) = tt_cost_estimate(&[3], &[1, 2], 10, 2).unwrap();
        assert_eq!(a, (9.0f64 * 10.0).min(3.0 * 100.0));
        assert_eq!(b, 10.0 * 3.0 * 2.0 * 2.0);
        assert_eq!(c, 8.0);
        let (_, b1, _) = tt_cost_estimate(&[3, 4], &[1, 2, 3], 10, 2).unwrap();
        let (_, b2, _) = tt_cost_estimate(&[3, 4], &[2, 4, 6], 10, 2).unwrap();
        assert_eq!(b2, 4.0 * b1);
    }

    #[test]
    fn tree_sum_of_singletons() {
        let parts = (0..5).map(|i| Mat::from_fn(1, 1, |_, _| i as f64)).collect();
        assert_eq!(tree_sum(parts).unwrap()[(0, 0)], 10.0);
    }
}
