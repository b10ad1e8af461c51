//! Tensor trains: storage, evaluation and the basic algebra needed by the
//! generator approximation (summation, orthonormalization, contraction).

mod contract;
mod dense;

pub use contract::{contract, contract_cores, structural_pattern, OpCounter, SharedContraction, Structure};
pub use dense::DenseTensor;

use faer::{Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg;

/// Default cap on the number of entries materialized by [`TensorTrain::to_dense`].
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// Relative tolerance below which singular values count as numerically zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// An order-3 TT core with shape `(left, mode, right)`.
///
/// Entries are stored contiguously with index `(a * mode + u) * right + b`,
/// so the left unfolding `(left * mode, right)` is a plain row-major reshape.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn new(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || mode == 0 || right == 0 {
            return Err(Error::Shape(format!(
                "core dimensions must be positive, got ({left}, {mode}, {right})"
            )));
        }
        if data.len() != left * mode * right {
            return Err(Error::Shape(format!(
                "core ({left}, {mode}, {right}) needs {} entries, got {}",
                left * mode * right,
                data.len()
            )));
        }
        Ok(Core {
            left,
            mode,
            right,
            data,
        })
    }

    pub fn zeros(left: usize, mode: usize, right: usize) -> Result<Self> {
        Core::new(left, mode, right, vec![0.0; left * mode * right])
    }

    pub fn from_fn(
        left: usize,
        mode: usize,
        right: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(left * mode * right);
        for a in 0..left {
            for u in 0..mode {
                for b in 0..right {
                    data.push(f(a, u, b));
                }
            }
        }
        Core::new(left, mode, right, data)
    }

    #[inline]
    pub fn left(&self) -> usize {
        self.left
    }

    #[inline]
    pub fn mode(&self) -> usize {
        self.mode
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.right
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.mode, self.right)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, a: usize, u: usize, b: usize) -> usize {
        (a * self.mode + u) * self.right + b
    }

    #[inline]
    pub fn get(&self, a: usize, u: usize, b: usize) -> f64 {
        self.data[self.offset(a, u, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, u: usize, b: usize, value: f64) {
        let i = self.offset(a, u, b);
        self.data[i] = value;
    }

    /// Row `a` of the slice `T[:, u, :]`.
    #[inline]
    pub(crate) fn row(&self, a: usize, u: usize) -> &[f64] {
        let start = self.offset(a, u, 0);
        &self.data[start..start + self.right]
    }

    /// The matrix `T[:, u, :]`.
    pub fn slice(&self, u: usize) -> Mat<f64> {
        Mat::from_fn(self.left, self.right, |a, b| self.get(a, u, b))
    }

    /// Left (mode-2) unfolding of shape `(left * mode, right)`.
    pub fn unfold_left(&self) -> Mat<f64> {
        Mat::from_fn(self.left * self.mode, self.right, |i, b| {
            self.data[i * self.right + b]
        })
    }

    /// Right unfolding of shape `(left, mode * right)`.
    pub fn unfold_right(&self) -> Mat<f64> {
        let cols = self.mode * self.right;
        Mat::from_fn(self.left, cols, |a, j| self.data[a * cols + j])
    }

    pub fn from_left_unfolding(m: MatRef<'_, f64>, left: usize, mode: usize) -> Result<Self> {
        if m.nrows() != left * mode {
            return Err(Error::Shape(format!(
                "left unfolding has {} rows, expected {}",
                m.nrows(),
                left * mode
            )));
        }
        let right = m.ncols();
        Core::from_fn(left, mode, right, |a, u, b| m[(a * mode + u, b)])
    }

    pub fn from_right_unfolding(m: MatRef<'_, f64>, mode: usize, right: usize) -> Result<Self> {
        if m.ncols() != mode * right {
            return Err(Error::Shape(format!(
                "right unfolding has {} columns, expected {}",
                m.ncols(),
                mode * right
            )));
        }
        Core::from_fn(m.nrows(), mode, right, |a, u, b| m[(a, u * right + b)])
    }
}

/// Vectors whose outer product forms a rank-one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RankOneFactors(pub Vec<Vec<f64>>);

/// A tensor train: a chain of order-3 cores whose adjacent ranks agree.
///
/// Boundary ranks larger than one are allowed, in which case the train
/// encodes `r_0 * r_p` tensors at once. A train flagged as zero is the
/// result of truncating every singular value away.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
    zero: bool,
}

impl TensorTrain {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Argument("tensor train needs at least one core".into()));
        }
        for (k, pair) in cores.windows(2).enumerate() {
            if pair[0].right != pair[1].left {
                return Err(Error::Shape(format!(
                    "rank mismatch between core {k} (right rank {}) and core {} (left rank {})",
                    pair[0].right,
                    k + 1,
                    pair[1].left
                )));
            }
        }
        Ok(TensorTrain { cores, zero: false })
    }

    /// Explicit zero train with unit ranks over the given mode sizes.
    pub fn zero_train(mode_sizes: &[usize], last_rank: usize) -> Result<Self> {
        let p = mode_sizes.len();
        let cores = mode_sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| Core::zeros(1, n, if k + 1 == p { last_rank } else { 1 }))
            .collect::<Result<Vec<_>>>()?;
        let mut t = TensorTrain::new(cores)?;
        t.zero = true;
        Ok(t)
    }

    pub fn rank_one(factors: &RankOneFactors) -> Result<Self> {
        if factors.0.is_empty() {
            return Err(Error::Argument("rank-one train needs at least one factor".into()));
        }
        let cores = factors
            .0
            .iter()
            .map(|v| Core::new(1, v.len(), 1, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        TensorTrain::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode).collect()
    }

    /// Rank chain `r_0, ..., r_p`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(self.cores[0].left);
        r.extend(self.cores.iter().map(|c| c.right));
        r
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn entry(&self, idx: &[usize]) -> Result<f64> {
        if idx.len() != self.order() {
            return Err(Error::Bounds(format!(
                "multi-index of length {} for order-{} train",
                idx.len(),
                self.order()
            )));
        }
        let ranks = self.ranks();
        if ranks[0] != 1 || ranks[self.order()] != 1 {
            return Err(Error::Shape(format!(
                "entry evaluation needs unit boundary ranks, got r_0 = {}, r_p = {}",
                ranks[0],
                ranks[self.order()]
            )));
        }
        let mut v = vec![1.0];
        for (k, (core, &u)) in self.cores.iter().zip(idx).enumerate() {
            if u >= core.mode {
                return Err(Error::Bounds(format!(
                    "index {u} out of range for mode {k} of size {}",
                    core.mode
                )));
            }
            let mut next = vec![0.0; core.right];
            for (a, &va) in v.iter().enumerate() {
                for (nb, &t) in next.iter_mut().zip(core.row(a, u)) {
                    *nb += va * t;
                }
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Dense array of shape `(n_1, ..., n_p)`, or `(n_1, ..., n_p, r_p)` when
    /// the trailing rank exceeds one.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DenseTensor> {
        if self.cores[0].left != 1 {
            return Err(Error::Shape(format!(
                "dense conversion needs r_0 = 1, got {}",
                self.cores[0].left
            )));
        }
        let first = &self.cores[0];
        let mut rows = first.mode;
        let mut acc = first.data.clone();
        let mut width = first.right;
        for core in &self.cores[1..] {
            let new_rows = rows
                .checked_mul(core.mode)
                .ok_or(Error::Capacity { requested: usize::MAX, cap })?;
            let requested = new_rows.saturating_mul(core.right);
            if requested > cap {
                return Err(Error::Capacity { requested, cap });
            }
            let mut next = vec![0.0; requested];
            for i in 0..rows {
                let acc_row = &acc[i * width..(i + 1) * width];
                for u in 0..core.mode {
                    let out = &mut next[(i * core.mode + u) * core.right..][..core.right];
                    for (a, &x) in acc_row.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        for (o, &t) in out.iter_mut().zip(core.row(a, u)) {
                            *o += x * t;
                        }
                    }
                }
            }
            acc = next;
            rows = new_rows;
            width = core.right;
        }
        if acc.len() > cap {
            return Err(Error::Capacity {
                requested: acc.len(),
                cap,
            });
        }
        let mut shape = self.mode_sizes();
        if width > 1 {
            shape.push(width);
        }
        DenseTensor::new(shape, acc)
    }

    /// Sum of two trains with equal mode sizes and boundary ranks.
    ///
    /// Interior cores are block-diagonal, boundary cores are concatenated
    /// along their free rank axis.
    pub fn sum(&self, other: &TensorTrain) -> Result<TensorTrain> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::Shape(format!(
                "cannot add trains with mode sizes {:?} and {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        let (ra, rb) = (self.ranks(), other.ranks());
        let p = self.order();
        if ra[0] != rb[0] || ra[p] != rb[p] {
            return Err(Error::Shape(format!(
                "boundary ranks differ: ({}, {}) vs ({}, {})",
                ra[0], ra[p], rb[0], rb[p]
            )));
        }
        if p == 1 {
            let (a, b) = (&self.cores[0], &other.cores[0]);
            let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
            return TensorTrain::new(vec![Core::new(a.left, a.mode, a.right, data)?]);
        }
        let mut cores = Vec::with_capacity(p);
        for k in 0..p {
            let (a, b) = (&self.cores[k], &other.cores[k]);
            let n = a.mode;
            let core = if k == 0 {
                Core::from_fn(a.left, n, a.right + b.right, |s, u, j| {
                    if j < a.right {
                        a.get(s, u, j)
                    } else {
                        b.get(s, u, j - a.right)
                    }
                })?
            } else if k + 1 == p {
                Core::from_fn(a.left + b.left, n, a.right, |i, u, s| {
                    if i < a.left {
                        a.get(i, u, s)
                    } else {
                        b.get(i - a.left, u, s)
                    }
                })?
            } else {
                Core::from_fn(a.left + b.left, n, a.right + b.right, |i, u, j| {
                    match (i < a.left, j < a.right) {
                        (true, true) => a.get(i, u, j),
                        (false, false) => b.get(i - a.left, u, j - a.right),
                        _ => 0.0,
                    }
                })?
            };
            cores.push(core);
        }
        TensorTrain::new(cores)
    }

    /// Left-to-right QR sweep making every core except the last
    /// left-orthonormal. Ranks never increase.
    pub fn left_orthonormalize(&self) -> Result<TensorTrain> {
        if self.zero {
            return Ok(self.clone());
        }
        let mut cores = self.cores.clone();
        for k in 0..cores.len() - 1 {
            let (left, mode) = (cores[k].left, cores[k].mode);
            let (q, r) = linalg::thin_qr(cores[k].unfold_left().as_ref());
            let (q, r) = positive_diagonal(q, r);
            cores[k] = Core::from_left_unfolding(q.as_ref(), left, mode)?;
            let next = &cores[k + 1];
            let merged = linalg::matmul(r.as_ref(), next.unfold_right().as_ref());
            cores[k + 1] = Core::from_right_unfolding(merged.as_ref(), next.mode, next.right)?;
        }
        TensorTrain::new(cores)
    }

    /// Left-to-right SVD sweep that also drops singular values below
    /// `rel_tol * s_max` in every unfolding.
    pub fn left_orthonormalize_truncated(&self, rel_tol: f64) -> Result<TensorTrain> {
        if self.zero {
            return Ok(self.clone());
        }
        let mut cores = self.cores.clone();
        let p = cores.len();
        for k in 0..p - 1 {
            let (left, mode) = (cores[k].left, cores[k].mode);
            let (u, s, v) = linalg::thin_svd(cores[k].unfold_left().as_ref())?;
            let smax = s[0];
            if smax == 0.0 {
                return TensorTrain::zero_train(&self.mode_sizes(), cores[p - 1].right);
            }
            let keep = s.iter().take_while(|&&x| x >= rel_tol * smax).count();
            let q = u.subcols(0, keep).to_owned();
            let sv = Mat::from_fn(keep, v.nrows(), |i, j| s[i] * v[(j, i)]);
            cores[k] = Core::from_left_unfolding(q.as_ref(), left, mode)?;
            let next = &cores[k + 1];
            let merged = linalg::matmul(sv.as_ref(), next.unfold_right().as_ref());
            cores[k + 1] = Core::from_right_unfolding(merged.as_ref(), next.mode, next.right)?;
        }
        TensorTrain::new(cores)
    }

    /// Makes the last core's right unfolding row-orthonormal, absorbing the
    /// remaining factor into the previous core.
    pub fn right_orthonormalize_last_core(&self) -> Result<TensorTrain> {
        let p = self.order();
        if p < 2 {
            return Err(Error::Argument(
                "right orthonormalization of the last core needs order >= 2".into(),
            ));
        }
        if self.zero {
            return Ok(self.clone());
        }
        let mut cores = self.cores.clone();
        let last = &cores[p - 1];
        let (mode, right) = (last.mode, last.right);
        let at = last.unfold_right().transpose().to_owned();
        let (q, r) = linalg::thin_qr(at.as_ref());
        let (q, r) = positive_diagonal(q, r);
        cores[p - 1] = Core::from_right_unfolding(q.transpose(), mode, right)?;
        let prev = &cores[p - 2];
        let merged = linalg::matmul(prev.unfold_left().as_ref(), r.transpose());
        cores[p - 2] = Core::from_left_unfolding(merged.as_ref(), prev.left, prev.mode)?;
        TensorTrain::new(cores)
    }

    /// Largest `|(T|_2)^T (T|_2) - I|` over all cores except the last.
    pub fn left_orthonormality_residual(&self) -> f64 {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|c| linalg::orthonormality_residual(c.unfold_left().as_ref()))
            .fold(0.0, f64::max)
    }
}

/// Flips signs so that `R` has a non-negative diagonal; `Q R` is unchanged.
fn positive_diagonal(mut q: Mat<f64>, mut r: Mat<f64>) -> (Mat<f64>, Mat<f64>) {
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            for j in 0..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
            for j in 0..q.nrows() {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    (q, r)
}
