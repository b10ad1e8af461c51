//! Contraction `T · U` of two tensor trains over all mode indices.
//!
//! The dense path accumulates Kronecker products of matching core slices
//! literally. Generator and gradient trains have at most `O(d)` structurally
//! non-zero positions per core with the basis values on the diagonal, which
//! the structured path exploits: the cost drops to
//! `O(sum_k n_k r_{k-1} r_k)` plus lower order terms.

use faer::Mat;

use super::{Core, TensorTrain};
use crate::error::{Error, Result};

/// Structural sparsity of the left operand of a contraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    /// No structure; use the Kronecker accumulation.
    Dense,
    /// First `p` cores of a gradient train: ranks `(c+1, ..., c+1, c)`,
    /// the first row carries `(psi, d psi / d x^1, ..., d psi / d x^c)` and
    /// the diagonal carries `psi`.
    Gradient { coupling: usize },
    /// Generator train with all ranks `c + 2`.
    Generator { coupling: usize },
}

/// Opt-in multiplication counter filled by [`contract`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub multiplies: u64,
}

impl OpCounter {
    fn add(&mut self, n: usize) {
        self.multiplies += n as u64;
    }
}

/// Positions `(a, b)` at which core `k` of an order-`p` structured train may
/// be non-zero. Every other `T[a, :, b]` is identically zero.
pub fn structural_pattern(structure: Structure, k: usize, p: usize) -> Option<Vec<(usize, usize)>> {
    let (left, right) = expected_shape(structure, k, p)?;
    let mut pattern = Vec::new();
    match structure {
        Structure::Dense => return None,
        Structure::Gradient { .. } => {
            if k == 0 {
                pattern.extend((0..right).map(|b| (0, b)));
            } else if k + 1 < p {
                pattern.extend((0..right).map(|b| (0, b)));
                pattern.extend((1..right).map(|i| (i, i)));
            } else {
                pattern.extend((0..right).map(|b| (0, b)));
                pattern.extend((0..right).map(|j| (j + 1, j)));
            }
        }
        Structure::Generator { .. } => {
            if k == 0 {
                pattern.extend((0..right).map(|b| (0, b)));
            } else if k + 1 < p {
                pattern.extend((0..right).map(|b| (0, b)));
                pattern.extend((1..left).map(|a| (a, 1)));
                pattern.extend((2..left).map(|a| (a, a)));
            } else {
                pattern.extend((0..left).map(|a| (a, 0)));
            }
        }
    }
    Some(pattern)
}

fn expected_shape(structure: Structure, k: usize, p: usize) -> Option<(usize, usize)> {
    match structure {
        Structure::Dense => None,
        Structure::Gradient { coupling: c } => {
            let left = if k == 0 { 1 } else { c + 1 };
            let right = if k + 1 == p { c } else { c + 1 };
            Some((left, right))
        }
        Structure::Generator { coupling: c } => {
            let left = if k == 0 { 1 } else { c + 2 };
            let right = if k + 1 == p { 1 } else { c + 2 };
            Some((left, right))
        }
    }
}

/// Contracts two trains of equal order and mode sizes over all mode indices.
///
/// The result has shape `(s_p, r_p)` where `s_p` and `r_p` are the trailing
/// ranks of `t` and `u`. Both trains need unit leading rank.
pub fn contract(
    t: &TensorTrain,
    u: &TensorTrain,
    structure: Structure,
    counter: Option<&mut OpCounter>,
) -> Result<Mat<f64>> {
    contract_cores(t.cores(), u.cores(), structure, counter)
}

/// Core-slice version of [`contract`], used when the left operand is a
/// leading sub-chain of a longer train.
pub fn contract_cores(
    t: &[Core],
    u: &[Core],
    structure: Structure,
    counter: Option<&mut OpCounter>,
) -> Result<Mat<f64>> {
    if t.len() != u.len() || t.is_empty() {
        return Err(Error::Shape(format!(
            "contraction of trains with orders {} and {}",
            t.len(),
            u.len()
        )));
    }
    for (k, (a, b)) in t.iter().zip(u).enumerate() {
        if a.mode != b.mode {
            return Err(Error::Shape(format!(
                "mode {k} sizes differ: {} vs {}",
                a.mode, b.mode
            )));
        }
    }
    if t[0].left != 1 || u[0].left != 1 {
        return Err(Error::Shape("contraction needs unit leading ranks".into()));
    }
    let p = t.len();
    if structure != Structure::Dense {
        for (k, core) in t.iter().enumerate() {
            let (left, right) = expected_shape(structure, k, p).unwrap();
            if core.left != left || core.right != right {
                return Err(Error::Shape(format!(
                    "core {k} has ranks ({}, {}) but {structure:?} expects ({left}, {right})",
                    core.left, core.right
                )));
            }
        }
    }
    let mut scratch = OpCounter::default();
    let counter = counter.unwrap_or(&mut scratch);
    match structure {
        Structure::Dense => Ok(kronecker_path(t, u, counter)),
        _ => Ok(structured_path(t, u, structure, counter)),
    }
}

fn kronecker_path(t: &[Core], u: &[Core], counter: &mut OpCounter) -> Mat<f64> {
    let mut v = vec![1.0];
    for (tc, uc) in t.iter().zip(u) {
        let (s0, s1) = (tc.left, tc.right);
        let (r0, r1) = (uc.left, uc.right);
        let (rows, cols) = (s0 * r0, s1 * r1);
        let mut kron = vec![0.0; rows * cols];
        for m in 0..tc.mode {
            for a in 0..s0 {
                for b in 0..s1 {
                    let tv = tc.get(a, m, b);
                    for al in 0..r0 {
                        let urow = uc.row(al, m);
                        let row = a * r0 + al;
                        let dst = &mut kron[row * cols + b * r1..][..r1];
                        for (d, &x) in dst.iter_mut().zip(urow) {
                            *d += tv * x;
                        }
                    }
                }
            }
        }
        counter.add(tc.mode * rows * cols);
        let mut next = vec![0.0; cols];
        for (i, &vi) in v.iter().enumerate() {
            for (n, &k) in next.iter_mut().zip(&kron[i * cols..(i + 1) * cols]) {
                *n += vi * k;
            }
        }
        counter.add(rows * cols);
        v = next;
    }
    let (sp, rp) = (t[t.len() - 1].right, u[u.len() - 1].right);
    Mat::from_fn(sp, rp, |a, b| v[a * rp + b])
}

/// Running state `W` of shape `(s, r)` stored row-major.
struct State {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl State {
    fn zeros(rows: usize, cols: usize) -> Self {
        State {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.cols..(a + 1) * self.cols]
    }

    fn row_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.cols..(a + 1) * self.cols]
    }
}

/// `out += w · U[:, m, :]`.
#[inline]
fn row_times_slice(w: &[f64], core: &Core, m: usize, out: &mut [f64]) {
    for (al, &x) in w.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out.iter_mut().zip(core.row(al, m)) {
            *o += x * y;
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `sum_m coeff[m] U[:, m, :]` as a row-major `(left, right)` matrix.
fn weighted_slice_sum(coeff: &[f64], core: &Core) -> Vec<f64> {
    let (l, r) = (core.left, core.right);
    let mut out = vec![0.0; l * r];
    for al in 0..l {
        let dst = &mut out[al * r..(al + 1) * r];
        for (m, &c) in coeff.iter().enumerate() {
            axpy(c, core.row(al, m), dst);
        }
    }
    out
}

/// `out += w · A` for a row-major `(w.len(), out.len())` matrix.
#[inline]
fn row_times_matrix(w: &[f64], a: &[f64], out: &mut [f64]) {
    let r = out.len();
    for (i, &x) in w.iter().enumerate() {
        axpy(x, &a[i * r..(i + 1) * r], out);
    }
}

fn structured_path(t: &[Core], u: &[Core], structure: Structure, counter: &mut OpCounter) -> Mat<f64> {
    let p = t.len();
    let mut w = first_core(&t[0], &u[0], counter);
    for k in 1..p {
        let last = k + 1 == p;
        w = match (structure, last) {
            (Structure::Gradient { .. }, false) => gradient_interior(&w, &t[k], &u[k], counter),
            (Structure::Gradient { .. }, true) => gradient_last(&w, &t[k], &u[k], counter),
            (Structure::Generator { .. }, false) => generator_interior(&w, &t[k], &u[k], counter),
            (Structure::Generator { .. }, true) => generator_last(&w, &t[k], &u[k], counter),
            (Structure::Dense, _) => unreachable!(),
        };
    }
    Mat::from_fn(w.rows, w.cols, |a, b| w.data[a * w.cols + b])
}

/// Both leading ranks are one: `W[b, :] = sum_m T[0, m, b] U[0, m, :]`.
fn first_core(tc: &Core, uc: &Core, counter: &mut OpCounter) -> State {
    let mut w = State::zeros(tc.right, uc.right);
    for m in 0..tc.mode {
        let urow = uc.row(0, m);
        for (b, &tv) in tc.row(0, m).iter().enumerate() {
            if tv != 0.0 {
                axpy(tv, urow, w.row_mut(b));
            }
        }
    }
    counter.add(tc.mode * tc.right * uc.right);
    w
}

/// Adds `W[b, :] · sum_m diag[m] U[:, m, :]` to `next[b, :]` for the rows in
/// `rows`, choosing between a pre-summed slice and per-slice products.
fn diagonal_rows(
    w: &State,
    diag: &[f64],
    uc: &Core,
    rows: std::ops::Range<usize>,
    target: impl Fn(usize) -> usize,
    next: &mut State,
    counter: &mut OpCounter,
) {
    let count = rows.len();
    if count == 0 {
        return;
    }
    let (r0, r1) = (uc.left, uc.right);
    if count >= 2 {
        let ubar = weighted_slice_sum(diag, uc);
        counter.add(uc.mode * r0 * r1);
        for a in rows {
            let mut out = vec![0.0; r1];
            row_times_matrix(w.row(a), &ubar, &mut out);
            axpy(1.0, &out, next.row_mut(target(a)));
        }
        counter.add(count * r0 * r1);
    } else {
        let mut y = vec![0.0; r1];
        for a in rows {
            for (m, &e) in diag.iter().enumerate() {
                y.iter_mut().for_each(|v| *v = 0.0);
                row_times_slice(w.row(a), uc, m, &mut y);
                axpy(e, &y, next.row_mut(target(a)));
            }
        }
        counter.add(count * uc.mode * (r0 * r1 + r1));
    }
}

fn gradient_interior(w: &State, tc: &Core, uc: &Core, counter: &mut OpCounter) -> State {
    let s = tc.right;
    let (r0, r1) = (uc.left, uc.right);
    let mut next = State::zeros(s, r1);
    let mut y0 = vec![0.0; r1];
    for m in 0..tc.mode {
        y0.iter_mut().for_each(|v| *v = 0.0);
        row_times_slice(w.row(0), uc, m, &mut y0);
        for (b, &tv) in tc.row(0, m).iter().enumerate() {
            axpy(tv, &y0, next.row_mut(b));
        }
    }
    counter.add(tc.mode * (r0 * r1 + s * r1));
    let diag: Vec<f64> = (0..tc.mode).map(|m| tc.get(1, m, 1)).collect();
    diagonal_rows(w, &diag, uc, 1..s, |a| a, &mut next, counter);
    next
}

fn gradient_last(w: &State, tc: &Core, uc: &Core, counter: &mut OpCounter) -> State {
    let c = tc.right;
    let (r0, r1) = (uc.left, uc.right);
    let mut next = State::zeros(c, r1);
    let mut y0 = vec![0.0; r1];
    for m in 0..tc.mode {
        y0.iter_mut().for_each(|v| *v = 0.0);
        row_times_slice(w.row(0), uc, m, &mut y0);
        for (j, &tv) in tc.row(0, m).iter().enumerate() {
            axpy(tv, &y0, next.row_mut(j));
        }
    }
    counter.add(tc.mode * (r0 * r1 + c * r1));
    let diag: Vec<f64> = (0..tc.mode).map(|m| tc.get(1, m, 0)).collect();
    diagonal_rows(w, &diag, uc, 1..c + 1, |a| a - 1, &mut next, counter);
    next
}

fn generator_interior(w: &State, tc: &Core, uc: &Core, counter: &mut OpCounter) -> State {
    let s = tc.right;
    let (r0, r1) = (uc.left, uc.right);
    let mut next = State::zeros(s, r1);
    let mut y = vec![0.0; r1];
    let mut z = vec![0.0; r0];
    for m in 0..tc.mode {
        // row 0 spreads over every column
        y.iter_mut().for_each(|v| *v = 0.0);
        row_times_slice(w.row(0), uc, m, &mut y);
        for (b, &tv) in tc.row(0, m).iter().enumerate() {
            axpy(tv, &y, next.row_mut(b));
        }
        // column 1 gathers every row below the first
        z.iter_mut().for_each(|v| *v = 0.0);
        for a in 1..s {
            axpy(tc.get(a, m, 1), w.row(a), &mut z);
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        row_times_slice(&z, uc, m, &mut y);
        axpy(1.0, &y, next.row_mut(1));
    }
    counter.add(tc.mode * (2 * r0 * r1 + s * r1 + (s - 1) * r0));
    let diag: Vec<f64> = (0..tc.mode).map(|m| tc.get(1, m, 1)).collect();
    diagonal_rows(w, &diag, uc, 2..s, |a| a, &mut next, counter);
    next
}

fn generator_last(w: &State, tc: &Core, uc: &Core, counter: &mut OpCounter) -> State {
    let s = tc.left;
    let (r0, r1) = (uc.left, uc.right);
    let mut next = State::zeros(1, r1);
    let mut z = vec![0.0; r0];
    for m in 0..tc.mode {
        z.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..s {
            axpy(tc.get(a, m, 0), w.row(a), &mut z);
        }
        row_times_slice(&z, uc, m, next.row_mut(0));
    }
    counter.add(tc.mode * (s * r0 + r0 * r1));
    next
}

/// Contraction of many structured left operands against one shared right
/// train, stacked so that each core step is a dense matrix product per mode
/// index followed by a scatter over the structural pattern.
pub struct SharedContraction {
    structure: Structure,
    mode_sizes: Vec<usize>,
    ranks: Vec<usize>,
    first: Mat<f64>,
    slices: Vec<Vec<Mat<f64>>>,
}

impl SharedContraction {
    pub fn new(u: &TensorTrain, structure: Structure) -> Result<Self> {
        let cores = u.cores();
        if cores[0].left != 1 {
            return Err(Error::Shape("contraction needs unit leading ranks".into()));
        }
        let first = Mat::from_fn(cores[0].mode, cores[0].right, |m, b| cores[0].get(0, m, b));
        let slices = cores[1..]
            .iter()
            .map(|c| (0..c.mode).map(|m| c.slice(m)).collect())
            .collect();
        Ok(SharedContraction {
            structure,
            mode_sizes: u.mode_sizes(),
            ranks: u.ranks(),
            first,
            slices,
        })
    }

    /// Returns the stacked results, rows ordered sample-major: row
    /// `l * s_p + a` holds row `a` of the contraction of sample `l`.
    pub fn contract_block(&self, trains: &[&[Core]], counter: Option<&mut OpCounter>) -> Result<Mat<f64>> {
        let p = self.mode_sizes.len();
        let Some(lead) = trains.first() else {
            return Ok(Mat::zeros(0, self.ranks[p]));
        };
        for t in trains {
            if t.len() != p {
                return Err(Error::Shape(format!("left operand of order {} against {p}", t.len())));
            }
            for (k, core) in t.iter().enumerate() {
                if core.mode != self.mode_sizes[k]
                    || core.left != lead[k].left
                    || core.right != lead[k].right
                {
                    return Err(Error::Shape(format!("core {k} shapes differ within a block")));
                }
            }
        }
        if lead[0].left != 1 {
            return Err(Error::Shape("contraction needs unit leading ranks".into()));
        }
        for (k, core) in lead.iter().enumerate() {
            if let Some((l, r)) = expected_shape(self.structure, k, p) {
                if core.left != l || core.right != r {
                    return Err(Error::Shape(format!(
                        "core {k} has ranks ({}, {}) but {:?} expects ({l}, {r})",
                        core.left, core.right, self.structure
                    )));
                }
            }
        }
        let batch = trains.len();
        let mut scratch = OpCounter::default();
        let counter = counter.unwrap_or(&mut scratch);

        let s1 = lead[0].right;
        let n0 = lead[0].mode;
        let coeff = Mat::from_fn(batch * s1, n0, |row, m| trains[row / s1][0].get(0, m, row % s1));
        let mut w = crate::linalg::matmul(coeff.as_ref(), self.first.as_ref());
        counter.add(batch * s1 * n0 * self.ranks[1]);

        for k in 1..p {
            let (s, s_next) = (lead[k].left, lead[k].right);
            let pattern = structural_pattern(self.structure, k, p).unwrap_or_else(|| {
                (0..s).flat_map(|a| (0..s_next).map(move |b| (a, b))).collect()
            });
            let r_next = self.ranks[k + 1];
            let mut next = Mat::<f64>::zeros(batch * s_next, r_next);
            let mut table = vec![0.0; batch * pattern.len()];
            for m in 0..lead[k].mode {
                for (l, t) in trains.iter().enumerate() {
                    for (e, &(a, b)) in pattern.iter().enumerate() {
                        table[l * pattern.len() + e] = t[k].get(a, m, b);
                    }
                }
                let prod = crate::linalg::matmul(w.as_ref(), self.slices[k - 1][m].as_ref());
                counter.add(batch * (s * self.ranks[k] + pattern.len()) * r_next);
                for j in 0..r_next {
                    let src = prod.col_as_slice(j);
                    let dst = next.col_as_slice_mut(j);
                    for l in 0..batch {
                        let coeffs = &table[l * pattern.len()..(l + 1) * pattern.len()];
                        for (&c, &(a, b)) in coeffs.iter().zip(&pattern) {
                            dst[l * s_next + b] += c * src[l * s + a];
                        }
                    }
                }
            }
            w = next;
        }
        Ok(w)
    }
}
