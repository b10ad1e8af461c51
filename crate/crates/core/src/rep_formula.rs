//! Structured sums of rank-one tensors with exact low-rank trains.
//!
//! The represented tensor is
//! `sum_k e_1 x .. x f_k x .. x e_p + sum_{k1<k2} sum_i e x .. g_{k1,i} .. h_{k2,i} .. x e`,
//! optionally extended by the mirrored terms with `h` before `g`.

use crate::error::{Error, Result};
use crate::tt::{Core, DenseTensor, TensorTrain};

const BRUTE_FORCE_CAP: usize = 1_000_000;

/// Factor vectors of a structured sum.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredSumSpec {
    /// `e[k]`, one per mode.
    pub e: Vec<Vec<f64>>,
    /// `f[k]`, one per mode.
    pub f: Vec<Vec<f64>>,
    /// `g[k][i]`, `d` vectors per mode.
    pub g: Vec<Vec<Vec<f64>>>,
    /// `h[k][i]`, `d` vectors per mode.
    pub h: Vec<Vec<Vec<f64>>>,
    pub include_symmetric: bool,
}

impl StructuredSumSpec {
    pub fn order(&self) -> usize {
        self.e.len()
    }

    pub fn coupling(&self) -> usize {
        self.g.first().map_or(0, Vec::len)
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.e.iter().map(Vec::len).collect()
    }

    fn validate(&self) -> Result<()> {
        let p = self.order();
        let d = self.coupling();
        if self.f.len() != p || self.g.len() != p || self.h.len() != p {
            return Err(Error::Shape("factor lists must have one entry per mode".into()));
        }
        for k in 0..p {
            let n = self.e[k].len();
            if n == 0 {
                return Err(Error::Shape(format!("mode {k} is empty")));
            }
            if self.g[k].len() != d || self.h[k].len() != d {
                return Err(Error::Shape(format!("mode {k} needs {d} g and h vectors")));
            }
            let lengths_ok = self.f[k].len() == n
                && self.g[k].iter().all(|v| v.len() == n)
                && self.h[k].iter().all(|v| v.len() == n);
            if !lengths_ok {
                return Err(Error::Shape(format!("vectors of mode {k} must have length {n}")));
            }
        }
        Ok(())
    }
}

/// Builds the exact train of the structured sum: ranks `d + 2`, or
/// `2d + 2` with the mirrored terms.
pub fn build_structured_tt(spec: &StructuredSumSpec) -> Result<TensorTrain> {
    spec.validate()?;
    let p = spec.order();
    if p < 2 {
        return Err(Error::Argument(
            "a structured sum needs at least two modes; use rank_one for one".into(),
        ));
    }
    let d = spec.coupling();
    let extra = if spec.include_symmetric { d } else { 0 };
    let rank = d + 2 + extra;
    let mut cores = Vec::with_capacity(p);
    for k in 0..p {
        let n = spec.e[k].len();
        let e = &spec.e[k];
        let f = &spec.f[k];
        let g = &spec.g[k];
        let h = &spec.h[k];
        let (left, right) = match k {
            0 => (1, rank),
            _ if k + 1 == p => (rank, 1),
            _ => (rank, rank),
        };
        let mut core = Core::zeros(left, n, right)?;
        for u in 0..n {
            if k == 0 {
                core.set(0, u, 0, e[u]);
                core.set(0, u, 1, f[u]);
                for i in 0..d {
                    core.set(0, u, i + 2, g[i][u]);
                }
                for i in 0..extra {
                    core.set(0, u, d + 2 + i, h[i][u]);
                }
            } else if k + 1 == p {
                core.set(0, u, 0, f[u]);
                core.set(1, u, 0, e[u]);
                for i in 0..d {
                    core.set(i + 2, u, 0, h[i][u]);
                }
                for i in 0..extra {
                    core.set(d + 2 + i, u, 0, g[i][u]);
                }
            } else {
                core.set(0, u, 0, e[u]);
                core.set(0, u, 1, f[u]);
                core.set(1, u, 1, e[u]);
                for i in 0..d {
                    core.set(0, u, i + 2, g[i][u]);
                    core.set(i + 2, u, 1, h[i][u]);
                    core.set(i + 2, u, i + 2, e[u]);
                }
                for i in 0..extra {
                    let j = d + 2 + i;
                    core.set(0, u, j, h[i][u]);
                    core.set(j, u, 1, g[i][u]);
                    core.set(j, u, j, e[u]);
                }
            }
        }
        cores.push(core);
    }
    TensorTrain::new(cores)
}

/// Dense evaluation of the structured sum by explicit outer products.
pub fn brute_force_structured(spec: &StructuredSumSpec) -> Result<DenseTensor> {
    spec.validate()?;
    let shape = spec.mode_sizes();
    let total = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .unwrap_or(usize::MAX);
    if total > BRUTE_FORCE_CAP {
        return Err(Error::Capacity {
            requested: total,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let p = spec.order();
    let d = spec.coupling();

    let mut terms: Vec<Vec<&[f64]>> = Vec::new();
    for k in 0..p {
        terms.push((0..p).map(|j| if j == k { &spec.f[j][..] } else { &spec.e[j][..] }).collect());
    }
    for k1 in 0..p {
        for k2 in k1 + 1..p {
            for i in 0..d {
                let mut pairs = vec![(&spec.g, &spec.h)];
                if spec.include_symmetric {
                    pairs.push((&spec.h, &spec.g));
                }
                for (first, second) in pairs {
                    terms.push(
                        (0..p)
                            .map(|j| match j {
                                _ if j == k1 => &first[j][i][..],
                                _ if j == k2 => &second[j][i][..],
                                _ => &spec.e[j][..],
                            })
                            .collect(),
                    );
                }
            }
        }
    }

    let mut out = DenseTensor::zeros(shape.clone());
    for factors in &terms {
        let mut idx = vec![0usize; p];
        for value in out.data_mut().iter_mut() {
            *value += idx.iter().zip(factors).map(|(&i, v)| v[i]).product::<f64>();
            for k in (0..p).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    Ok(out)
}
