//! Tensor-train representations of the data tensor and of the per-sample
//! gradient and generator tensors.

use faer::{Mat, MatRef};

use crate::basis::{chain_rule_pack, direct_pack, ChainRulePack, ProductBasis};
use crate::error::{Error, Result};
use crate::rep_formula::{build_structured_tt, StructuredSumSpec};
use crate::sde::{SdeModel, Trajectory};
use crate::tt::{Core, Structure, TensorTrain, DEFAULT_DENSE_CAP};

/// Data tensor with one diagonal core per mode, stored as the per-mode
/// evaluation matrices `psi_k(x_l)` of shape `(n_k, m)`.
#[derive(Clone, Debug)]
pub struct DataTensorTT {
    values: Vec<Mat<f64>>,
    weights: Option<Vec<f64>>,
}

impl DataTensorTT {
    pub fn new(basis: &ProductBasis, samples: &Trajectory, weights: Option<&[f64]>) -> Result<Self> {
        let m = samples.len();
        if samples.dim() < basis.required_dim() {
            return Err(Error::Shape(format!(
                "samples of dimension {} for a basis needing {}",
                samples.dim(),
                basis.required_dim()
            )));
        }
        if let Some(w) = weights {
            if w.len() != m {
                return Err(Error::Shape(format!("{} weights for {m} samples", w.len())));
            }
            if let Some(l) = w.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::Argument(format!("weight of sample {l} is negative or not finite")));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::Argument("all weights vanish".into()));
            }
        }
        let sizes = basis.mode_sizes();
        let mut values: Vec<Mat<f64>> = sizes.iter().map(|&n| Mat::zeros(n, m)).collect();
        for (l, x) in samples.iter().enumerate() {
            for (k, v) in basis.eval_values(x).into_iter().enumerate() {
                for (u, val) in v.into_iter().enumerate() {
                    values[k][(u, l)] = val;
                }
            }
        }
        Ok(DataTensorTT {
            values,
            weights: weights.map(<[f64]>::to_vec),
        })
    }

    pub fn order(&self) -> usize {
        self.values.len()
    }

    pub fn sample_count(&self) -> usize {
        self.values[0].ncols()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.values.iter().map(|v| v.nrows()).collect()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    /// Evaluations of mode `k`, shape `(n_k, m)`.
    pub fn mode_values(&self, k: usize) -> MatRef<'_, f64> {
        self.values[k].as_ref()
    }

    /// Mode values after right-orthonormalizing the weighted sample core:
    /// the square roots of the weights move into the last basis mode.
    pub fn absorbed_values(&self, k: usize) -> Mat<f64> {
        let v = &self.values[k];
        match (&self.weights, k + 1 == self.order()) {
            (Some(w), true) => Mat::from_fn(v.nrows(), v.ncols(), |u, l| v[(u, l)] * w[l].sqrt()),
            _ => v.clone(),
        }
    }

    /// Literal train of order `p + 1`: diagonal interior cores and a last
    /// core selecting the sample, scaled by `sqrt(w_l)` when weighted.
    pub fn to_train(&self) -> Result<TensorTrain> {
        let m = self.sample_count();
        let p = self.order();
        let mut cores = Vec::with_capacity(p + 1);
        for (k, v) in self.values.iter().enumerate() {
            let n = v.nrows();
            let left = if k == 0 { 1 } else { m };
            let size = left * n * m;
            if size > DEFAULT_DENSE_CAP {
                return Err(Error::Capacity {
                    requested: size,
                    cap: DEFAULT_DENSE_CAP,
                });
            }
            let core = Core::from_fn(left, n, m, |a, u, b| {
                if k == 0 {
                    v[(u, b)]
                } else if a == b {
                    v[(u, a)]
                } else {
                    0.0
                }
            })?;
            cores.push(core);
        }
        let last = Core::from_fn(m, m, 1, |a, u, _| {
            if a == u {
                self.weights.as_ref().map_or(1.0, |w| w[a].sqrt())
            } else {
                0.0
            }
        })?;
        cores.push(last);
        TensorTrain::new(cores)
    }
}

/// Which per-sample tensor a train represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Gradients of all product functions; the last core selects the
    /// derivative direction (or a column of an absorbed matrix).
    Gradient,
    /// Generator applied to all product functions.
    Generator,
}

#[derive(Clone, Debug)]
pub struct GeneratorTrain {
    pub train: TensorTrain,
    pub structure: Structure,
    pub kind: GeneratorKind,
}

impl GeneratorTrain {
    /// Cores that enter the contraction with a basis-space factor.
    pub fn basis_cores(&self) -> &[Core] {
        match self.kind {
            GeneratorKind::Gradient => &self.train.cores()[..self.train.order() - 1],
            GeneratorKind::Generator => self.train.cores(),
        }
    }
}

/// Gradient train from per-mode records; derivatives are taken with respect
/// to `coupling` basis coordinates. With `absorb`, the trailing selector core
/// is replaced by that `(coupling, cols)` matrix.
pub fn nabla_psi_from_pack(pack: &ChainRulePack, coupling: usize, absorb: Option<MatRef<'_, f64>>) -> Result<GeneratorTrain> {
    let p = pack.modes.len();
    let c = coupling;
    if c == 0 {
        return Err(Error::Argument("gradient needs at least one coordinate".into()));
    }
    if let Some(mode) = pack.modes.iter().find(|m| m.coordinate >= c) {
        return Err(Error::Shape(format!("mode coordinate {} outside {c} coordinates", mode.coordinate)));
    }
    let mut cores = Vec::with_capacity(p + 1);
    for (k, rec) in pack.modes.iter().enumerate() {
        let n = rec.value.len();
        let grad = rec.coordinate_gradient(c);
        let core = if p == 1 {
            Core::from_fn(1, n, c, |_, u, j| grad[(u, j)])?
        } else if k == 0 {
            Core::from_fn(1, n, c + 1, |_, u, b| if b == 0 { rec.value[u] } else { grad[(u, b - 1)] })?
        } else if k + 1 < p {
            Core::from_fn(c + 1, n, c + 1, |a, u, b| match (a, b) {
                (0, 0) => rec.value[u],
                (0, b) => grad[(u, b - 1)],
                (a, b) if a == b => rec.value[u],
                _ => 0.0,
            })?
        } else {
            Core::from_fn(c + 1, n, c, |a, u, j| match a {
                0 => grad[(u, j)],
                a if a == j + 1 => rec.value[u],
                _ => 0.0,
            })?
        };
        cores.push(core);
    }
    let selector = match absorb {
        Some(s) => {
            if s.nrows() != c {
                return Err(Error::Shape(format!("absorbed matrix has {} rows, expected {c}", s.nrows())));
            }
            Core::from_fn(c, s.ncols(), 1, |a, u, _| s[(a, u)])?
        }
        None => Core::from_fn(c, c, 1, |a, u, _| if a == u { 1.0 } else { 0.0 })?,
    };
    cores.push(selector);
    Ok(GeneratorTrain {
        train: TensorTrain::new(cores)?,
        structure: Structure::Gradient { coupling: c },
        kind: GeneratorKind::Gradient,
    })
}

/// Generator train from per-mode records with the noise matrix `sigma`
/// of shape `(d, s)`: ranks `s + 2`.
pub fn l_psi_from_pack(pack: &ChainRulePack, sigma: MatRef<'_, f64>) -> Result<GeneratorTrain> {
    let p = pack.modes.len();
    let s = sigma.ncols();
    if p == 1 {
        let rec = &pack.modes[0];
        let core = Core::from_fn(1, rec.value.len(), 1, |_, u, _| rec.generator[u])?;
        return Ok(GeneratorTrain {
            train: TensorTrain::new(vec![core])?,
            structure: Structure::Generator { coupling: s },
            kind: GeneratorKind::Generator,
        });
    }
    let mut coupling = Vec::with_capacity(p);
    for rec in &pack.modes {
        if rec.state_gradient.ncols() != sigma.nrows() {
            return Err(Error::Shape(format!(
                "gradient over {} coordinates against sigma with {} rows",
                rec.state_gradient.ncols(),
                sigma.nrows()
            )));
        }
        let projected = &rec.state_gradient * sigma;
        coupling.push(
            (0..s)
                .map(|i| (0..projected.nrows()).map(|u| projected[(u, i)]).collect())
                .collect::<Vec<Vec<f64>>>(),
        );
    }
    let spec = StructuredSumSpec {
        e: pack.modes.iter().map(|r| r.value.clone()).collect(),
        f: pack.modes.iter().map(|r| r.generator.clone()).collect(),
        g: coupling.clone(),
        h: coupling,
        include_symmetric: false,
    };
    Ok(GeneratorTrain {
        train: build_structured_tt(&spec)?,
        structure: Structure::Generator { coupling: s },
        kind: GeneratorKind::Generator,
    })
}

/// Per-mode records at a state, through the basis' coordinate map if any.
pub fn pack_at(basis: &ProductBasis, x: &[f64], model: &dyn SdeModel) -> Result<ChainRulePack> {
    let drift = model.drift(x)?;
    let a = model.diffusion_matrix(x);
    match basis.map() {
        Some(map) => chain_rule_pack(basis, x, map.as_ref(), a.as_ref(), &drift),
        None => direct_pack(basis, x, a.as_ref(), &drift),
    }
}

/// Dimension of the basis coordinates for states of dimension `d`.
pub fn basis_coordinate_dim(basis: &ProductBasis, d: usize) -> usize {
    basis.map().map_or(d, |m| m.output_dim())
}

/// Gradient train of all product functions at `x`, optionally with
/// `sigma` absorbed into the last core.
pub fn nabla_psi_train(basis: &ProductBasis, x: &[f64], sigma: Option<MatRef<'_, f64>>) -> Result<GeneratorTrain> {
    let c = basis_coordinate_dim(basis, x.len());
    let a = Mat::<f64>::zeros(x.len(), x.len());
    let zero = vec![0.0; x.len()];
    let pack = match basis.map() {
        Some(map) => chain_rule_pack(basis, x, map.as_ref(), a.as_ref(), &zero)?,
        None => direct_pack(basis, x, a.as_ref(), &zero)?,
    };
    nabla_psi_from_pack(&pack, c, sigma)
}

/// Generator train of all product functions at `x` for `model`.
pub fn l_psi_train(basis: &ProductBasis, x: &[f64], model: &dyn SdeModel) -> Result<GeneratorTrain> {
    let pack = pack_at(basis, x, model)?;
    l_psi_from_pack(&pack, model.diffusion(x).as_ref())
}
