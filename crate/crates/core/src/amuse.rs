//! Dense generator EDMD on the full product basis, used as the reference
//! for the tensor-train pipeline.

use faer::{Mat, MatRef};

use crate::basis::ProductBasis;
use crate::error::{Error, Result};
use crate::linalg;
use crate::sde::{SdeModel, Trajectory};

fn check_weights(w: Option<&[f64]>, m: usize) -> Result<()> {
    if let Some(w) = w {
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
    Ok(())
}

/// Rescales weights to unit mean so an unknown normalizing constant of the
/// sampling density drops out of the absolute truncation threshold.
pub fn normalize_weights(w: &[f64]) -> Vec<f64> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|&v| v / mean).collect()
}

fn weight(w: Option<&[f64]>, l: usize) -> f64 {
    w.map_or(1.0, |w| w[l])
}

/// `(1/m) Psi W Psi^T`.
pub fn empirical_c(psi: MatRef<'_, f64>, w: Option<&[f64]>) -> Result<Mat<f64>> {
    let m = psi.ncols();
    check_weights(w, m)?;
    let scaled = Mat::from_fn(psi.nrows(), m, |i, l| psi[(i, l)] * weight(w, l));
    Ok(linalg::matmul(scaled.as_ref(), psi.transpose()) / (m as f64))
}

/// `(1/m) Psi W (L Psi)^T`.
pub fn empirical_a_nonrev(psi: MatRef<'_, f64>, lpsi: MatRef<'_, f64>, w: Option<&[f64]>) -> Result<Mat<f64>> {
    let m = psi.ncols();
    if lpsi.nrows() != psi.nrows() || lpsi.ncols() != m {
        return Err(Error::Shape("basis and generator data shapes differ".into()));
    }
    check_weights(w, m)?;
    let scaled = Mat::from_fn(psi.nrows(), m, |i, l| psi[(i, l)] * weight(w, l));
    Ok(linalg::matmul(scaled.as_ref(), lpsi.transpose()) / (m as f64))
}

/// `-(1/(2m)) dPsi W dPsi^T`, where sample `l` owns the column block
/// `l * block .. (l + 1) * block`.
pub fn empirical_a_rev(dpsi: MatRef<'_, f64>, block: usize, w: Option<&[f64]>) -> Result<Mat<f64>> {
    if block == 0 || dpsi.ncols() % block != 0 {
        return Err(Error::Shape(format!("{} columns do not split into blocks of {block}", dpsi.ncols())));
    }
    let m = dpsi.ncols() / block;
    check_weights(w, m)?;
    let scaled = Mat::from_fn(dpsi.nrows(), dpsi.ncols(), |i, j| dpsi[(i, j)] * weight(w, j / block));
    Ok(linalg::matmul(scaled.as_ref(), dpsi.transpose()) * (-0.5 / m as f64))
}

/// Full-basis evaluations at every sample.
#[derive(Clone, Debug)]
pub struct DenseGeneratorData {
    /// `N x m`.
    pub psi: Mat<f64>,
    /// `N x m`.
    pub lpsi: Mat<f64>,
    /// `N x (m * noise_dim)`, gradients times `sigma`.
    pub dpsi: Mat<f64>,
    pub noise_dim: usize,
}

/// Evaluates every product function, its generator image and its
/// `grad psi sigma` row by explicit product-rule loops.
pub fn dense_generator_data(
    basis: &ProductBasis,
    samples: &Trajectory,
    model: &dyn SdeModel,
) -> Result<DenseGeneratorData> {
    let n_total = basis.total_dimension()?;
    let m = samples.len();
    let d = model.dim();
    let s = model.noise_dim();
    if samples.dim() != d {
        return Err(Error::Shape(format!("samples of dimension {} for a {d}-dimensional model", samples.dim())));
    }
    let sizes = basis.mode_sizes();
    let p = sizes.len();
    let mut psi = Mat::zeros(n_total, m);
    let mut lpsi = Mat::zeros(n_total, m);
    let mut dpsi = Mat::zeros(n_total, m * s);
    for (l, x) in samples.iter().enumerate() {
        let b = model.drift(x)?;
        let a = model.diffusion_matrix(x);
        let sigma = model.diffusion(x);
        // Express drift, diffusion and noise in basis coordinates.
        let (y, drift_y, a_y, sigma_y) = match basis.map() {
            Some(map) => {
                let jac = map.jacobian(x);
                let second = map.hessian_contract(x, a.as_ref());
                let drift_y: Vec<f64> = (0..jac.nrows())
                    .map(|c| (0..d).map(|i| jac[(c, i)] * b[i]).sum::<f64>() + 0.5 * second[c])
                    .collect();
                (map.eval(x), drift_y, &jac * &a * jac.transpose(), &jac * &sigma)
            }
            None => (x.to_vec(), b.clone(), a.clone(), sigma.clone()),
        };
        let dy = y.len();
        let coords: Vec<usize> = basis.modes().iter().map(|m| m.coordinate).collect();
        let vals: Vec<Vec<f64>> = (0..p).map(|k| basis.eval_mode(k, y[coords[k]])).collect();
        let d1: Vec<Vec<f64>> = (0..p).map(|k| basis.eval_mode_d1(k, y[coords[k]])).collect();
        let d2: Vec<Vec<f64>> = (0..p).map(|k| basis.eval_mode_d2(k, y[coords[k]])).collect();

        let mut idx = vec![0usize; p];
        for row in 0..n_total {
            // product of all factors except those listed
            let product_except = |skip: &[usize]| -> f64 {
                (0..p)
                    .filter(|k| !skip.contains(k))
                    .map(|k| vals[k][idx[k]])
                    .product()
            };
            psi[(row, l)] = product_except(&[]);
            let mut grad = vec![0.0; dy];
            let mut hess = vec![0.0; dy * dy];
            for k in 0..p {
                let ck = coords[k];
                grad[ck] += d1[k][idx[k]] * product_except(&[k]);
                hess[ck * dy + ck] += d2[k][idx[k]] * product_except(&[k]);
                for k2 in 0..p {
                    if k2 != k {
                        let c2 = coords[k2];
                        hess[ck * dy + c2] += d1[k][idx[k]] * d1[k2][idx[k2]] * product_except(&[k, k2]);
                    }
                }
            }
            let mut gen = 0.0;
            for i in 0..dy {
                gen += drift_y[i] * grad[i];
                for j in 0..dy {
                    gen += 0.5 * a_y[(i, j)] * hess[i * dy + j];
                }
            }
            lpsi[(row, l)] = gen;
            for j in 0..s {
                dpsi[(row, l * s + j)] = (0..dy).map(|i| grad[i] * sigma_y[(i, j)]).sum();
            }
            for k in (0..p).rev() {
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
    Ok(DenseGeneratorData {
        psi,
        lpsi,
        dpsi,
        noise_dim: s,
    })
}

/// Which estimator of the stiffness matrix to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    Reversible,
    NonReversible,
}

/// Rank selection for the whitening SVD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DenseTruncation {
    Rank(usize),
    /// Keep singular values `>= sqrt(m) * eps`.
    Threshold(f64),
    /// Keep singular values `>= sqrt(m) * eps * s_1`.
    Relative(f64),
    /// Keep singular values above `1e-12` times the largest.
    NumericalRank,
}

/// Output of AMUSE.
#[derive(Clone, Debug)]
pub struct DenseReducedModel {
    pub u: Mat<f64>,
    pub sigma: Vec<f64>,
    pub v: Mat<f64>,
    pub m: Mat<f64>,
    pub mode: EstimatorMode,
}

/// AMUSE: whiten the (weighted) data by a truncated SVD and project the
/// generator onto the leading singular subspace.
pub fn amuse(
    data: &DenseGeneratorData,
    mode: EstimatorMode,
    truncation: DenseTruncation,
    w: Option<&[f64]>,
) -> Result<DenseReducedModel> {
    let psi = data.psi.as_ref();
    let m = psi.ncols();
    check_weights(w, m)?;
    let normalized = w.map(normalize_weights);
    let w = normalized.as_deref();
    let sqrt_w: Vec<f64> = (0..m).map(|l| weight(w, l).sqrt()).collect();
    let scaled = Mat::from_fn(psi.nrows(), m, |i, l| psi[(i, l)] * sqrt_w[l]);
    let (u, s, v) = linalg::thin_svd(scaled.as_ref())?;
    let keep = match truncation {
        DenseTruncation::Rank(r) => {
            let numerical = s.iter().filter(|&&x| x > 1e-12 * s[0]).count();
            if r == 0 || r > numerical {
                return Err(Error::Argument(format!("rank {r} exceeds numerical rank {numerical}")));
            }
            r
        }
        DenseTruncation::Threshold(eps) => {
            let cut = (m as f64).sqrt() * eps;
            s.iter().take_while(|&&x| x >= cut).count()
        }
        DenseTruncation::Relative(eps) => {
            let cut = (m as f64).sqrt() * eps * s[0];
            s.iter().take_while(|&&x| x >= cut).count()
        }
        DenseTruncation::NumericalRank => s.iter().filter(|&&x| x > 1e-12 * s[0]).count(),
    };
    if keep == 0 || s[0] == 0.0 {
        return Err(Error::EmptyModel);
    }
    let u = u.subcols(0, keep).to_owned();
    let v = v.subcols(0, keep).to_owned();
    let sigma: Vec<f64> = s[..keep].to_vec();
    let u_scaled = Mat::from_fn(u.nrows(), keep, |i, j| u[(i, j)] / sigma[j]);
    let reduced = match mode {
        EstimatorMode::NonReversible => {
            // V^T W^{1/2} LPsi^T U Sigma^{-1}
            let lpsi_t_u = linalg::matmul(data.lpsi.transpose(), u_scaled.as_ref());
            let vw = Mat::from_fn(m, keep, |l, j| v[(l, j)] * sqrt_w[l]);
            linalg::matmul(vw.transpose(), lpsi_t_u.as_ref())
        }
        EstimatorMode::Reversible => {
            // -1/2 Sigma^{-1} U^T dPsi W dPsi^T U Sigma^{-1}
            let s_cols = data.noise_dim;
            let proj = linalg::matmul(data.dpsi.transpose(), u_scaled.as_ref());
            let weighted = Mat::from_fn(proj.nrows(), keep, |j, c| proj[(j, c)] * sqrt_w[j / s_cols]);
            linalg::matmul(weighted.transpose(), weighted.as_ref()) * -0.5
        }
    };
    Ok(DenseReducedModel {
        u,
        sigma,
        v,
        m: reduced,
        mode,
    })
}

/// Operation counts `(N m^2, m (N r + r^2), r^3)` of dense AMUSE.
pub fn dense_cost_estimate(n_total: f64, m: f64, r: f64) -> (f64, f64, f64) {
    (n_total * m * m, m * (n_total * r + r * r), r * r * r)
}
