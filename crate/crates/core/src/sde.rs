//! Stochastic differential equations `dX = b(X) dt + sigma(X) dW`, their
//! simulation, and the Gaussian mixture used for re-weighted sampling.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub trait SdeModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Number of driving Brownian motions.
    fn noise_dim(&self) -> usize {
        self.dim()
    }
    fn drift(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `sigma(x)`, shape `(dim, noise_dim)`.
    fn diffusion(&self, x: &[f64]) -> Mat<f64>;
    /// `a(x) = sigma sigma^T`.
    fn diffusion_matrix(&self, x: &[f64]) -> Mat<f64> {
        let s = self.diffusion(x);
        &s * s.transpose()
    }
    /// Logarithm of an unnormalized invariant density, when known.
    fn log_density(&self, _x: &[f64]) -> Option<f64> {
        None
    }
    fn reversible(&self) -> bool {
        false
    }
}

fn scaled_identity(dim: usize, scale: f64) -> Mat<f64> {
    Mat::from_fn(dim, dim, |i, j| if i == j { scale } else { 0.0 })
}

/// Four-well potential in the `(x1, x2)` plane plus stiff harmonic
/// directions, `sigma = sqrt(2) Id`.
#[derive(Clone, Debug)]
pub struct LemonSlice {
    harmonic_dims: usize,
    name: String,
}

impl LemonSlice {
    /// Planar potential with `harmonic_dims` extra coordinates `5 x_i^2`.
    pub fn new(harmonic_dims: usize) -> Self {
        LemonSlice {
            harmonic_dims,
            name: format!("lemon_slice_{}d", 2 + harmonic_dims),
        }
    }

    fn polar(x: &[f64]) -> Result<(f64, f64, f64)> {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return Err(Error::DriftSingularity("radius is zero".into()));
        }
        let phi = x[1].atan2(x[0]);
        let half_cos = (0.5 * phi).cos();
        if half_cos <= 0.0 {
            return Err(Error::DriftSingularity(format!("cos(phi/2) vanishes at phi = {phi}")));
        }
        Ok((r, phi, half_cos))
    }

    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        let (r, phi, half_cos) = Self::polar(x)?;
        let planar = (4.0 * phi).cos() + 1.0 / half_cos + 10.0 * (r - 1.0).powi(2) + 1.0 / r;
        let harmonic: f64 = x[2..].iter().map(|v| 5.0 * v * v).sum();
        Ok(planar + harmonic)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (r, phi, half_cos) = Self::polar(x)?;
        let dv_dr = 20.0 * (r - 1.0) - 1.0 / (r * r);
        let dv_dphi = -4.0 * (4.0 * phi).sin() + 0.5 * (0.5 * phi).sin() / (half_cos * half_cos);
        let r2 = r * r;
        let mut g = Vec::with_capacity(x.len());
        g.push(dv_dr * x[0] / r - dv_dphi * x[1] / r2);
        g.push(dv_dr * x[1] / r + dv_dphi * x[0] / r2);
        g.extend(x[2..].iter().map(|v| 10.0 * v));
        Ok(g)
    }
}

impl SdeModel for LemonSlice {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        2 + self.harmonic_dims
    }

    fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gradient(x)?.into_iter().map(|v| -v).collect())
    }

    fn diffusion(&self, _x: &[f64]) -> Mat<f64> {
        scaled_identity(self.dim(), std::f64::consts::SQRT_2)
    }

    fn diffusion_matrix(&self, _x: &[f64]) -> Mat<f64> {
        scaled_identity(self.dim(), 2.0)
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(self.potential(x).map_or(f64::NEG_INFINITY, |v| -v))
    }

    fn reversible(&self) -> bool {
        true
    }
}

/// The four-dimensional benchmark system.
pub fn lemon_slice_4d() -> LemonSlice {
    LemonSlice::new(2)
}

/// `b(x) = -diag(k) x`, `sigma = sqrt(2) Id`.
#[derive(Clone, Debug)]
pub struct OrnsteinUhlenbeck {
    stiffness: Vec<f64>,
}

impl OrnsteinUhlenbeck {
    pub fn new(stiffness: Vec<f64>) -> Result<Self> {
        if stiffness.is_empty() || stiffness.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::Argument(format!("stiffness must be positive, got {stiffness:?}")));
        }
        Ok(OrnsteinUhlenbeck { stiffness })
    }

    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }

    /// Stationary variances `1 / k_i`.
    pub fn stationary_variance(&self) -> Vec<f64> {
        self.stiffness.iter().map(|k| 1.0 / k).collect()
    }
}

/// Ornstein-Uhlenbeck process of the given dimension.
pub fn ou_model(dim: usize, stiffness: Vec<f64>) -> Result<OrnsteinUhlenbeck> {
    if stiffness.len() != dim {
        return Err(Error::Argument(format!("{} stiffness values for dimension {dim}", stiffness.len())));
    }
    OrnsteinUhlenbeck::new(stiffness)
}

impl SdeModel for OrnsteinUhlenbeck {
    fn name(&self) -> &str {
        "ornstein_uhlenbeck"
    }

    fn dim(&self) -> usize {
        self.stiffness.len()
    }

    fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.iter().zip(&self.stiffness).map(|(v, k)| -k * v).collect())
    }

    fn diffusion(&self, _x: &[f64]) -> Mat<f64> {
        scaled_identity(self.dim(), std::f64::consts::SQRT_2)
    }

    fn diffusion_matrix(&self, _x: &[f64]) -> Mat<f64> {
        scaled_identity(self.dim(), 2.0)
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(-0.5 * x.iter().zip(&self.stiffness).map(|(v, k)| k * v * v).sum::<f64>())
    }

    fn reversible(&self) -> bool {
        true
    }
}

/// Sample states, row-major `m x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    states: Vec<f64>,
    pub dt_between_saves: f64,
    pub seed: u64,
    pub model_name: String,
}

impl Trajectory {
    pub fn new(dim: usize, states: Vec<f64>, dt_between_saves: f64, seed: u64, model_name: &str) -> Result<Self> {
        if dim == 0 || states.is_empty() || states.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form states of dimension {dim}", states.len())));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry in sample {}", pos / dim)));
        }
        Ok(Trajectory {
            dim,
            states,
            dt_between_saves,
            seed,
            model_name: model_name.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, l: usize) -> &[f64] {
        &self.states[l * self.dim..(l + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn iter(&self) -> std::slice::Chunks<'_, f64> {
        self.states.chunks(self.dim)
    }

    /// Rows `range` as a new sample set.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Trajectory> {
        Trajectory::new(
            self.dim,
            self.states[range.start * self.dim..range.end * self.dim].to_vec(),
            self.dt_between_saves,
            self.seed,
            &self.model_name,
        )
    }
}

/// Euler-Maruyama settings. States are saved after every `save_every`
/// steps following `burn_in` discarded steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerMaruyama {
    pub dt: f64,
    pub n_steps: u64,
    pub save_every: u64,
    pub burn_in: u64,
}

impl EulerMaruyama {
    pub fn run(&self, model: &dyn SdeModel, x0: &[f64], seed: u64) -> Result<Trajectory> {
        let d = model.dim();
        if x0.len() != d {
            return Err(Error::Shape(format!("initial state of length {} for dimension {d}", x0.len())));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.save_every == 0 {
            return Err(Error::Argument("time step must be positive and save_every at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sqrt_dt = self.dt.sqrt();
        let mut x = x0.to_vec();
        let mut noise = vec![0.0; model.noise_dim()];
        let mut saved = Vec::new();
        let total = self.burn_in + self.n_steps;
        for step in 0..total {
            let b = model.drift(&x).map_err(|e| Error::IntegrationBlowup {
                step,
                reason: e.to_string(),
            })?;
            let sigma = model.diffusion(&x);
            for z in noise.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let mut dx = b[i] * self.dt;
                for (j, z) in noise.iter().enumerate() {
                    dx += sigma[(i, j)] * sqrt_dt * z;
                }
                x[i] += dx;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationBlowup {
                    step,
                    reason: "state became non-finite".into(),
                });
            }
            if step >= self.burn_in && (step - self.burn_in + 1) % self.save_every == 0 {
                saved.extend_from_slice(&x);
            }
        }
        if saved.is_empty() {
            saved = x;
        }
        Trajectory::new(d, saved, self.dt * self.save_every as f64, seed, model.name())
    }
}

/// Plain Euler-Maruyama without burn-in.
pub fn euler_maruyama(
    model: &dyn SdeModel,
    x0: &[f64],
    dt: f64,
    n_steps: u64,
    save_every: u64,
    seed: u64,
) -> Result<Trajectory> {
    EulerMaruyama {
        dt,
        n_steps,
        save_every,
        burn_in: 0,
    }
    .run(model, x0, seed)
}

#[derive(Clone, Debug)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Mat<f64>,
    cholesky: Mat<f64>,
    log_norm: f64,
}

/// Gaussian mixture sampling density.
#[derive(Clone, Debug)]
pub struct GmmSampler {
    components: Vec<GmmComponent>,
    dim: usize,
}

impl GmmSampler {
    pub fn new(components: Vec<(f64, Vec<f64>, Mat<f64>)>) -> Result<Self> {
        let Some(dim) = components.first().map(|c| c.1.len()) else {
            return Err(Error::Argument("mixture needs at least one component".into()));
        };
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Argument("mixture weights must be positive and sum to one".into()));
        }
        let components = components
            .into_iter()
            .map(|(weight, mean, covariance)| {
                if mean.len() != dim || covariance.nrows() != dim || covariance.ncols() != dim {
                    return Err(Error::Shape("mixture component dimensions differ".into()));
                }
                crate::linalg::init();
                let llt = covariance
                    .llt(Side::Lower)
                    .map_err(|_| Error::Argument("mixture covariance is not positive definite".into()))?;
                let cholesky = llt.L().to_owned();
                let log_det: f64 = (0..dim).map(|i| 2.0 * cholesky[(i, i)].ln()).sum();
                let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
                Ok(GmmComponent {
                    weight,
                    mean,
                    covariance,
                    cholesky,
                    log_norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmSampler { components, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Weighted average of the component means.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for c in &self.components {
            for (m, v) in mu.iter_mut().zip(&c.mean) {
                *m += c.weight * v;
            }
        }
        mu
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                // forward substitution L z = x - mean
                let mut z = vec![0.0; self.dim];
                for i in 0..self.dim {
                    let mut s = x[i] - c.mean[i];
                    for j in 0..i {
                        s -= c.cholesky[(i, j)] * z[j];
                    }
                    z[i] = s / c.cholesky[(i, i)];
                }
                c.weight.ln() + c.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return top;
        }
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn sample(&self, m: usize, seed: u64) -> Result<Trajectory> {
        if m == 0 {
            return Err(Error::Argument("sample count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(m * self.dim);
        let mut z = vec![0.0; self.dim];
        for _ in 0..m {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (i, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let c = &self.components[pick];
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..self.dim {
                let shift: f64 = (0..=i).map(|j| c.cholesky[(i, j)] * z[j]).sum();
                states.push(c.mean[i] + shift);
            }
        }
        Trajectory::new(self.dim, states, 0.0, seed, "gmm")
    }
}

/// Stand-in mixture for the four-dimensional Lemon Slice re-weighting
/// study. Two components of weight 1/4 sit on the right-hand wells with
/// covariance `0.2 Id`; one of weight 1/2 straddles both left-hand wells
/// at `(-0.85, 0)` with variance 0.5 along `x2`. The left wells are
/// oversampled roughly fivefold relative to the invariant measure.
pub fn lemon_slice_gmm() -> GmmSampler {
    let quarter = std::f64::consts::FRAC_1_SQRT_2;
    let mut left = scaled_identity(4, 0.2);
    left[(1, 1)] = 0.5;
    GmmSampler::new(vec![
        (0.25, vec![quarter, quarter, 0.0, 0.0], scaled_identity(4, 0.2)),
        (0.25, vec![quarter, -quarter, 0.0, 0.0], scaled_identity(4, 0.2)),
        (0.5, vec![-0.85, 0.0, 0.0, 0.0], left),
    ])
    .expect("built-in mixture is valid")
}

/// `w_l = rho(x_l) / theta(x_l)` with the model's unnormalized density.
pub fn importance_weights(model: &dyn SdeModel, sampler: &GmmSampler, samples: &Trajectory) -> Result<Vec<f64>> {
    samples
        .iter()
        .enumerate()
        .map(|(l, x)| {
            let log_rho = model
                .log_density(x)
                .ok_or_else(|| Error::Argument(format!("model {} has no invariant density", model.name())))?;
            let log_theta = sampler.log_density(x);
            if log_theta == f64::NEG_INFINITY {
                return Err(Error::DegenerateWeight(l));
            }
            let w = (log_rho - log_theta).exp();
            if !w.is_finite() {
                return Err(Error::DegenerateWeight(l));
            }
            Ok(w)
        })
        .collect()
}
