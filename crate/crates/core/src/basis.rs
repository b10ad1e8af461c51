//! Univariate basis families and the product basis built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// A scalar function of one variable with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnivariateFunction {
    Constant,
    /// `exp(-(y - center)^2 / (2 s))`, `s` the squared bandwidth.
    Gaussian { center: f64, s: f64 },
    /// `exp(-sin^2((y - center) / 2) / (2 s))`.
    PeriodicGaussian { center: f64, s: f64 },
    Monomial { degree: u32 },
}

impl UnivariateFunction {
    pub fn validate(&self) -> Result<()> {
        match *self {
            UnivariateFunction::Gaussian { s, .. } | UnivariateFunction::PeriodicGaussian { s, .. }
                if !(s > 0.0 && s.is_finite()) =>
            {
                Err(Error::Argument(format!("gaussian width must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match *self {
            UnivariateFunction::Constant => 1.0,
            UnivariateFunction::Gaussian { center, s } => (-(y - center).powi(2) / (2.0 * s)).exp(),
            UnivariateFunction::PeriodicGaussian { center, s } => {
                (-(0.5 * (y - center)).sin().powi(2) / (2.0 * s)).exp()
            }
            UnivariateFunction::Monomial { degree } => y.powi(degree as i32),
        }
    }

    pub fn d1(&self, y: f64) -> f64 {
        match *self {
            UnivariateFunction::Constant => 0.0,
            UnivariateFunction::Gaussian { center, s } => -(y - center) / s * self.value(y),
            UnivariateFunction::PeriodicGaussian { center, s } => {
                let dq = 0.5 * (y - center).sin();
                -dq / (2.0 * s) * self.value(y)
            }
            UnivariateFunction::Monomial { degree: 0 } => 0.0,
            UnivariateFunction::Monomial { degree } => degree as f64 * y.powi(degree as i32 - 1),
        }
    }

    pub fn d2(&self, y: f64) -> f64 {
        match *self {
            UnivariateFunction::Constant => 0.0,
            UnivariateFunction::Gaussian { center, s } => {
                let t = y - center;
                (t * t / (s * s) - 1.0 / s) * self.value(y)
            }
            UnivariateFunction::PeriodicGaussian { center, s } => {
                let dq = 0.5 * (y - center).sin();
                let ddq = 0.5 * (y - center).cos();
                let c = dq / (2.0 * s);
                (c * c - ddq / (2.0 * s)) * self.value(y)
            }
            UnivariateFunction::Monomial { degree: 0 | 1 } => 0.0,
            UnivariateFunction::Monomial { degree } => {
                let q = degree as f64;
                q * (q - 1.0) * y.powi(degree as i32 - 2)
            }
        }
    }
}

/// The functions of one tensor mode, all depending on one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMode {
    /// Index of the (possibly reduced) coordinate this mode depends on.
    pub coordinate: usize,
    pub functions: Vec<UnivariateFunction>,
}

impl BasisMode {
    pub fn new(coordinate: usize, functions: Vec<UnivariateFunction>) -> Self {
        BasisMode { coordinate, functions }
    }
}

/// Smooth map `xi: R^d -> R^D` onto reduced coordinates.
pub trait CoordinateMap: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    /// Jacobian, shape `(D, d)`.
    fn jacobian(&self, x: &[f64]) -> Mat<f64>;
    /// Component `c` is the trace of `Hess xi_c(x) * a`.
    fn hessian_contract(&self, x: &[f64], a: MatRef<'_, f64>) -> Vec<f64>;
}

#[derive(Clone, Debug)]
pub struct IdentityMap {
    pub dim: usize,
}

impl CoordinateMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn jacobian(&self, _x: &[f64]) -> Mat<f64> {
        Mat::identity(self.dim, self.dim)
    }

    fn hessian_contract(&self, _x: &[f64], _a: MatRef<'_, f64>) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// Selection of a subset of the state coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProjectionMap {
    pub input_dim: usize,
    pub coordinates: Vec<usize>,
}

impl ProjectionMap {
    pub fn new(input_dim: usize, coordinates: Vec<usize>) -> Result<Self> {
        if coordinates.is_empty() || coordinates.len() > input_dim {
            return Err(Error::Argument(format!(
                "projection onto {} of {input_dim} coordinates",
                coordinates.len()
            )));
        }
        if let Some(&c) = coordinates.iter().find(|&&c| c >= input_dim) {
            return Err(Error::Argument(format!("coordinate {c} out of range for dimension {input_dim}")));
        }
        Ok(ProjectionMap { input_dim, coordinates })
    }
}

impl CoordinateMap for ProjectionMap {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.coordinates.len()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.coordinates.iter().map(|&c| x[c]).collect()
    }

    fn jacobian(&self, _x: &[f64]) -> Mat<f64> {
        Mat::from_fn(self.coordinates.len(), self.input_dim, |i, j| {
            if self.coordinates[i] == j {
                1.0
            } else {
                0.0
            }
        })
    }

    fn hessian_contract(&self, _x: &[f64], _a: MatRef<'_, f64>) -> Vec<f64> {
        vec![0.0; self.coordinates.len()]
    }
}

type MapFactory = Box<dyn Fn(&serde_json::Value) -> Result<Arc<dyn CoordinateMap>> + Send + Sync>;

/// Named constructors for coordinate maps; user maps are added with
/// [`MapRegistry::register`].
pub struct MapRegistry {
    factories: BTreeMap<String, MapFactory>,
}

impl Default for MapRegistry {
    fn default() -> Self {
        let mut registry = MapRegistry {
            factories: BTreeMap::new(),
        };
        registry.register("identity", |params| {
            let dim = params
                .get("dim")
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| Error::Argument("identity map needs `dim`".into()))?;
            Ok(Arc::new(IdentityMap { dim: dim as usize }))
        });
        registry.register("projection", |params| {
            let spec: ProjectionMap = serde_json::from_value(params.clone())?;
            Ok(Arc::new(ProjectionMap::new(spec.input_dim, spec.coordinates)?))
        });
        registry
    }
}

impl MapRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&serde_json::Value) -> Result<Arc<dyn CoordinateMap>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn build(&self, name: &str, params: &serde_json::Value) -> Result<Arc<dyn CoordinateMap>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Argument(format!("unknown coordinate map `{name}`")))?;
        factory(params)
    }
}

/// Tensor product of per-mode function sets.
#[derive(Clone, Debug)]
pub struct ProductBasis {
    modes: Vec<BasisMode>,
    map: Option<Arc<dyn CoordinateMap>>,
}

impl ProductBasis {
    pub fn new(modes: Vec<BasisMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Argument("a product basis needs at least one mode".into()));
        }
        for (k, mode) in modes.iter().enumerate() {
            if mode.functions.is_empty() {
                return Err(Error::Argument(format!("mode {k} has no functions")));
            }
            for f in &mode.functions {
                f.validate()?;
            }
        }
        let basis = ProductBasis { modes, map: None };
        basis.total_dimension()?;
        Ok(basis)
    }

    pub fn with_map(mut self, map: Arc<dyn CoordinateMap>) -> Result<Self> {
        if let Some(mode) = self.modes.iter().find(|m| m.coordinate >= map.output_dim()) {
            return Err(Error::Argument(format!(
                "mode coordinate {} exceeds reduced dimension {}",
                mode.coordinate,
                map.output_dim()
            )));
        }
        self.map = Some(map);
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[BasisMode] {
        &self.modes
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.functions.len()).collect()
    }

    pub fn map(&self) -> Option<&Arc<dyn CoordinateMap>> {
        self.map.as_ref()
    }

    /// Product of the mode sizes.
    pub fn total_dimension(&self) -> Result<usize> {
        self.modes
            .iter()
            .try_fold(1usize, |acc, m| acc.checked_mul(m.functions.len()))
            .ok_or_else(|| Error::Capacity {
                requested: usize::MAX,
                cap: usize::MAX,
            })
    }

    /// Smallest state dimension the modes can be evaluated on.
    pub fn required_dim(&self) -> usize {
        match &self.map {
            Some(map) => map.input_dim(),
            None => self.modes.iter().map(|m| m.coordinate + 1).max().unwrap_or(0),
        }
    }

    pub fn eval_mode(&self, k: usize, y: f64) -> Vec<f64> {
        self.modes[k].functions.iter().map(|f| f.value(y)).collect()
    }

    pub fn eval_mode_d1(&self, k: usize, y: f64) -> Vec<f64> {
        self.modes[k].functions.iter().map(|f| f.d1(y)).collect()
    }

    pub fn eval_mode_d2(&self, k: usize, y: f64) -> Vec<f64> {
        self.modes[k].functions.iter().map(|f| f.d2(y)).collect()
    }

    /// Basis coordinates of a state: `xi(x)` with a map, `x` otherwise.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        match &self.map {
            Some(map) => map.eval(x),
            None => x.to_vec(),
        }
    }

    /// Per-mode function values at a state.
    pub fn eval_values(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let y = self.coordinates(x);
        (0..self.order()).map(|k| self.eval_mode(k, y[self.modes[k].coordinate])).collect()
    }

    /// All `N` product functions at a state, last mode fastest.
    pub fn eval_full(&self, x: &[f64]) -> Vec<f64> {
        let values = self.eval_values(x);
        let mut out = vec![1.0];
        for v in &values {
            out = out.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
        }
        out
    }
}

/// Per-mode ingredients of the generator trains at one state.
#[derive(Clone, Debug)]
pub struct ModeRecord {
    /// Coordinate index in the basis coordinates.
    pub coordinate: usize,
    pub value: Vec<f64>,
    /// Derivative with respect to the basis coordinate.
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// `d psi / d x^i` for every state coordinate, shape `(n_k, d)`.
    pub state_gradient: Mat<f64>,
    /// Generator applied to each function of the mode.
    pub generator: Vec<f64>,
}

impl ModeRecord {
    /// Gradient with respect to the `dim` basis coordinates, shape `(n_k, dim)`.
    pub fn coordinate_gradient(&self, dim: usize) -> Mat<f64> {
        Mat::from_fn(self.value.len(), dim, |u, i| {
            if i == self.coordinate {
                self.d1[u]
            } else {
                0.0
            }
        })
    }
}

/// Everything the generator trains need at one state.
#[derive(Clone, Debug)]
pub struct ChainRulePack {
    pub modes: Vec<ModeRecord>,
    /// Diffusion in basis coordinates, `grad xi a grad xi^T`.
    pub reduced_diffusion: Mat<f64>,
}

fn check_symmetric(a: MatRef<'_, f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!("diffusion matrix is {}x{}", a.nrows(), a.ncols())));
    }
    for i in 0..a.nrows() {
        for j in 0..i {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            if diff > SYMMETRY_TOLERANCE {
                return Err(Error::Argument(format!(
                    "diffusion matrix not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Mode records through a coordinate map:
/// `L psi = psi' (grad xi b)_c + psi''/2 (a_xi)_cc + psi'/2 (Hess xi_c : a)`.
pub fn chain_rule_pack(
    basis: &ProductBasis,
    x: &[f64],
    map: &dyn CoordinateMap,
    a: MatRef<'_, f64>,
    drift: &[f64],
) -> Result<ChainRulePack> {
    let d = map.input_dim();
    if x.len() != d || drift.len() != d || a.nrows() != d {
        return Err(Error::Shape(format!(
            "state, drift and diffusion must have dimension {d} (got {}, {}, {})",
            x.len(),
            drift.len(),
            a.nrows()
        )));
    }
    check_symmetric(a)?;
    let y = map.eval(x);
    let jac = map.jacobian(x);
    let second = map.hessian_contract(x, a);
    let a_xi = &jac * a * jac.transpose();
    let reduced_drift: Vec<f64> = (0..jac.nrows())
        .map(|c| (0..d).map(|i| jac[(c, i)] * drift[i]).sum())
        .collect();
    let modes = basis
        .modes()
        .iter()
        .enumerate()
        .map(|(k, mode)| {
            let c = mode.coordinate;
            let value = basis.eval_mode(k, y[c]);
            let d1 = basis.eval_mode_d1(k, y[c]);
            let d2 = basis.eval_mode_d2(k, y[c]);
            let state_gradient = Mat::from_fn(value.len(), d, |u, i| d1[u] * jac[(c, i)]);
            let generator = d1
                .iter()
                .zip(&d2)
                .map(|(&g1, &g2)| g1 * reduced_drift[c] + 0.5 * g2 * a_xi[(c, c)] + 0.5 * g1 * second[c])
                .collect();
            ModeRecord {
                coordinate: c,
                value,
                d1,
                d2,
                state_gradient,
                generator,
            }
        })
        .collect();
    Ok(ChainRulePack {
        modes,
        reduced_diffusion: a_xi,
    })
}

/// Mode records when every mode depends on one state coordinate directly:
/// `L psi = b_c psi' + a_cc psi'' / 2`.
pub fn direct_pack(basis: &ProductBasis, x: &[f64], a: MatRef<'_, f64>, drift: &[f64]) -> Result<ChainRulePack> {
    let d = x.len();
    if drift.len() != d || a.nrows() != d || basis.required_dim() > d {
        return Err(Error::Shape(format!(
            "state of dimension {d} does not fit drift {}, diffusion {} or basis {}",
            drift.len(),
            a.nrows(),
            basis.required_dim()
        )));
    }
    check_symmetric(a)?;
    let modes = basis
        .modes()
        .iter()
        .enumerate()
        .map(|(k, mode)| {
            let c = mode.coordinate;
            let value = basis.eval_mode(k, x[c]);
            let d1 = basis.eval_mode_d1(k, x[c]);
            let d2 = basis.eval_mode_d2(k, x[c]);
            let state_gradient = Mat::from_fn(value.len(), d, |u, i| if i == c { d1[u] } else { 0.0 });
            let generator = d1
                .iter()
                .zip(&d2)
                .map(|(&g1, &g2)| drift[c] * g1 + 0.5 * a[(c, c)] * g2)
                .collect();
            ModeRecord {
                coordinate: c,
                value,
                d1,
                d2,
                state_gradient,
                generator,
            }
        })
        .collect();
    Ok(ChainRulePack {
        modes,
        reduced_diffusion: a.to_owned(),
    })
}

/// One entry of a mode's function list in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    Constant,
    Gaussian { center: f64, s: f64 },
    PeriodicGaussian { center: f64, s: f64 },
    Monomial { degree: u32 },
    /// `count` Gaussians centered equidistantly in `[lo, hi]`.
    GaussianGrid { count: usize, lo: f64, hi: f64, s: f64 },
    PeriodicGaussianGrid { count: usize, lo: f64, hi: f64, s: f64 },
    /// Monomials of degree `0..=max_degree`.
    Monomials { max_degree: u32 },
}

fn grid(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

impl FunctionSpec {
    fn expand(&self) -> Vec<UnivariateFunction> {
        match *self {
            FunctionSpec::Constant => vec![UnivariateFunction::Constant],
            FunctionSpec::Gaussian { center, s } => vec![UnivariateFunction::Gaussian { center, s }],
            FunctionSpec::PeriodicGaussian { center, s } => {
                vec![UnivariateFunction::PeriodicGaussian { center, s }]
            }
            FunctionSpec::Monomial { degree } => vec![UnivariateFunction::Monomial { degree }],
            FunctionSpec::GaussianGrid { count, lo, hi, s } => grid(count, lo, hi)
                .into_iter()
                .map(|center| UnivariateFunction::Gaussian { center, s })
                .collect(),
            FunctionSpec::PeriodicGaussianGrid { count, lo, hi, s } => grid(count, lo, hi)
                .into_iter()
                .map(|center| UnivariateFunction::PeriodicGaussian { center, s })
                .collect(),
            FunctionSpec::Monomials { max_degree } => (0..=max_degree)
                .map(|degree| UnivariateFunction::Monomial { degree })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    /// Defaults to the mode's position.
    #[serde(default)]
    pub coordinate: Option<usize>,
    pub functions: Vec<FunctionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Serializable description of a product basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub coordinate_map: Option<MapConfig>,
}

impl BasisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self, registry: &MapRegistry) -> Result<ProductBasis> {
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                BasisMode::new(
                    m.coordinate.unwrap_or(k),
                    m.functions.iter().flat_map(FunctionSpec::expand).collect(),
                )
            })
            .collect();
        let basis = ProductBasis::new(modes)?;
        match &self.coordinate_map {
            Some(cfg) => basis.with_map(registry.build(&cfg.name, &cfg.params)?),
            None => Ok(basis),
        }
    }
}

/// Gaussians centered equidistantly in `[lo, hi]` with squared bandwidth `s`.
pub fn gaussian_grid(count: usize, lo: f64, hi: f64, s: f64) -> Vec<UnivariateFunction> {
    FunctionSpec::GaussianGrid { count, lo, hi, s }.expand()
}

/// Monomials of degree `0..=max_degree`.
pub fn monomials(max_degree: u32) -> Vec<UnivariateFunction> {
    FunctionSpec::Monomials { max_degree }.expand()
}
