//! Experiment configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use faer::Mat;
use serde::{Deserialize, Serialize};
use tgedmd::amuse::EstimatorMode;
use tgedmd::basis::{BasisConfig, MapRegistry, ProductBasis};
use tgedmd::presets::LEMON_SLICE_START;
use tgedmd::sde::{lemon_slice_gmm, ou_model, EulerMaruyama, GmmSampler, LemonSlice, SdeModel};
use tgedmd::tgedmd::{Threshold, TruncationPolicy};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; `--out` overrides it.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub sampling: Option<SamplingConfig>,
    pub estimator: EstimatorConfig,
    pub basis: BasisConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Four-well potential in the first two coordinates plus
    /// `harmonic_dims` stiff harmonic directions.
    LemonSlice {
        #[serde(default = "default_harmonic_dims")]
        harmonic_dims: usize,
    },
    Ou { stiffness: Vec<f64> },
}

fn default_harmonic_dims() -> usize {
    2
}

impl ModelConfig {
    pub fn build(&self) -> CliResult<Box<dyn SdeModel>> {
        Ok(match self {
            ModelConfig::LemonSlice { harmonic_dims } => Box::new(LemonSlice::new(*harmonic_dims)),
            ModelConfig::Ou { stiffness } => Box::new(
                ou_model(stiffness.len(), stiffness.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            ),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: u64,
    pub save_every: u64,
    #[serde(default)]
    pub burn_in: u64,
    /// Defaults to `(1, 0, ..., 0)`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl SimulationConfig {
    pub fn integrator(&self) -> EulerMaruyama {
        EulerMaruyama {
            dt: self.dt,
            n_steps: self.n_steps,
            save_every: self.save_every,
            burn_in: self.burn_in,
        }
    }

    pub fn start(&self, dim: usize) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| {
            let mut x = vec![0.0; dim];
            let n = dim.min(LEMON_SLICE_START.len());
            x[..n].copy_from_slice(&LEMON_SLICE_START[..n]);
            x
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixtureConfig {
    LemonSlice,
    Custom { components: Vec<ComponentConfig> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub mixture: MixtureConfig,
    pub samples: usize,
    pub seeds: Vec<u64>,
}

impl SamplingConfig {
    pub fn sampler(&self) -> CliResult<GmmSampler> {
        match &self.mixture {
            MixtureConfig::LemonSlice => Ok(lemon_slice_gmm()),
            MixtureConfig::Custom { components } => {
                let parts = components
                    .iter()
                    .map(|c| {
                        let n = c.mean.len();
                        if c.covariance.len() != n || c.covariance.iter().any(|row| row.len() != n) {
                            return Err(CliError::Config(format!("covariance must be {n} x {n}")));
                        }
                        let cov = faer_square(&c.covariance);
                        Ok((c.weight, c.mean.clone(), cov))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                GmmSampler::new(parts).map_err(|e| CliError::Config(e.to_string()))
            }
        }
    }
}

fn faer_square(rows: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
}

/// Which sample sets `run`, `gedmd` and `cluster` read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Trajectories,
    Gmm,
}

impl DataSource {
    pub fn dir(self) -> &'static str {
        match self {
            DataSource::Trajectories => "trajectories",
            DataSource::Gmm => "gmm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    Absolute,
    Relative,
    KeepAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub data: DataSource,
    pub mode: EstimatorMode,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdKind,
    /// Swept truncation thresholds; a single `0` entry for `keep_all`.
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub rank_cap: Option<usize>,
    /// Leading-sample counts to sweep; all samples when absent.
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    /// Importance weights from the sampling mixture; only for `gmm` data.
    #[serde(default)]
    pub importance_weights: bool,
    #[serde(default = "default_n_ev")]
    pub n_ev: usize,
    #[serde(default = "default_n_ev")]
    pub n_clusters: usize,
    /// Threshold used by `cluster`; the largest swept one when absent.
    #[serde(default)]
    pub cluster_epsilon: Option<f64>,
    /// Binary dumps of `M`, `U`, `Sigma` and `V` per sweep point.
    #[serde(default)]
    pub dump_matrices: bool,
}

fn default_threshold() -> ThresholdKind {
    ThresholdKind::Absolute
}

fn default_n_ev() -> usize {
    4
}

impl EstimatorConfig {
    pub fn policy(&self, epsilon: f64) -> TruncationPolicy {
        let threshold = match self.threshold {
            ThresholdKind::Absolute => Threshold::Absolute { epsilon },
            ThresholdKind::Relative => Threshold::Relative { epsilon },
            ThresholdKind::KeepAll => Threshold::KeepAll,
        };
        TruncationPolicy {
            threshold,
            rank_cap: self.rank_cap,
        }
    }

    pub fn cluster_epsilon(&self) -> f64 {
        self.cluster_epsilon
            .unwrap_or_else(|| self.epsilons.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = match path.extension().and_then(|s| s.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let est = &self.estimator;
        if est.epsilons.is_empty() {
            return bad("estimator.epsilons is empty".into());
        }
        if est.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("estimator.epsilons must be finite and non-negative".into());
        }
        if est.sizes.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
            return bad("estimator.sizes must be a nonempty list of positive counts".into());
        }
        if est.n_ev == 0 || est.n_clusters == 0 {
            return bad("estimator.n_ev and estimator.n_clusters must be positive".into());
        }
        if est.n_clusters > est.n_ev {
            return bad("estimator.n_clusters cannot exceed estimator.n_ev".into());
        }
        if est.importance_weights && est.data != DataSource::Gmm {
            return bad("importance weights need gmm data".into());
        }
        if let Some(sim) = &self.simulation {
            if sim.seeds.is_empty() {
                return bad("simulation.seeds is empty".into());
            }
        }
        if let Some(sampling) = &self.sampling {
            if sampling.seeds.is_empty() || sampling.samples == 0 {
                return bad("sampling needs seeds and a positive sample count".into());
            }
        }
        let dim = self.model.build()?.dim();
        if let Some(x0) = self.simulation.as_ref().and_then(|s| s.x0.as_ref()) {
            if x0.len() != dim {
                return bad(format!("simulation.x0 has length {} for a {dim}-dimensional model", x0.len()));
            }
        }
        let basis = self.basis()?;
        if basis.required_dim() > dim {
            return bad(format!("basis reads coordinate {} of a {dim}-dimensional model", basis.required_dim() - 1));
        }
        Ok(())
    }

    pub fn basis(&self) -> CliResult<ProductBasis> {
        self.basis
            .build(&MapRegistry::default())
            .map_err(|e| CliError::Config(format!("basis: {e}")))
    }

    /// Seeds of the data sets the estimator reads.
    pub fn data_seeds(&self) -> CliResult<&[u64]> {
        match self.estimator.data {
            DataSource::Trajectories => self
                .simulation
                .as_ref()
                .map(|s| s.seeds.as_slice())
                .ok_or_else(|| CliError::Config("trajectory data needs a [simulation] section".into())),
            DataSource::Gmm => self
                .sampling
                .as_ref()
                .map(|s| s.seeds.as_slice())
                .ok_or_else(|| CliError::Config("gmm data needs a [sampling] section".into())),
        }
    }

    /// Replaces every seed list by `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(sim) = &mut self.simulation {
            sim.seeds = vec![seed];
        }
        if let Some(sampling) = &mut self.sampling {
            sampling.seeds = vec![seed];
        }
    }
}
