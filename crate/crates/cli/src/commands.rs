use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;
use tgedmd::amuse::{amuse, dense_cost_estimate, dense_generator_data, DenseTruncation, EstimatorMode};
use tgedmd::basis::ProductBasis;
use tgedmd::generator_data::basis_coordinate_dim;
use tgedmd::io::{read_trajectory, write_matrix, write_train, write_trajectory};
use tgedmd::linalg::{c64, general_eigen, symmetric_eigen};
use tgedmd::sde::{importance_weights, SdeModel, Trajectory};
use tgedmd::spectral::{
    cluster, implied_timescale, spectrum, write_clusters_csv, write_eigenfunctions_csv, write_eigenvalues_csv,
};
use tgedmd::tgedmd::{tgedmd_run, tt_cost_estimate, GlobalSvdResult, TgedmdRun};

use crate::config::{DataSource, ExperimentConfig, ThresholdKind};
use crate::error::{CliError, CliResult};
use crate::report::{
    summarize, timescale_entry, write_comparison_csv, write_timescales_csv, Eigenvalue, OpCounters, PointReport,
    PointTiming, RunReport, SingularValueTail, SCHEMA_VERSION,
};

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub pool: rayon::ThreadPool,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> CliResult<()>) -> CliResult<()> {
    let mut out = create(path)?;
    body(&mut out).map_err(|e| e.context(&path.display().to_string()))?;
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_with(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        out.write_all(b"\n")?;
        Ok(())
    })
}

fn data_file(out: &Path, source: DataSource, seed: u64) -> PathBuf {
    out.join(source.dir()).join(format!("seed_{seed}.bin"))
}

/// Integrates the model once per simulation seed.
pub fn simulate(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let sim = ctx
        .config
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate needs a [simulation] section".into()))?;
    let model = ctx.config.model.build()?;
    let x0 = sim.start(model.dim());
    let integrator = sim.integrator();
    ctx.pool.install(|| {
        sim.seeds
            .par_iter()
            .map(|&seed| {
                let traj = integrator
                    .run(model.as_ref(), &x0, seed)
                    .map_err(|e| CliError::from(e).context(&format!("seed {seed}")))?;
                let path = data_file(&ctx.out, DataSource::Trajectories, seed);
                write_with(&path, |out| Ok(write_trajectory(out, &traj)?))?;
                Ok(path)
            })
            .collect()
    })
}

/// Draws one sample set from the mixture per sampling seed.
pub fn sample_gmm(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let sampling = ctx
        .config
        .sampling
        .as_ref()
        .ok_or_else(|| CliError::Config("sample-gmm needs a [sampling] section".into()))?;
    let sampler = sampling.sampler()?;
    let dim = ctx.config.model.build()?.dim();
    if sampler.dim() != dim {
        return Err(CliError::Config(format!(
            "mixture of dimension {} for a {dim}-dimensional model",
            sampler.dim()
        )));
    }
    ctx.pool.install(|| {
        sampling
            .seeds
            .par_iter()
            .map(|&seed| {
                let samples = sampler.sample(sampling.samples, seed)?;
                let path = data_file(&ctx.out, DataSource::Gmm, seed);
                write_with(&path, |out| Ok(write_trajectory(out, &samples)?))?;
                Ok(path)
            })
            .collect()
    })
}

struct DataSet {
    seed: u64,
    samples: Trajectory,
}

fn load_data(ctx: &Context) -> CliResult<Vec<DataSet>> {
    let source = ctx.config.estimator.data;
    ctx.config
        .data_seeds()?
        .iter()
        .map(|&seed| {
            let path = data_file(&ctx.out, source, seed);
            if !path.exists() {
                let producer = match source {
                    DataSource::Trajectories => "simulate",
                    DataSource::Gmm => "sample-gmm",
                };
                return Err(CliError::Config(format!(
                    "missing input {}; run `{producer}` first",
                    path.display()
                )));
            }
            let file = File::open(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let samples = read_trajectory(&mut BufReader::new(file))
                .map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
            Ok(DataSet { seed, samples })
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Job<'a> {
    epsilon: f64,
    samples: usize,
    data: &'a DataSet,
}

impl Job<'_> {
    fn label(&self) -> String {
        format!("eps {:e}, m {}, seed {}", self.epsilon, self.samples, self.data.seed)
    }

    fn dir(&self, root: &Path) -> PathBuf {
        root.join("points")
            .join(format!("eps_{:e}_m{}_seed{}", self.epsilon, self.samples, self.data.seed))
    }
}

fn jobs<'a>(ctx: &Context, data: &'a [DataSet]) -> CliResult<Vec<Job<'a>>> {
    let est = &ctx.config.estimator;
    let mut out = Vec::new();
    for &epsilon in &est.epsilons {
        for d in data {
            let sizes = est.sizes.clone().unwrap_or_else(|| vec![d.samples.len()]);
            for samples in sizes {
                if samples > d.samples.len() {
                    return Err(CliError::Config(format!(
                        "size {samples} exceeds the {} samples of seed {}",
                        d.samples.len(),
                        d.seed
                    )));
                }
                out.push(Job { epsilon, samples, data: d });
            }
        }
    }
    // Sweep order: epsilon, then size, then seed.
    out.sort_by(|a, b| {
        let key = |j: &Job| (est.epsilons.iter().position(|&e| e == j.epsilon), j.samples);
        key(a).cmp(&key(b))
    });
    Ok(out)
}

struct Inputs {
    model: Box<dyn SdeModel>,
    basis: ProductBasis,
}

impl Inputs {
    fn new(config: &ExperimentConfig) -> CliResult<Self> {
        Ok(Inputs {
            model: config.model.build()?,
            basis: config.basis()?,
        })
    }

    fn samples_and_weights(&self, ctx: &Context, job: &Job) -> CliResult<(Trajectory, Option<Vec<f64>>)> {
        let samples = job.data.samples.slice(0..job.samples)?;
        let weights = if ctx.config.estimator.importance_weights {
            let sampler = ctx
                .config
                .sampling
                .as_ref()
                .ok_or_else(|| CliError::Config("importance weights need a [sampling] section".into()))?
                .sampler()?;
            Some(importance_weights(self.model.as_ref(), &sampler, &samples)?)
        } else {
            None
        };
        Ok((samples, weights))
    }
}

fn tails(svd: &GlobalSvdResult) -> Vec<SingularValueTail> {
    svd.spectra
        .iter()
        .zip(&svd.ranks)
        .map(|(s, &r)| SingularValueTail {
            kept_min: s[r - 1],
            dropped_max: s.get(r).copied(),
        })
        .collect()
}

fn eigen_entries(values: &[c64]) -> (Vec<Eigenvalue>, Vec<Option<f64>>) {
    values
        .iter()
        .map(|&k| (Eigenvalue { re: k.re, im: k.im }, timescale_entry(implied_timescale(k))))
        .unzip()
}

fn dump_run(dir: &Path, run: &TgedmdRun) -> CliResult<()> {
    let svd = &run.reduced.svd;
    write_with(&dir.join("M.bin"), |out| Ok(write_matrix(out, &run.reduced.m)?))?;
    write_with(&dir.join("U.tt"), |out| Ok(write_train(out, &svd.u)?))?;
    let sigma = Mat::from_fn(1, svd.sigma.len(), |_, j| svd.sigma[j]);
    write_with(&dir.join("sigma.bin"), |out| Ok(write_matrix(out, &sigma)?))?;
    write_with(&dir.join("V.bin"), |out| Ok(write_matrix(out, &svd.v)?))
}

fn tt_point(ctx: &Context, inputs: &Inputs, job: &Job, root: &Path) -> CliResult<(PointReport, PointTiming)> {
    let start = Instant::now();
    let est = &ctx.config.estimator;
    let (samples, weights) = inputs.samples_and_weights(ctx, job)?;
    let run = tgedmd_run(
        &samples,
        &inputs.basis,
        inputs.model.as_ref(),
        est.mode,
        &est.policy(job.epsilon),
        weights.as_deref(),
    )?;
    let spec = spectrum(&run.reduced, est.n_ev).map_err(|e| match e {
        tgedmd::Error::Argument(m) => CliError::Numeric(format!("rank-deficient model: {m}")),
        e => e.into(),
    })?;
    let dir = job.dir(root);
    write_with(&dir.join("eigenvalues.csv"), |out| Ok(write_eigenvalues_csv(out, &spec)?))?;
    write_with(&dir.join("eigenfunctions.csv"), |out| Ok(write_eigenfunctions_csv(out, &spec)?))?;
    if est.dump_matrices {
        dump_run(&dir, &run)?;
    }
    let mut achieved_ranks = vec![1];
    achieved_ranks.extend(&run.ranks);
    let (eigenvalues, timescales) = eigen_entries(&spec.eigenvalues);
    let report = PointReport {
        epsilon: job.epsilon,
        samples: job.samples,
        seed: job.data.seed,
        achieved_ranks,
        singular_value_tails: tails(&run.reduced.svd),
        eigenvalues,
        timescales,
        op_counters: Some(OpCounters {
            reduced_multiplies: run.reduced.multiplies,
        }),
    };
    Ok((report, timing(job, start)))
}

fn timing(job: &Job, start: Instant) -> PointTiming {
    PointTiming {
        epsilon: job.epsilon,
        samples: job.samples,
        seed: job.data.seed,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn dense_point(ctx: &Context, inputs: &Inputs, job: &Job, root: &Path) -> CliResult<(PointReport, PointTiming)> {
    let start = Instant::now();
    let est = &ctx.config.estimator;
    let (samples, weights) = inputs.samples_and_weights(ctx, job)?;
    let data = dense_generator_data(&inputs.basis, &samples, inputs.model.as_ref())?;
    let truncation = match est.threshold {
        ThresholdKind::Absolute => DenseTruncation::Threshold(job.epsilon),
        ThresholdKind::Relative => DenseTruncation::Relative(job.epsilon),
        ThresholdKind::KeepAll => DenseTruncation::NumericalRank,
    };
    let dense = amuse(&data, est.mode, truncation, weights.as_deref())?;
    let r = dense.m.nrows();
    if est.n_ev > r {
        return Err(CliError::Numeric(format!(
            "rank-deficient model: requested {} eigenpairs of a rank-{r} model",
            est.n_ev
        )));
    }
    let values: Vec<c64> = match est.mode {
        EstimatorMode::Reversible => symmetric_eigen(dense.m.as_ref())?
            .0
            .into_iter()
            .map(|v| c64::new(v, 0.0))
            .collect(),
        EstimatorMode::NonReversible => general_eigen(dense.m.as_ref())?.0,
    };
    let values = &values[..est.n_ev];
    let dir = job.dir(root);
    write_with(&dir.join("eigenvalues.csv"), |out| {
        writeln!(out, "k,re,im,timescale")?;
        for (k, v) in values.iter().enumerate() {
            writeln!(out, "{k},{:e},{:e},{:e}", v.re, v.im, implied_timescale(*v))?;
        }
        Ok(())
    })?;
    if est.dump_matrices {
        write_with(&dir.join("M.bin"), |out| Ok(write_matrix(out, &dense.m)?))?;
    }
    let (eigenvalues, timescales) = eigen_entries(values);
    let report = PointReport {
        epsilon: job.epsilon,
        samples: job.samples,
        seed: job.data.seed,
        achieved_ranks: vec![r],
        singular_value_tails: Vec::new(),
        eigenvalues,
        timescales,
        op_counters: None,
    };
    Ok((report, timing(job, start)))
}

type PointFn = fn(&Context, &Inputs, &Job, &Path) -> CliResult<(PointReport, PointTiming)>;

fn sweep(ctx: &Context, estimator: &str, point: PointFn) -> CliResult<RunReport> {
    let data = load_data(ctx)?;
    let inputs = Inputs::new(&ctx.config)?;
    let root = ctx.out.join(if estimator == "tgedmd" { "run" } else { "gedmd" });
    let jobs = jobs(ctx, &data)?;
    let results: Vec<(PointReport, PointTiming)> = ctx.pool.install(|| {
        jobs.par_iter()
            .map(|job| point(ctx, &inputs, job, &root).map_err(|e| e.context(&job.label())))
            .collect::<CliResult<_>>()
    })?;
    let (points, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        estimator: estimator.into(),
        model: inputs.model.name().into(),
        mode: ctx.config.estimator.mode,
        data: ctx.config.estimator.data,
        mode_sizes: inputs.basis.mode_sizes(),
        coordinate_dim: basis_coordinate_dim(&inputs.basis, inputs.model.dim()),
        summary: summarize(&points),
        points,
    };
    write_json(&root.join("report.json"), &report)?;
    write_json(&root.join("timing.json"), &timings)?;
    write_with(&root.join("timescales.csv"), |out| write_timescales_csv(out, &report.summary))?;
    Ok(report)
}

/// tgEDMD over every sweep point.
pub fn run(ctx: &Context) -> CliResult<RunReport> {
    sweep(ctx, "tgedmd", tt_point)
}

/// Dense AMUSE over the same sweep, compared with a prior `run` when one
/// exists.
pub fn gedmd(ctx: &Context) -> CliResult<RunReport> {
    let report = sweep(ctx, "gedmd", dense_point)?;
    let prior = ctx.out.join("run").join("report.json");
    if prior.exists() {
        let tt = read_report(&prior)?;
        write_with(&ctx.out.join("gedmd").join("comparison.csv"), |out| {
            write_comparison_csv(out, &tt, &report)
        })?;
    }
    Ok(report)
}

fn read_report(path: &Path) -> CliResult<RunReport> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let report: RunReport = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(CliError::Io(format!(
            "{}: schema version {} is not {SCHEMA_VERSION}",
            path.display(),
            report.schema_version
        )));
    }
    Ok(report)
}

/// Both cost models on the ranks achieved by a prior `run`.
pub fn cost(ctx: &Context) -> CliResult<PathBuf> {
    let prior = ctx.out.join("run").join("report.json");
    if !prior.exists() {
        return Err(CliError::Config(format!("no prior run at {}; run `run` first", prior.display())));
    }
    let report = read_report(&prior)?;
    let n_total: f64 = report.mode_sizes.iter().map(|&n| n as f64).product();
    let path = ctx.out.join("cost").join("cost.csv");
    write_with(&path, |out| {
        writeln!(
            out,
            "epsilon,samples,seed,max_rank,tt_svd,tt_contraction,tt_eigen,tt_total,\
             dense_gram,dense_projection,dense_eigen,dense_total,ratio"
        )?;
        for p in &report.points {
            let tt = tt_cost_estimate(&report.mode_sizes, &p.achieved_ranks, p.samples, report.coordinate_dim)?;
            let dense = dense_cost_estimate(n_total, p.samples as f64, p.last_rank() as f64);
            let tt_total = tt.0 + tt.1 + tt.2;
            let dense_total = dense.0 + dense.1 + dense.2;
            writeln!(
                out,
                "{:e},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                p.epsilon,
                p.samples,
                p.seed,
                p.max_rank(),
                tt.0,
                tt.1,
                tt.2,
                tt_total,
                dense.0,
                dense.1,
                dense.2,
                dense_total,
                tt_total / dense_total
            )?;
        }
        Ok(())
    })?;
    Ok(path)
}

/// Metastable clustering of every data set at the clustering threshold.
pub fn cluster_sets(ctx: &Context) -> CliResult<Vec<PathBuf>> {
    let data = load_data(ctx)?;
    let inputs = Inputs::new(&ctx.config)?;
    let est = &ctx.config.estimator;
    let epsilon = est.cluster_epsilon();
    ctx.pool.install(|| {
        data.par_iter()
            .map(|d| {
                let job = Job {
                    epsilon,
                    samples: d.samples.len(),
                    data: d,
                };
                let go = || -> CliResult<PathBuf> {
                    let (samples, weights) = inputs.samples_and_weights(ctx, &job)?;
                    let run = tgedmd_run(
                        &samples,
                        &inputs.basis,
                        inputs.model.as_ref(),
                        est.mode,
                        &est.policy(epsilon),
                        weights.as_deref(),
                    )?;
                    let spec = spectrum(&run.reduced, est.n_ev)?;
                    let assignment = cluster(&spec, est.n_clusters, d.seed)?;
                    let dir = ctx.out.join("cluster").join(format!("seed_{}", d.seed));
                    write_with(&dir.join("clusters.csv"), |out| Ok(write_clusters_csv(out, &assignment)?))?;
                    write_with(&dir.join("eigenfunctions.csv"), |out| Ok(write_eigenfunctions_csv(out, &spec)?))?;
                    write_with(&dir.join("eigenvalues.csv"), |out| Ok(write_eigenvalues_csv(out, &spec)?))?;
                    Ok(dir)
                };
                go().map_err(|e| e.context(&job.label()))
            })
            .collect()
    })
}
