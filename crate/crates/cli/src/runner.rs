//! Replication orchestration. Every replication derives its seed from the
//! base seed and its index alone, and results are collected in replication
//! order, so output files don't depend on scheduling or `jobs`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use causal_bart::bcf::bcf_fit;
use causal_bart::data::{load_ihdp_realizations, IhdpRealization};
use causal_bart::data::{IHDP_COVARIATES, IHDP_TREATED, IHDP_UNITS};
use causal_bart::dgp::{gen_ihdp_surrogate, gen_synthetic, ihdp_like_design, IhdpSurrogateConfig, SyntheticScenario};
use causal_bart::eval::{
    aggregate, percentile_report, read_metrics_csv, score_replication, write_metrics_csv, AggregateTable, MetricsRow,
    PercentileTable, Summary,
};
use causal_bart::kfold::{kfold_causal_bart, AblationConfig};
use causal_bart::learners::{bart_f0_f1, dr_learner, ps_bart, s_learner, x_learner};
use causal_bart::rng::{derive_indexed, derive_seed};
use causal_bart::{Dataset, EffectReport, GroundTruth};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EstimatorKind, ExperimentConfig, Source};
use crate::error::{CliError, Result};

pub fn replication_seed(base_seed: u64, replication: usize) -> u64 {
    derive_indexed(base_seed, "replication", replication as u64)
}

/// One estimator run per replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Job {
    Estimator(EstimatorKind),
    /// K-fold causal BART with some components removed.
    Kfcb(AblationConfig),
}

impl Job {
    pub fn name(&self) -> String {
        match self {
            Job::Estimator(k) => k.name().into(),
            Job::Kfcb(a) => a.estimator_name(),
        }
    }

    /// Ablation variants share the full model's stream, so their differences
    /// isolate the removed component.
    fn seed(&self, replication_seed: u64) -> u64 {
        let tag = match self {
            Job::Estimator(k) => k.name(),
            Job::Kfcb(_) => EstimatorKind::KfoldCausalBart.name(),
        };
        derive_seed(replication_seed, tag)
    }

    fn run(&self, config: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<EffectReport> {
        let report = match *self {
            Job::Kfcb(ablation) => kfold_causal_bart(ds, &config.kfcb_config()?, ablation, seed)?,
            Job::Estimator(EstimatorKind::KfoldCausalBart) => {
                kfold_causal_bart(ds, &config.kfcb_config()?, config.ablation, seed)?
            }
            Job::Estimator(EstimatorKind::Bcf) => bcf_fit(ds, &config.bcf_config()?, seed)?,
            Job::Estimator(kind) => {
                let cfg = config.estimator_config(kind)?;
                let f = match kind {
                    EstimatorKind::SLearner => s_learner,
                    EstimatorKind::BartF0F1 => bart_f0_f1,
                    EstimatorKind::PsBart => ps_bart,
                    EstimatorKind::DrLearner => dr_learner,
                    EstimatorKind::XLearner => x_learner,
                    EstimatorKind::Bcf | EstimatorKind::KfoldCausalBart => unreachable!(),
                };
                f(ds, &cfg, seed)?
            }
        };
        Ok(report)
    }
}

/// Generates (or loads) replication `r`.
pub struct DataSource {
    source: Source,
    n: usize,
    noise_sd: f64,
    base_seed: u64,
    realizations: Vec<IhdpRealization<f64>>,
    /// Fixed covariates and treatment of the surrogate design.
    design: Option<(ndarray::Array2<f64>, Vec<bool>)>,
}

impl DataSource {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let mut ds = DataSource {
            source: config.source.clone(),
            n: config.n,
            noise_sd: config.noise_sd,
            base_seed: config.base_seed,
            realizations: Vec::new(),
            design: None,
        };
        match &config.source {
            Source::Ihdp { path: Some(p) } => {
                ds.realizations = load_ihdp_realizations(p, IHDP_COVARIATES)?;
                if ds.realizations.len() < config.replications {
                    return Err(CliError::Usage(format!(
                        "{} holds {} realizations, {} requested",
                        p.display(),
                        ds.realizations.len(),
                        config.replications
                    )));
                }
            }
            Source::Ihdp { path: None } => {
                ds.design = Some(ihdp_like_design(
                    IHDP_UNITS,
                    IHDP_COVARIATES,
                    IHDP_TREATED,
                    derive_seed(config.base_seed, "design"),
                )?);
            }
            Source::Synthetic { .. } => {}
        }
        Ok(ds)
    }

    pub fn replication(&self, r: usize) -> Result<(Dataset, GroundTruth)> {
        let seed = replication_seed(self.base_seed, r);
        match &self.source {
            Source::Synthetic { response, effect } => {
                let mut s = SyntheticScenario::new(*response, *effect, self.n);
                s.noise_sd = self.noise_sd;
                Ok(gen_synthetic(&s, seed)?)
            }
            Source::Ihdp { path: Some(_) } => {
                let real = &self.realizations[r];
                Ok((real.dataset.clone(), real.truth.clone()))
            }
            Source::Ihdp { path: None } => {
                let (x, z) = self.design.as_ref().expect("surrogate design is built up front");
                let draw = gen_ihdp_surrogate(x, z, &IhdpSurrogateConfig::default(), seed)?;
                Ok((Dataset::new(x.clone(), z.to_vec(), draw.y)?, draw.truth))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub scenario: String,
    pub estimators: Vec<String>,
    pub replication_seeds: Vec<u64>,
    pub failures: usize,
    /// Summed estimator time, per estimator.
    pub runtime_secs: BTreeMap<String, f64>,
    pub wall_secs: f64,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub rows: Vec<MetricsRow>,
    pub aggregate: AggregateTable,
    pub percentiles: Option<PercentileTable>,
    pub manifest: Manifest,
}

impl Outcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    /// Errors with a summary when any estimator run failed.
    pub fn check(&self) -> Result<()> {
        match self.failures() {
            0 => Ok(()),
            failed => Err(CliError::Failures { failed, total: self.rows.len() }),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?), &self.rows)?;
        write_tables(dir, &self.aggregate, self.percentiles.as_ref())?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }
}

fn write_tables(dir: &Path, table: &AggregateTable, percentiles: Option<&PercentileTable>) -> Result<()> {
    table.write_csv(BufWriter::new(File::create(dir.join("aggregate.csv"))?))?;
    if let Some(p) = percentiles {
        p.write_csv(BufWriter::new(File::create(dir.join("percentiles.csv"))?))?;
    }
    let summary = Summary { aggregate: table.clone(), percentiles: percentiles.cloned() };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn tables(rows: &[MetricsRow], buckets: usize) -> (AggregateTable, Option<PercentileTable>) {
    let table = aggregate(rows);
    let percentiles = match percentile_report(rows, buckets) {
        Ok(p) => Some(p),
        Err(e) => {
            log::info!("no percentile table: {e}");
            None
        }
    };
    (table, percentiles)
}

struct RepResult {
    rows: Vec<MetricsRow>,
    runtimes: Vec<(String, f64)>,
}

fn run_replication(config: &ExperimentConfig, data: &DataSource, jobs: &[Job], r: usize) -> RepResult {
    let scenario = config.scenario_id();
    let seed = replication_seed(config.base_seed, r);
    let (ds, truth) = match data.replication(r) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("replication {r}: data generation failed: {e}");
            let rows =
                jobs.iter().map(|j| MetricsRow::failure(&j.name(), &scenario, r, f64::NAN, &e.to_string())).collect();
            return RepResult { rows, runtimes: Vec::new() };
        }
    };
    let relative_sd = truth.relative_sd();
    let mut out = RepResult { rows: Vec::with_capacity(jobs.len()), runtimes: Vec::with_capacity(jobs.len()) };
    for job in jobs {
        let name = job.name();
        let start = Instant::now();
        let row = job
            .run(config, &ds, job.seed(seed))
            .and_then(|report| Ok(score_replication(&report, &truth, &scenario, r)?))
            .unwrap_or_else(|e| {
                log::warn!("replication {r}, {name}: {e}");
                MetricsRow::failure(&name, &scenario, r, relative_sd, &e.to_string())
            });
        let secs = start.elapsed().as_secs_f64();
        log::info!("replication {r}, {name}: {:.1}s, status {}", secs, row.status);
        out.runtimes.push((name, secs));
        out.rows.push(row);
    }
    out
}

/// Runs every job on every replication.
pub fn execute(config: &ExperimentConfig, jobs: &[Job], command: &str) -> Result<Outcome> {
    config.validate()?;
    let start = Instant::now();
    let data = DataSource::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<RepResult> = pool.install(|| {
        (0..config.replications).into_par_iter().map(|r| run_replication(config, &data, jobs, r)).collect()
    });
    let mut runtime_secs = BTreeMap::new();
    let mut rows = Vec::with_capacity(config.replications * jobs.len());
    for res in results {
        for (name, secs) in res.runtimes {
            *runtime_secs.entry(name).or_insert(0.0) += secs;
        }
        rows.extend(res.rows);
    }
    let (aggregate, percentiles) = tables(&rows, config.percentile_buckets);
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(config),
        config: config.clone(),
        scenario: config.scenario_id(),
        estimators: jobs.iter().map(Job::name).collect(),
        replication_seeds: (0..config.replications).map(|r| replication_seed(config.base_seed, r)).collect(),
        failures: rows.iter().filter(|r| !r.is_ok()).count(),
        runtime_secs,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    let outcome = Outcome { rows, aggregate, percentiles, manifest };
    if let Some(dir) = &config.out_dir {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

/// The configured estimators; K-fold causal BART honours the ablation flags.
pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    let jobs: Vec<Job> = config
        .estimators
        .iter()
        .map(|&k| match k {
            EstimatorKind::KfoldCausalBart => Job::Kfcb(config.ablation),
            other => Job::Estimator(other),
        })
        .collect();
    execute(config, &jobs, "run")
}

/// The full model and its four sub-models under shared seeds.
pub fn ablate(config: &ExperimentConfig) -> Result<Outcome> {
    let jobs: Vec<Job> = AblationConfig::sub_models().into_iter().map(Job::Kfcb).collect();
    let config = ExperimentConfig { estimators: vec![EstimatorKind::KfoldCausalBart], ..config.clone() };
    execute(&config, &jobs, "ablate")
}

/// Re-aggregates an existing `metrics.csv` (or the one inside a directory).
pub fn report(
    input: &Path,
    out_dir: Option<&Path>,
    buckets: usize,
) -> Result<(AggregateTable, Option<PercentileTable>)> {
    let path: PathBuf = if input.is_dir() { input.join("metrics.csv") } else { input.to_path_buf() };
    let rows = read_metrics_csv(File::open(&path)?)?;
    let (table, percentiles) = tables(&rows, buckets);
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
    std::fs::create_dir_all(&dir)?;
    write_tables(&dir, &table, percentiles.as_ref())?;
    Ok((table, percentiles))
}
