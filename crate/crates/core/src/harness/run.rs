use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentSpec, TestKind, UniverseSpec};
use crate::error::{Error, Result};
use crate::estimation::{ate_hat, ate_interval, ege_hat, paired_ites, ATEReport, EffectSample};
use crate::execution::{
    builtin_registry, execute_many, generate_synthetic_corpus, DataPool, ExecutorRegistry, RunRecord,
    SyntheticSurfaceParams,
};
use crate::fmt17;
use crate::inference::{independent_system_test, paired_system_test, shifted_bootstrap_test, TestConfig, TestResult};
use crate::oracle::{exhaustive_records, OracleContext, SplitUniverse};
use crate::population::{Arm, DataSource};
use crate::sampling::{assign_arms, sample_systems, sample_systems_from_universe, Design};
use crate::seed::derive_seed;
use crate::seed_path;

/// Environment variable overriding the worker count of a run.
pub const THREADS_ENV: &str = "ATE_HARNESS_THREADS";

/// Everything a run produces; [`super::emit_report`] writes it out.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub report: ATEReport,
    pub records: Vec<RunRecord>,
    /// Column names for the method variables, contrast first.
    pub variables: Vec<String>,
    pub config_echo: String,
}

/// Hex SHA-256 of the experiment file bytes.
pub fn spec_digest(source: &str) -> String {
    Sha256::digest(source.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Materializes the data pool of the experiment.
pub fn build_pool(spec: &ExperimentSpec) -> Result<DataPool> {
    match &spec.population.data_source {
        DataSource::Corpus(params) => generate_synthetic_corpus(params),
        DataSource::Indexed { pool_size } => Ok(DataPool::index_only(*pool_size)),
    }
}

pub fn build_registry(spec: &ExperimentSpec) -> ExecutorRegistry {
    builtin_registry(spec.synthetic.clone().unwrap_or_else(|| SyntheticSurfaceParams::new(0.0)))
}

pub fn build_universe(spec: &ExperimentSpec) -> Result<Option<SplitUniverse>> {
    match &spec.universe {
        None => Ok(None),
        Some(UniverseSpec::Seeds(seeds)) => SplitUniverse::from_seeds(
            spec.population.data_source.pool_size(),
            &spec.population.split_policy,
            seeds.iter().copied(),
        )
        .map(Some),
    }
}

/// Worker count: explicit request, then the environment, then the file.
/// `None` leaves the choice to rayon.
pub fn resolve_threads(spec: &ExperimentSpec, requested: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = requested {
        return Ok(Some(n.max(1)));
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
        return Ok(Some(n.max(1)));
    }
    Ok(spec.parallelism)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the experiment on a pool of `threads` workers (see [`resolve_threads`]).
/// Output does not depend on the worker count.
pub fn run_experiment(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ReportBundle> {
    let threads = resolve_threads(spec, threads)?;
    in_pool(threads, || run_with_seed(spec, spec.master_seed))?
}

fn collect_runs(results: Vec<Result<RunRecord>>) -> Result<Vec<RunRecord>> {
    let total = results.len();
    let failed: Vec<&Error> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if failed.is_empty() {
        return Ok(results.into_iter().map(|r| r.unwrap()).collect());
    }
    let (system_id, arm, message) = match failed[0] {
        Error::Execution {
            system_id,
            arm,
            message,
        } => (*system_id, arm.clone(), message.clone()),
        other => (0, String::new(), other.to_string()),
    };
    Err(Error::Execution {
        system_id,
        arm,
        message: format!("{message} ({} of {total} runs failed, {} completed)", failed.len(), total - failed.len()),
    })
}

fn run_armed(
    spec: &ExperimentSpec,
    armed: &[crate::sampling::ArmedSystem],
    pool: &DataPool,
    registry: &ExecutorRegistry,
) -> Result<Vec<RunRecord>> {
    let results = execute_many(armed, pool, registry, &spec.population.executor_id, &spec.metric)
        .into_iter()
        .zip(armed)
        .map(|(r, a)| {
            r.map_err(|e| Error::Execution {
                system_id: a.base.system_id,
                arm: a.arm.to_string(),
                message: e.to_string(),
            })
        })
        .collect();
    collect_runs(results)
}

fn split_arms(records: &[RunRecord]) -> (Vec<RunRecord>, Vec<RunRecord>) {
    records.iter().cloned().partition(|r| r.arm == Arm::Treatment)
}

/// Runs the experiment under `master_seed` on the current rayon pool.
pub fn run_with_seed(spec: &ExperimentSpec, master_seed: u64) -> Result<ReportBundle> {
    let pool = build_pool(spec)?;
    let registry = build_registry(spec);
    let universe = build_universe(spec)?;
    let population = &spec.population;
    let contrast = &population.contrast;

    let (records, treated, control) = match spec.design {
        Design::Exhaustive => {
            let universe = universe.as_ref().ok_or_else(|| Error::Config("exhaustive design needs a universe".into()))?;
            let ctx = OracleContext {
                spec: population,
                registry: &registry,
                pool: &pool,
                universe,
                metric: &spec.metric,
                budget: spec.oracle_budget,
            };
            let treated = exhaustive_records(ctx, Arm::Treatment)?;
            let control = exhaustive_records(ctx, Arm::Control)?;
            let mut records = treated.clone();
            records.extend(control.iter().cloned());
            (records, treated, control)
        }
        Design::Paired | Design::Independent => {
            let s = spec.sample_size()?;
            let systems = match &universe {
                Some(u) => sample_systems_from_universe(population, u, s, master_seed)?,
                None => sample_systems(population, s, master_seed)?,
            };
            let armed = assign_arms(&systems, spec.design, contrast, derive_seed(master_seed, seed_path!["arms"]));
            let records = run_armed(spec, &armed, &pool, &registry)?;
            let (treated, control) = split_arms(&records);
            (records, treated, control)
        }
    };

    let ege_treatment = ege_hat(&treated, contrast.label(Arm::Treatment))?;
    let ege_control = ege_hat(&control, contrast.label(Arm::Control))?;
    let ate = ate_hat(&ege_treatment, &ege_control);

    let ites = match spec.design {
        Design::Paired => Some(paired_ites(&treated, &control)?),
        _ => None,
    };
    let interval_seed = derive_seed(master_seed, seed_path!["interval"]);
    let confidence_interval = match spec.design {
        Design::Exhaustive => None,
        Design::Paired => Some(ate_interval(
            EffectSample::Paired(ites.as_deref().unwrap_or_default()),
            spec.interval.level,
            spec.interval.method,
            spec.interval.resamples,
            interval_seed,
        )?),
        Design::Independent => Some(ate_interval(
            EffectSample::Independent {
                treatment: &ege_treatment.per_system_means,
                control: &ege_control.per_system_means,
            },
            spec.interval.level,
            spec.interval.method,
            spec.interval.resamples,
            interval_seed,
        )?),
    };

    let tests = spec
        .inference
        .tests
        .iter()
        .map(|&kind| {
            let mut cfg = TestConfig::new(derive_seed(master_seed, seed_path!["test", kind.as_str()]))
                .with_resamples(spec.inference.resamples)
                .with_alpha(spec.inference.alpha)
                .with_enumeration(spec.inference.enumeration);
            cfg.sidedness = spec.inference.sidedness;
            run_test(kind, &cfg, ites.as_deref(), &treated, &control, &ege_treatment.per_system_means, &ege_control.per_system_means)
        })
        .collect::<Result<Vec<_>>>()?;

    let report = ATEReport {
        design: spec.design,
        metric: spec.metric,
        treatment_label: contrast.label(Arm::Treatment).to_string(),
        control_label: contrast.label(Arm::Control).to_string(),
        degenerate_runs: records.iter().filter(|r| r.degenerate).count(),
        ege_treatment,
        ege_control,
        ate,
        ites,
        confidence_interval,
        tests,
        master_seed,
        spec_digest: spec_digest(&spec.source),
    };
    Ok(ReportBundle {
        report,
        records,
        variables: population.variable_names(),
        config_echo: spec.source.clone(),
    })
}

fn run_test(
    kind: TestKind,
    cfg: &TestConfig,
    ites: Option<&[f64]>,
    treated: &[RunRecord],
    control: &[RunRecord],
    means_t: &[f64],
    means_c: &[f64],
) -> Result<TestResult> {
    match kind {
        TestKind::PairedSignFlip | TestKind::PairedBootstrap => {
            let ites = ites.ok_or_else(|| Error::Config(format!("test `{}` needs a paired design", kind.as_str())))?;
            paired_system_test(ites, kind.paired_mode().unwrap(), cfg)
        }
        TestKind::IndependentPermutation => independent_system_test(means_t, means_c, cfg),
        TestKind::SingleSystemShiftedBootstrap => {
            let (t, c) = treated
                .first()
                .zip(control.first())
                .ok_or_else(|| Error::Sizing("single-system test needs one paired system".into()))?;
            let mut result = shifted_bootstrap_test(&t.per_instance_losses, &c.per_instance_losses, cfg)?;
            result.test_id = kind.as_str().to_string();
            Ok(result)
        }
    }
}

/// One replication of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub replication: usize,
    pub master_seed: u64,
    #[serde(serialize_with = "fmt17::f64")]
    pub ate: f64,
    #[serde(serialize_with = "fmt17::opt")]
    pub ci_lo: Option<f64>,
    #[serde(serialize_with = "fmt17::opt")]
    pub ci_hi: Option<f64>,
    pub rejections: Vec<(String, bool)>,
}

/// Re-runs the experiment `replications` times under seeds derived from the
/// file's master seed. Replications run in parallel; order is preserved.
pub fn simulate(spec: &ExperimentSpec, replications: usize, threads: Option<usize>) -> Result<Vec<Replication>> {
    let threads = resolve_threads(spec, threads)?;
    in_pool(threads, || {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(spec.master_seed, seed_path!["replication", r]);
                let bundle = run_with_seed(spec, seed)?;
                let report = bundle.report;
                Ok(Replication {
                    replication: r,
                    master_seed: seed,
                    ate: report.ate,
                    ci_lo: report.confidence_interval.map(|i| i.lo),
                    ci_hi: report.confidence_interval.map(|i| i.hi),
                    rejections: report.tests.iter().map(|t| (t.test_id.clone(), t.reject)).collect(),
                })
            })
            .collect()
    })?
}

/// Aggregate view of a simulation study against the known population ATE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub replications: usize,
    #[serde(serialize_with = "fmt17::f64")]
    pub true_ate: f64,
    #[serde(serialize_with = "fmt17::f64")]
    pub mean_ate: f64,
    /// Share of intervals containing `true_ate`.
    #[serde(serialize_with = "fmt17::opt")]
    pub coverage: Option<f64>,
    pub rejection_rates: Vec<(String, f64)>,
}

pub fn summarize(reps: &[Replication], true_ate: f64) -> SimulationSummary {
    let n = reps.len() as f64;
    let ates: Vec<f64> = reps.iter().map(|r| r.ate).collect();
    let intervals: Vec<(f64, f64)> = reps.iter().filter_map(|r| r.ci_lo.zip(r.ci_hi)).collect();
    let coverage = (!intervals.is_empty() && intervals.len() == reps.len()).then(|| {
        intervals.iter().filter(|(lo, hi)| *lo <= true_ate && true_ate <= *hi).count() as f64 / n
    });
    let rejection_rates = reps
        .first()
        .map(|r| {
            r.rejections
                .iter()
                .enumerate()
                .map(|(i, (id, _))| (id.clone(), reps.iter().filter(|r| r.rejections[i].1).count() as f64 / n))
                .collect()
        })
        .unwrap_or_default();
    SimulationSummary {
        replications: reps.len(),
        true_ate,
        mean_ate: crate::numeric::mean(&ates),
        coverage,
        rejection_rates,
    }
}
