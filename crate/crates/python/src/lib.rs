//! Python bindings for the `ate_harness` core crate.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ate_core::estimation::ege_hat as core_ege_hat;
use ate_core::execution::{
    generate_synthetic_corpus, run_text_pipeline as core_run_text_pipeline, CorpusParams, LearnerSettings, RunRecord,
    TextPipelineConfig,
};
use ate_core::harness::{self, ExperimentSpec, ReportBundle, ReportDocument};
use ate_core::inference::{self, PairedMode, Sidedness, TestConfig, TestResult};
use ate_core::population::Arm;
use ate_core::sampling::SplitPolicy;
use ate_core::seed::{self, PathItem};

create_exception!(ate_harness, ValidationError, PyValueError);
create_exception!(ate_harness, HarnessError, PyRuntimeError);

fn to_py(e: ate_core::Error) -> PyErr {
    if e.is_validation() {
        ValidationError::new_err(e.to_string())
    } else {
        HarnessError::new_err(e.to_string())
    }
}

#[derive(FromPyObject)]
enum PathArg {
    Int(u64),
    Str(String),
}

/// Derives a child seed from `master` and a path of labels and ordinals.
#[pyfunction]
fn derive_seed(master: u64, path: Vec<PathArg>) -> u64 {
    let items: Vec<PathItem<'_>> = path
        .iter()
        .map(|p| match p {
            PathArg::Int(i) => PathItem::Ordinal(*i),
            PathArg::Str(s) => PathItem::Label(s),
        })
        .collect();
    seed::derive_seed(master, &items)
}

/// Returns `(train_indices, test_indices)` for one seeded split.
#[pyfunction]
#[pyo3(signature = (pool_size, seed, train_fraction=0.75, test_size=None))]
fn draw_split(
    pool_size: usize,
    seed: u64,
    train_fraction: f64,
    test_size: Option<usize>,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let mut policy = SplitPolicy::fraction(train_fraction);
    policy.test_size = test_size;
    let split = ate_core::sampling::draw_split(pool_size, &policy, seed).map_err(to_py)?;
    Ok((split.train_indices, split.test_indices))
}

/// Generated two-class corpus as a list of `(text, label)` pairs.
#[pyfunction]
#[pyo3(signature = (n_docs, vocab_size, signal_strength, doc_length, seed, case_noise=0.2))]
fn generate_corpus(
    n_docs: usize,
    vocab_size: usize,
    signal_strength: f64,
    doc_length: usize,
    seed: u64,
    case_noise: f64,
) -> PyResult<Vec<(String, usize)>> {
    let mut params = CorpusParams::new(n_docs, vocab_size, signal_strength, doc_length, seed);
    params.case_noise = case_noise;
    let pool = generate_synthetic_corpus(&params).map_err(to_py)?;
    Ok(pool.instances.into_iter().map(|i| (i.text, i.label)).collect())
}

/// Trains the text pipeline described by `values` and predicts `test`.
#[pyfunction]
#[pyo3(signature = (values, train, test, n_classes, epochs=200, learning_rate=0.1))]
fn run_text_pipeline(
    values: BTreeMap<String, String>,
    train: Vec<(String, usize)>,
    test: Vec<String>,
    n_classes: usize,
    epochs: usize,
    learning_rate: f64,
) -> PyResult<Vec<usize>> {
    let config = TextPipelineConfig::from_values(&values).map_err(to_py)?;
    let train: Vec<(&str, usize)> = train.iter().map(|(t, l)| (t.as_str(), *l)).collect();
    let test: Vec<&str> = test.iter().map(String::as_str).collect();
    let settings = LearnerSettings {
        epochs,
        learning_rate,
    };
    let out = core_run_text_pipeline(&config, &train, &test, n_classes, settings).map_err(to_py)?;
    Ok(out.predictions)
}

/// Mean over systems of each system's mean loss.
#[pyfunction]
fn ege_hat(per_system_losses: Vec<Vec<f64>>) -> PyResult<f64> {
    let records: Vec<RunRecord> = per_system_losses
        .into_iter()
        .enumerate()
        .map(|(i, losses)| RunRecord {
            system_id: i + 1,
            arm: Arm::Treatment,
            nuisance_values: Default::default(),
            full_values: Default::default(),
            n_train: 0,
            n_test: losses.len(),
            split_seed: i as u64,
            mean_loss: ate_core::numeric::mean(&losses),
            per_instance_losses: losses,
            executor_id: "python".into(),
            degenerate: false,
            wall_time: Duration::ZERO,
        })
        .collect();
    Ok(core_ege_hat(&records, "python").map_err(to_py)?.value)
}

/// Outcome of a hypothesis test.
#[pyclass(get_all, frozen, module = "ate_harness")]
struct TestOutcome {
    test_id: String,
    statistic: f64,
    p_value: f64,
    k: u64,
    exhaustive: bool,
    sidedness: String,
    alpha: f64,
    reject: bool,
    seed: u64,
}

#[pymethods]
impl TestOutcome {
    fn __repr__(&self) -> String {
        format!(
            "TestOutcome(test_id={:?}, statistic={}, p_value={}, k={}, reject={})",
            self.test_id,
            self.statistic,
            self.p_value,
            self.k,
            if self.reject { "True" } else { "False" }
        )
    }
}

impl From<TestResult> for TestOutcome {
    fn from(r: TestResult) -> Self {
        let sidedness = match r.sidedness {
            Sidedness::TwoSided => "two_sided",
            Sidedness::Greater => "greater",
            Sidedness::Less => "less",
        };
        TestOutcome {
            test_id: r.test_id,
            statistic: r.statistic,
            p_value: r.p_value,
            k: r.k,
            exhaustive: r.exhaustive,
            sidedness: sidedness.to_string(),
            alpha: r.alpha,
            reject: r.reject,
            seed: r.seed,
        }
    }
}

fn test_config(seed: u64, resamples: usize, alpha: f64, sidedness: Option<&str>) -> PyResult<TestConfig> {
    let mut cfg = TestConfig::new(seed).with_resamples(resamples).with_alpha(alpha);
    cfg.sidedness = match sidedness {
        None => None,
        Some("two_sided") => Some(Sidedness::TwoSided),
        Some("greater") => Some(Sidedness::Greater),
        Some("less") => Some(Sidedness::Less),
        Some(other) => return Err(PyValueError::new_err(format!("unknown sidedness {other:?}"))),
    };
    Ok(cfg)
}

/// Single-test-set shifted bootstrap of per-instance losses.
#[pyfunction]
#[pyo3(signature = (losses_a, losses_b, seed=0, resamples=10000, alpha=0.05, sidedness=None))]
fn shifted_bootstrap_test(
    losses_a: Vec<f64>,
    losses_b: Vec<f64>,
    seed: u64,
    resamples: usize,
    alpha: f64,
    sidedness: Option<&str>,
) -> PyResult<TestOutcome> {
    let cfg = test_config(seed, resamples, alpha, sidedness)?;
    inference::shifted_bootstrap_test(&losses_a, &losses_b, &cfg)
        .map(Into::into)
        .map_err(to_py)
}

/// System-level test on paired ITEs; `mode` is "sign_flip" or "bootstrap".
#[pyfunction]
#[pyo3(signature = (ites, mode="sign_flip", seed=0, resamples=10000, alpha=0.05, sidedness=None))]
fn paired_system_test(
    ites: Vec<f64>,
    mode: &str,
    seed: u64,
    resamples: usize,
    alpha: f64,
    sidedness: Option<&str>,
) -> PyResult<TestOutcome> {
    let mode = match mode {
        "sign_flip" => PairedMode::SignFlipPermutation,
        "bootstrap" => PairedMode::Bootstrap,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let cfg = test_config(seed, resamples, alpha, sidedness)?;
    inference::paired_system_test(&ites, mode, &cfg).map(Into::into).map_err(to_py)
}

/// Permutation test on the per-system means of two independent groups.
#[pyfunction]
#[pyo3(signature = (means_a, means_b, seed=0, resamples=10000, alpha=0.05, sidedness=None))]
fn independent_system_test(
    means_a: Vec<f64>,
    means_b: Vec<f64>,
    seed: u64,
    resamples: usize,
    alpha: f64,
    sidedness: Option<&str>,
) -> PyResult<TestOutcome> {
    let cfg = test_config(seed, resamples, alpha, sidedness)?;
    inference::independent_system_test(&means_a, &means_b, &cfg)
        .map(Into::into)
        .map_err(to_py)
}

/// A validated experiment file.
#[pyclass(frozen, module = "ate_harness")]
struct Experiment {
    spec: ExperimentSpec,
}

#[pymethods]
impl Experiment {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let spec = harness::parse_experiment_config(text).map_err(to_py)?;
        Ok(Experiment { spec })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let spec = harness::load_experiment(&path).map_err(to_py)?;
        Ok(Experiment { spec })
    }

    #[getter]
    fn design(&self) -> String {
        self.spec.design.to_string()
    }

    #[getter]
    fn systems(&self) -> Option<usize> {
        self.spec.systems
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.spec.master_seed
    }

    #[getter]
    fn executor(&self) -> String {
        self.spec.population.executor_id.clone()
    }

    /// Runs the experiment; the GIL is released while it works.
    #[pyo3(signature = (threads=None))]
    fn run(&self, py: Python<'_>, threads: Option<usize>) -> PyResult<Report> {
        let bundle = py
            .detach(|| harness::run_experiment(&self.spec, threads))
            .map_err(to_py)?;
        Ok(Report { bundle })
    }
}

/// Result of a run.
#[pyclass(frozen, module = "ate_harness")]
struct Report {
    bundle: ReportBundle,
}

#[pymethods]
impl Report {
    #[getter]
    fn ate(&self) -> f64 {
        self.bundle.report.ate
    }

    #[getter]
    fn ege_treatment(&self) -> f64 {
        self.bundle.report.ege_treatment.value
    }

    #[getter]
    fn ege_control(&self) -> f64 {
        self.bundle.report.ege_control.value
    }

    #[getter]
    fn ites(&self) -> Option<Vec<f64>> {
        self.bundle.report.ites.clone()
    }

    #[getter]
    fn confidence_interval(&self) -> Option<(f64, f64)> {
        self.bundle.report.confidence_interval.map(|i| (i.lo, i.hi))
    }

    #[getter]
    fn tests(&self) -> Vec<TestOutcome> {
        self.bundle.report.tests.iter().cloned().map(Into::into).collect()
    }

    #[getter]
    fn degenerate_runs(&self) -> usize {
        self.bundle.report.degenerate_runs
    }

    /// The `report.json` document.
    fn to_json(&self) -> PyResult<String> {
        harness::render_report_json(&ReportDocument::new(self.bundle.report.clone())).map_err(to_py)
    }

    /// The `runs.csv` table.
    fn runs_csv(&self) -> PyResult<String> {
        harness::render_runs_csv(&self.bundle).map_err(to_py)
    }

    /// Writes the bundle files into `dir`; returns their paths.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        harness::emit_report(&self.bundle, &dir).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(design={}, ate={}, systems={}+{})",
            self.bundle.report.design,
            self.bundle.report.ate,
            self.bundle.report.ege_treatment.systems,
            self.bundle.report.ege_control.systems
        )
    }
}

/// Population-level comparison of ML pipeline methods.
#[pymodule]
fn ate_harness(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    m.add("HarnessError", m.py().get_type::<HarnessError>())?;
    m.add_class::<Experiment>()?;
    m.add_class::<Report>()?;
    m.add_class::<TestOutcome>()?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(draw_split, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_text_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(ege_hat, m)?)?;
    m.add_function(wrap_pyfunction!(shifted_bootstrap_test, m)?)?;
    m.add_function(wrap_pyfunction!(paired_system_test, m)?)?;
    m.add_function(wrap_pyfunction!(independent_system_test, m)?)?;
    Ok(())
}
