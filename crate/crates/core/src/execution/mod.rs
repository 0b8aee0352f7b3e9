//! Executors: turning an armed system plus data into per-test-instance losses.
//!
//! Executors must be pure: no shared mutable state and no information flowing
//! between systems. The orchestrator relies on this to run them in parallel.

mod corpus;
mod synthetic;
mod text;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use corpus::{generate_synthetic_corpus, CorpusParams};
pub use synthetic::{run_synthetic, SyntheticSurfaceExecutor, SyntheticSurfaceParams};
pub use text::{
    run_text_pipeline, LearnerSettings, PipelineOutput, TextPipelineConfig, TextPipelineExecutor,
    Weighting,
};

use crate::error::{Error, Result};
use crate::numeric;
use crate::population::{Arm, Assignment};
use crate::sampling::ArmedSystem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub text: String,
    /// Index into the pool's `class_set`.
    pub label: usize,
}

/// An index-addressable pool of labelled raw documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPool {
    pub instances: Vec<Instance>,
    pub class_set: Vec<String>,
}

impl DataPool {
    pub fn new(instances: Vec<Instance>, class_set: Vec<String>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Contract("data pool is empty".into()));
        }
        if let Some(bad) = instances.iter().find(|i| i.label >= class_set.len()) {
            return Err(Error::Contract(format!(
                "label {} outside class set of {}",
                bad.label,
                class_set.len()
            )));
        }
        Ok(DataPool {
            instances,
            class_set,
        })
    }

    /// A pool of `n` empty, unlabelled-in-practice instances for executors
    /// that only address instances by index.
    pub fn index_only(n: usize) -> Self {
        DataPool {
            instances: vec![
                Instance {
                    text: String::new(),
                    label: 0,
                };
                n
            ],
            class_set: vec!["none".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    ZeroOneError,
    ZeroOneAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerIsBetter,
    HigherIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub metric_id: MetricId,
    pub orientation: Orientation,
}

impl MetricSpec {
    pub fn new(metric_id: MetricId) -> Self {
        let orientation = match metric_id {
            MetricId::ZeroOneError => Orientation::LowerIsBetter,
            MetricId::ZeroOneAgreement => Orientation::HigherIsBetter,
        };
        MetricSpec {
            metric_id,
            orientation,
        }
    }

    pub fn zero_one_error() -> Self {
        MetricSpec::new(MetricId::ZeroOneError)
    }

    /// Per-instance value for a predicted vs. true class.
    pub fn score(&self, predicted: usize, truth: usize) -> f64 {
        let hit = predicted == truth;
        match self.metric_id {
            MetricId::ZeroOneError => f64::from(u8::from(!hit)),
            MetricId::ZeroOneAgreement => f64::from(u8::from(hit)),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricId::ZeroOneError => "zero_one_error",
            MetricId::ZeroOneAgreement => "zero_one_agreement",
        })
    }
}

/// Raw executor output before it is wrapped into a [`RunRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutorOutput {
    pub losses: Vec<f64>,
    /// The model could not be trained as configured and a fallback was used.
    pub degenerate: bool,
}

pub trait Executor: Send + Sync {
    fn id(&self) -> &str;

    /// Whether the executor reads document text (and so needs a real corpus).
    fn needs_documents(&self) -> bool {
        true
    }

    fn run(&self, armed: &ArmedSystem, pool: &DataPool, metric: &MetricSpec) -> Result<ExecutorOutput>;
}

#[derive(Clone, Default)]
pub struct ExecutorRegistry {
    executors: BTreeMap<String, Arc<dyn Executor>>,
}

impl ExecutorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(mut self, executor: impl Executor + 'static) -> Self {
        self.executors.insert(executor.id().to_string(), Arc::new(executor));
        self
    }

    pub fn get(&self, id: &str) -> Result<&dyn Executor> {
        self.executors
            .get(id)
            .map(|e| e.as_ref())
            .ok_or_else(|| Error::UnknownExecutor(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.executors.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.executors.keys().map(String::as_str)
    }
}

impl fmt::Debug for ExecutorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.executors.keys()).finish()
    }
}

/// The materialized result of running one armed system.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub system_id: usize,
    pub arm: Arm,
    pub nuisance_values: Assignment,
    pub full_values: Assignment,
    pub n_train: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub per_instance_losses: Vec<f64>,
    pub mean_loss: f64,
    pub executor_id: String,
    pub degenerate: bool,
    /// Not part of any report: it would break byte-identical output.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for RunRecord {
    /// Everything but `wall_time`.
    fn eq(&self, other: &Self) -> bool {
        self.system_id == other.system_id
            && self.arm == other.arm
            && self.nuisance_values == other.nuisance_values
            && self.full_values == other.full_values
            && self.n_train == other.n_train
            && self.n_test == other.n_test
            && self.split_seed == other.split_seed
            && self.per_instance_losses == other.per_instance_losses
            && self.mean_loss == other.mean_loss
            && self.executor_id == other.executor_id
            && self.degenerate == other.degenerate
    }
}

/// Runs `armed` on `pool` with the registered executor `executor_id`.
pub fn execute_system(
    armed: &ArmedSystem,
    pool: &DataPool,
    registry: &ExecutorRegistry,
    executor_id: &str,
    metric: &MetricSpec,
) -> Result<RunRecord> {
    let executor = registry.get(executor_id)?;
    if let Some(&bad) = armed
        .base
        .split
        .train_indices
        .iter()
        .chain(&armed.base.split.test_indices)
        .find(|&&i| i >= pool.len())
    {
        return Err(Error::Contract(format!(
            "split index {bad} outside pool of {}",
            pool.len()
        )));
    }
    let started = Instant::now();
    let out = executor.run(armed, pool, metric)?;
    let wall_time = started.elapsed();
    if out.losses.len() != armed.base.split.n_test() {
        return Err(Error::Contract(format!(
            "executor `{executor_id}` returned {} losses for {} test instances",
            out.losses.len(),
            armed.base.split.n_test()
        )));
    }
    Ok(RunRecord {
        system_id: armed.base.system_id,
        arm: armed.arm,
        nuisance_values: armed.base.nuisance_values.clone(),
        full_values: armed.full_values.clone(),
        n_train: armed.base.split.n_train(),
        n_test: armed.base.split.n_test(),
        split_seed: armed.base.split.seed,
        mean_loss: numeric::mean(&out.losses),
        per_instance_losses: out.losses,
        executor_id: executor_id.to_string(),
        degenerate: out.degenerate,
        wall_time,
    })
}

/// Runs every armed system, in parallel on the current rayon pool. Results
/// come back in input order whatever the scheduling.
pub fn execute_many(
    armed: &[ArmedSystem],
    pool: &DataPool,
    registry: &ExecutorRegistry,
    executor_id: &str,
    metric: &MetricSpec,
) -> Vec<Result<RunRecord>> {
    armed
        .par_iter()
        .map(|a| execute_system(a, pool, registry, executor_id, metric))
        .collect()
}

/// Registry with the text pipeline and a synthetic surface built from `surface`.
pub fn builtin_registry(surface: SyntheticSurfaceParams) -> ExecutorRegistry {
    ExecutorRegistry::new()
        .register(TextPipelineExecutor::default())
        .register(SyntheticSurfaceExecutor::new(surface))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::fixtures::letters_spec;
    use crate::sampling::{assign_arms, sample_systems, Design};

    #[test]
    fn unknown_executor() {
        let spec = letters_spec();
        let sys = sample_systems(&spec, 1, 0).unwrap();
        let armed = assign_arms(&sys, Design::Paired, &spec.contrast, 0);
        let reg = ExecutorRegistry::new();
        let pool = DataPool::index_only(20);
        let err = execute_system(&armed[0], &pool, &reg, "nope", &MetricSpec::zero_one_error());
        assert!(matches!(err, Err(Error::UnknownExecutor(_))));
    }

    #[test]
    fn record_mean_matches_losses() {
        let spec = letters_spec();
        let mut params = SyntheticSurfaceParams::new(0.3);
        params.instance_noise_sd = 0.2;
        let reg = builtin_registry(params);
        let pool = DataPool::index_only(20);
        for a in assign_arms(&sample_systems(&spec, 5, 1).unwrap(), Design::Paired, &spec.contrast, 1) {
            let r = execute_system(&a, &pool, &reg, "synthetic_surface", &MetricSpec::zero_one_error()).unwrap();
            assert_eq!(r.per_instance_losses.len(), r.n_test);
            let naive = r.per_instance_losses.iter().sum::<f64>() / r.n_test as f64;
            assert!((r.mean_loss - naive).abs() <= 1e-12);
        }
    }

    #[test]
    fn orientation_follows_metric() {
        assert_eq!(MetricSpec::new(MetricId::ZeroOneError).orientation, Orientation::LowerIsBetter);
        assert_eq!(MetricSpec::new(MetricId::ZeroOneAgreement).orientation, Orientation::HigherIsBetter);
        assert_eq!(MetricSpec::zero_one_error().score(1, 0), 1.0);
        assert_eq!(MetricSpec::new(MetricId::ZeroOneAgreement).score(1, 1), 1.0);
    }

    #[test]
    fn pool_rejects_labels_outside_class_set() {
        let bad = DataPool::new(
            vec![Instance {
                text: "x".into(),
                label: 2,
            }],
            vec!["a".into(), "b".into()],
        );
        assert!(bad.is_err());
        assert!(DataPool::new(vec![], vec!["a".into()]).is_err());
    }
}
