//! Experiment files: strict TOML, every key known, seeds mandatory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estimation::IntervalMethod;
use crate::execution::{CorpusParams, MetricId, MetricSpec, Orientation, SyntheticSurfaceParams};
use crate::inference::{Enumeration, PairedMode, Sidedness, DEFAULT_ALPHA, DEFAULT_RESAMPLES};
use crate::oracle::DEFAULT_BUDGET;
use crate::population::{
    validate_spec, Arm, BroadMethodSpec, DataSource, Exclusion, MethodVariable, PopulationSpec, TreatmentContrast,
};
use crate::sampling::{Design, SplitPolicy};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    master_seed: u64,
    design: Design,
    executor: String,
    systems: Option<usize>,
    parallelism: Option<usize>,
    metric: Option<MetricDef>,
    contrast: ContrastDef,
    #[serde(default)]
    nuisance: Vec<VariableDef>,
    #[serde(default)]
    exclusions: Vec<ExclusionDef>,
    data: DataDef,
    split: SplitDef,
    universe: Option<UniverseDef>,
    synthetic: Option<SyntheticDef>,
    inference: Option<InferenceDef>,
    interval: Option<IntervalDef>,
    oracle: Option<OracleDef>,
    output: Option<OutputDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricDef {
    id: MetricId,
    orientation: Option<Orientation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDef {
    name: String,
    values: Vec<String>,
    weights: Option<Vec<f64>>,
}

impl From<VariableDef> for MethodVariable {
    fn from(def: VariableDef) -> Self {
        match def.weights {
            Some(w) => MethodVariable::weighted(def.name, def.values, w),
            None => MethodVariable::uniform(def.name, def.values),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BroadDef {
    name: String,
    components: Vec<VariableDef>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ContrastDef {
    Simple {
        variable: String,
        values: Vec<String>,
        treatment: String,
        control: String,
    },
    Broad {
        treatment: BroadDef,
        control: BroadDef,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExclusionDef {
    arm: Option<Arm>,
    when: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataDef {
    pool_size: Option<usize>,
    corpus: Option<CorpusDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusDef {
    n_docs: usize,
    vocab_size: usize,
    signal_strength: f64,
    doc_length: usize,
    case_noise: Option<f64>,
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitDef {
    train_fraction: Option<f64>,
    train_size: Option<usize>,
    test_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniverseDef {
    /// Split seeds `1..=size`.
    size: Option<usize>,
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticDef {
    base_loss: f64,
    #[serde(default)]
    treatment_effect: f64,
    #[serde(default)]
    effects: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    interactions: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    split_effect_sd: f64,
    #[serde(default)]
    split_noise_sd: f64,
    #[serde(default)]
    instance_noise_sd: f64,
    #[serde(default)]
    arm_noise_sd: f64,
    #[serde(default)]
    clip: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferenceDef {
    tests: Option<Vec<TestKind>>,
    resamples: Option<usize>,
    alpha: Option<f64>,
    sidedness: Option<Sidedness>,
    enumeration: Option<Enumeration>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntervalDef {
    method: IntervalMethod,
    level: Option<f64>,
    resamples: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleDef {
    budget: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputDef {
    dir: PathBuf,
}

/// Hypothesis tests an experiment can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PairedSignFlip,
    PairedBootstrap,
    IndependentPermutation,
    /// The single-test-set baseline, applied to system 1 of a paired design.
    SingleSystemShiftedBootstrap,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::PairedSignFlip => "paired_sign_flip",
            TestKind::PairedBootstrap => "paired_bootstrap",
            TestKind::IndependentPermutation => "independent_permutation",
            TestKind::SingleSystemShiftedBootstrap => "single_system_shifted_bootstrap",
        }
    }

    pub fn paired_mode(self) -> Option<PairedMode> {
        match self {
            TestKind::PairedSignFlip => Some(PairedMode::SignFlipPermutation),
            TestKind::PairedBootstrap => Some(PairedMode::Bootstrap),
            _ => None,
        }
    }

    fn fits(self, design: Design) -> bool {
        match self {
            TestKind::IndependentPermutation => design == Design::Independent,
            _ => design == Design::Paired,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceSettings {
    pub tests: Vec<TestKind>,
    pub resamples: usize,
    pub alpha: f64,
    pub sidedness: Option<Sidedness>,
    pub enumeration: Enumeration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSettings {
    pub method: IntervalMethod,
    pub level: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UniverseSpec {
    Seeds(Vec<u64>),
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub population: PopulationSpec,
    /// Sample size S; the enumeration size for exhaustive designs.
    pub systems: Option<usize>,
    pub design: Design,
    pub metric: MetricSpec,
    pub inference: InferenceSettings,
    pub interval: IntervalSettings,
    pub master_seed: u64,
    pub synthetic: Option<SyntheticSurfaceParams>,
    pub universe: Option<UniverseSpec>,
    pub oracle_budget: u64,
    pub output_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    /// The experiment file as given, echoed into every bundle.
    pub source: String,
}

impl ExperimentSpec {
    pub fn sample_size(&self) -> Result<usize> {
        self.systems
            .ok_or_else(|| Error::Config(format!("`systems` is required for the {} design", self.design)))
    }

    /// The same population evaluated exactly over its split universe.
    pub fn into_exhaustive(mut self) -> Result<ExperimentSpec> {
        if self.universe.is_none() {
            return Err(config_err("exact evaluation needs a [universe] section"));
        }
        self.design = Design::Exhaustive;
        self.inference.tests.clear();
        Ok(self)
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Names of the built-in executors an experiment may refer to.
pub const BUILTIN_EXECUTORS: [&str; 2] = ["text_pipeline", "synthetic_surface"];

/// Parses and validates an experiment file.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentSpec> {
    let file: ExperimentFile = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;

    let contrast = match file.contrast {
        ContrastDef::Simple {
            variable,
            values,
            treatment,
            control,
        } => TreatmentContrast::simple(MethodVariable::uniform(variable, values), treatment, control),
        ContrastDef::Broad { treatment, control } => {
            let broad = |b: BroadDef| {
                BroadMethodSpec::new(b.name, b.components.into_iter().map(MethodVariable::from).collect())
            };
            TreatmentContrast::Broad {
                treatment: broad(treatment),
                control: broad(control),
            }
        }
    };

    let data_source = match (file.data.pool_size, file.data.corpus) {
        (Some(pool_size), None) => DataSource::Indexed { pool_size },
        (None, Some(c)) => {
            let mut params = CorpusParams::new(c.n_docs, c.vocab_size, c.signal_strength, c.doc_length, c.seed);
            if let Some(noise) = c.case_noise {
                params.case_noise = noise;
            }
            params.validate()?;
            DataSource::Corpus(params)
        }
        _ => return Err(config_err("[data] needs exactly one of `pool_size` or `[data.corpus]`")),
    };

    let split_policy = match (file.split.train_fraction, file.split.train_size) {
        (Some(f), None) => {
            let mut p = SplitPolicy::fraction(f);
            p.test_size = file.split.test_size;
            p
        }
        (None, Some(n)) => {
            let mut p = SplitPolicy::fraction(0.5);
            p.train_size = Some(n);
            p.test_size = file.split.test_size;
            p
        }
        _ => return Err(config_err("[split] needs exactly one of `train_fraction` or `train_size`")),
    };

    let population = PopulationSpec {
        contrast,
        nuisance: file.nuisance.into_iter().map(MethodVariable::from).collect(),
        data_source,
        split_policy,
        executor_id: file.executor,
        exclusions: file
            .exclusions
            .into_iter()
            .map(|e| Exclusion { arm: e.arm, when: e.when })
            .collect(),
    };
    let report = validate_spec(&population);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }

    if !BUILTIN_EXECUTORS.contains(&population.executor_id.as_str()) {
        return Err(Error::UnknownExecutor(population.executor_id.clone()));
    }
    if population.executor_id == "text_pipeline" && !matches!(population.data_source, DataSource::Corpus(_)) {
        return Err(config_err("executor `text_pipeline` needs a [data.corpus] section"));
    }
    let synthetic = match file.synthetic {
        Some(s) => {
            let params = SyntheticSurfaceParams {
                base_loss: s.base_loss,
                effects: s.effects,
                treatment_effect: s.treatment_effect,
                interactions: s.interactions,
                split_effect_sd: s.split_effect_sd,
                split_noise_sd: s.split_noise_sd,
                instance_noise_sd: s.instance_noise_sd,
                arm_noise_sd: s.arm_noise_sd,
                clip: s.clip,
            };
            params.validate()?;
            Some(params)
        }
        None => None,
    };
    if population.executor_id == "synthetic_surface" && synthetic.is_none() {
        return Err(config_err("executor `synthetic_surface` needs a [synthetic] section"));
    }

    let metric = match file.metric {
        None => MetricSpec::zero_one_error(),
        Some(m) => {
            let spec = MetricSpec::new(m.id);
            if let Some(o) = m.orientation {
                if o != spec.orientation {
                    return Err(config_err(format!("metric `{}` is not {:?}", m.id, o)));
                }
            }
            spec
        }
    };

    match (file.design, file.systems) {
        (Design::Exhaustive, _) => {}
        (_, None) => return Err(config_err(format!("`systems` is required for the {} design", file.design))),
        (_, Some(s)) if s < 2 => {
            return Err(config_err(format!("`systems` must be at least 2 for sampled designs, got {s}")))
        }
        _ => {}
    }

    let universe = match file.universe {
        None => None,
        Some(UniverseDef { size: Some(n), seeds: None }) if n >= 1 => Some(UniverseSpec::Seeds((1..=n as u64).collect())),
        Some(UniverseDef { size: None, seeds: Some(s) }) if !s.is_empty() => Some(UniverseSpec::Seeds(s)),
        Some(_) => return Err(config_err("[universe] needs exactly one of `size` (≥ 1) or a non-empty `seeds`")),
    };
    if file.design == Design::Exhaustive && universe.is_none() {
        return Err(config_err("the exhaustive design needs a [universe] section"));
    }

    let inference = {
        let def = file.inference.unwrap_or(InferenceDef {
            tests: None,
            resamples: None,
            alpha: None,
            sidedness: None,
            enumeration: None,
        });
        let tests = def.tests.unwrap_or_else(|| match file.design {
            Design::Paired => vec![TestKind::PairedSignFlip],
            Design::Independent => vec![TestKind::IndependentPermutation],
            Design::Exhaustive => vec![],
        });
        if let Some(t) = tests.iter().find(|t| !t.fits(file.design)) {
            return Err(config_err(format!(
                "test `{}` does not apply to the {} design",
                t.as_str(),
                file.design
            )));
        }
        let alpha = def.alpha.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(config_err(format!("inference.alpha {alpha} is not in (0, 1)")));
        }
        let resamples = def.resamples.unwrap_or(DEFAULT_RESAMPLES);
        if resamples == 0 {
            return Err(config_err("inference.resamples must be at least 1"));
        }
        InferenceSettings {
            tests,
            resamples,
            alpha,
            sidedness: def.sidedness,
            enumeration: def.enumeration.unwrap_or(Enumeration::Auto),
        }
    };

    let interval = match file.interval {
        None => IntervalSettings {
            method: IntervalMethod::Normal,
            level: 0.95,
            resamples: DEFAULT_RESAMPLES,
        },
        Some(i) => IntervalSettings {
            method: i.method,
            level: i.level.unwrap_or(0.95),
            resamples: i.resamples.unwrap_or(DEFAULT_RESAMPLES),
        },
    };
    if !(interval.level > 0.0 && interval.level < 1.0) {
        return Err(config_err(format!("interval.level {} is not in (0, 1)", interval.level)));
    }

    if file.parallelism == Some(0) {
        return Err(config_err("parallelism must be at least 1"));
    }

    Ok(ExperimentSpec {
        population,
        systems: file.systems,
        design: file.design,
        metric,
        inference,
        interval,
        master_seed: file.master_seed,
        synthetic,
        universe,
        oracle_budget: file.oracle.map_or(DEFAULT_BUDGET, |o| o.budget),
        output_dir: file.output.map(|o| o.dir),
        parallelism: file.parallelism,
        source: text.to_string(),
    })
}
