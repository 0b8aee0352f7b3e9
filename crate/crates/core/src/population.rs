//! Populations of processing systems: method variables, broad methods,
//! treatment contrasts and the validation rules tying them together.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::CorpusParams;
use crate::sampling::SplitPolicy;

/// Variable name → method value for one processing system.
pub type Assignment = BTreeMap<String, String>;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A pipeline variable ranging over a closed, finite set of methods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodVariable {
    pub name: String,
    pub values: Vec<String>,
    pub weights: Vec<f64>,
}

impl MethodVariable {
    /// Every value equally likely.
    pub fn uniform<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        let values: Vec<String> = values.into_iter().map(Into::into).collect();
        let n = values.len();
        // 1/n is the correctly rounded quotient, identical for every entry.
        let weights = vec![if n == 0 { 0.0 } else { 1.0 / n as f64 }; n];
        MethodVariable {
            name: name.into(),
            values,
            weights,
        }
    }

    pub fn weighted<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
        weights: Vec<f64>,
    ) -> Self {
        MethodVariable {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
            weights,
        }
    }

    pub fn contains(&self, value: &str) -> bool {
        self.values.iter().any(|v| v == value)
    }

    pub fn weight_of(&self, value: &str) -> Option<f64> {
        self.values
            .iter()
            .position(|v| v == value)
            .and_then(|i| self.weights.get(i).copied())
    }

    pub fn is_uniform(&self) -> bool {
        let n = self.values.len() as f64;
        self.weights.iter().all(|&w| w == 1.0 / n)
    }

    fn check(&self, path: &str, report: &mut ValidationReport) {
        if self.name.trim().is_empty() {
            report.push(format!("{path}.name"), "variable name is empty");
        }
        if self.values.is_empty() {
            report.push(format!("{path}.values"), "variable has no values");
        }
        let mut seen = BTreeSet::new();
        for (i, v) in self.values.iter().enumerate() {
            if v.is_empty() {
                report.push(format!("{path}.values[{i}]"), "empty method identifier");
            }
            if !seen.insert(v.as_str()) {
                report.push(format!("{path}.values[{i}]"), format!("duplicate value `{v}`"));
            }
        }
        if self.weights.len() != self.values.len() {
            report.push(
                format!("{path}.weights"),
                format!(
                    "{} weights for {} values",
                    self.weights.len(),
                    self.values.len()
                ),
            );
            return;
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                report.push(format!("{path}.weights[{i}]"), format!("weight {w} is not a non-negative number"));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if !self.values.is_empty() && (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            report.push(format!("{path}.weights"), format!("weights sum to {total}, not 1"));
        }
    }
}

/// A method made of several component variables, each with its own domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadMethodSpec {
    pub name: String,
    pub components: Vec<MethodVariable>,
}

impl BroadMethodSpec {
    pub fn new(name: impl Into<String>, components: Vec<MethodVariable>) -> Self {
        BroadMethodSpec {
            name: name.into(),
            components,
        }
    }

    fn check(&self, path: &str, report: &mut ValidationReport) {
        if self.components.is_empty() {
            report.push(format!("{path}.components"), "broad method has no components");
        }
        let mut names = BTreeSet::new();
        for (i, c) in self.components.iter().enumerate() {
            let cpath = format!("{path}.components[{i}]");
            c.check(&cpath, report);
            if !names.insert(c.name.as_str()) {
                report.push(format!("{cpath}.name"), format!("duplicate component `{}`", c.name));
            }
        }
    }
}

/// All component combinations of a broad method, lexicographic in the
/// declared component order (first component varies slowest).
pub fn expand_broad_method(broad: &BroadMethodSpec) -> Vec<Assignment> {
    cross_product(&broad.components)
}

/// Cartesian product of variable domains in declared order. The empty
/// product is a single empty assignment.
pub fn cross_product(variables: &[MethodVariable]) -> Vec<Assignment> {
    let mut out = vec![Assignment::new()];
    for var in variables {
        let mut next = Vec::with_capacity(out.len() * var.values.len());
        for partial in &out {
            for value in &var.values {
                let mut a = partial.clone();
                a.insert(var.name.clone(), value.clone());
                next.push(a);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreatmentContrast {
    Simple {
        variable: MethodVariable,
        treatment: String,
        control: String,
    },
    Broad {
        treatment: BroadMethodSpec,
        control: BroadMethodSpec,
    },
}

impl TreatmentContrast {
    pub fn simple(variable: MethodVariable, treatment: impl Into<String>, control: impl Into<String>) -> Self {
        TreatmentContrast::Simple {
            variable,
            treatment: treatment.into(),
            control: control.into(),
        }
    }

    /// The same contrast with the arms exchanged.
    pub fn swapped(&self) -> Self {
        match self.clone() {
            TreatmentContrast::Simple {
                variable,
                treatment,
                control,
            } => TreatmentContrast::Simple {
                variable,
                treatment: control,
                control: treatment,
            },
            TreatmentContrast::Broad { treatment, control } => TreatmentContrast::Broad {
                treatment: control,
                control: treatment,
            },
        }
    }

    /// Variable names set by the contrast, in declaration order, deduplicated.
    pub fn variable_names(&self) -> Vec<String> {
        match self {
            TreatmentContrast::Simple { variable, .. } => vec![variable.name.clone()],
            TreatmentContrast::Broad { treatment, control } => {
                let mut names: Vec<String> = Vec::new();
                for c in treatment.components.iter().chain(&control.components) {
                    if !names.contains(&c.name) {
                        names.push(c.name.clone());
                    }
                }
                names
            }
        }
    }

    /// Human label of an arm's method: the value for simple contrasts, the
    /// broad method's name otherwise.
    pub fn label(&self, arm: Arm) -> &str {
        match (self, arm) {
            (TreatmentContrast::Simple { treatment, .. }, Arm::Treatment) => treatment,
            (TreatmentContrast::Simple { control, .. }, Arm::Control) => control,
            (TreatmentContrast::Broad { treatment, .. }, Arm::Treatment) => &treatment.name,
            (TreatmentContrast::Broad { control, .. }, Arm::Control) => &control.name,
        }
    }

    fn check(&self, report: &mut ValidationReport) {
        match self {
            TreatmentContrast::Simple {
                variable,
                treatment,
                control,
            } => {
                variable.check("contrast.variable", report);
                if treatment == control {
                    report.push("contrast", format!("treatment and control are both `{treatment}`"));
                }
                for (field, value) in [("treatment", treatment), ("control", control)] {
                    if !variable.contains(value) {
                        report.push(
                            format!("contrast.{field}"),
                            format!("`{value}` is not a value of variable `{}`", variable.name),
                        );
                    }
                }
            }
            TreatmentContrast::Broad { treatment, control } => {
                treatment.check("contrast.treatment", report);
                control.check("contrast.control", report);
            }
        }
    }
}

/// Where the raw data of the population comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated two-class text corpus.
    Corpus(CorpusParams),
    /// An index-only pool, for executors that do not read documents.
    Indexed { pool_size: usize },
}

impl DataSource {
    pub fn pool_size(&self) -> usize {
        match self {
            DataSource::Corpus(p) => p.n_docs,
            DataSource::Indexed { pool_size } => *pool_size,
        }
    }
}

/// A nuisance combination that cannot be exposed to one (or both) arms.
///
/// Declaring an exclusion does not shrink the population: any exclusion the
/// population can realise is reported as a violation, and the population has
/// to be redefined instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    /// `None` means both arms.
    pub arm: Option<Arm>,
    pub when: Assignment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSpec {
    pub contrast: TreatmentContrast,
    pub nuisance: Vec<MethodVariable>,
    pub data_source: DataSource,
    pub split_policy: SplitPolicy,
    pub executor_id: String,
    pub exclusions: Vec<Exclusion>,
}

impl PopulationSpec {
    pub fn nuisance_variable(&self, name: &str) -> Option<&MethodVariable> {
        self.nuisance.iter().find(|v| v.name == name)
    }

    /// All method variable names: contrast first, then nuisance.
    pub fn variable_names(&self) -> Vec<String> {
        let mut names = self.contrast.variable_names();
        names.extend(self.nuisance.iter().map(|v| v.name.clone()));
        names
    }

    /// Returns `Err(Error::Validation)` if the report is non-empty.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_spec(self);
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Validation(report))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Collects every violated invariant of `spec`. An empty report means valid.
pub fn validate_spec(spec: &PopulationSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    spec.contrast.check(&mut report);

    let contrast_names: BTreeSet<String> = spec.contrast.variable_names().into_iter().collect();
    let mut nuisance_names = BTreeSet::new();
    for (i, var) in spec.nuisance.iter().enumerate() {
        let path = format!("nuisance[{i}]");
        var.check(&path, &mut report);
        if contrast_names.contains(&var.name) {
            report.push(
                format!("{path}.name"),
                format!("`{}` is already set by the contrast", var.name),
            );
        }
        if !nuisance_names.insert(var.name.as_str()) {
            report.push(format!("{path}.name"), format!("`{}` declared more than once", var.name));
        }
    }

    if spec.executor_id.trim().is_empty() {
        report.push("executor", "executor id is empty");
    }

    if let Err(e) = spec.split_policy.sizes(spec.data_source.pool_size()) {
        report.push("split", e.to_string());
    }

    for (i, ex) in spec.exclusions.iter().enumerate() {
        let path = format!("exclusions[{i}]");
        let mut realisable = true;
        for (name, value) in &ex.when {
            match spec.nuisance_variable(name) {
                None => {
                    report.push(format!("{path}.when.{name}"), format!("`{name}` is not a nuisance variable"));
                    realisable = false;
                }
                Some(var) => match var.weight_of(value) {
                    None => {
                        report.push(
                            format!("{path}.when.{name}"),
                            format!("`{value}` is not a value of `{name}`"),
                        );
                        realisable = false;
                    }
                    Some(w) if w <= 0.0 => realisable = false,
                    Some(_) => {}
                },
            }
        }
        if realisable {
            let arm = ex.arm.map_or("both arms", Arm::as_str);
            report.push(
                path,
                format!("population contains a nuisance combination that cannot be exposed to {arm}"),
            );
        }
    }

    report
}

/// Number of distinct nuisance combinations (the empty product is 1).
pub fn nuisance_combination_count(spec: &PopulationSpec) -> Result<u128> {
    spec.ensure_valid()?;
    spec.nuisance
        .iter()
        .try_fold(1u128, |acc, v| acc.checked_mul(v.values.len() as u128))
        .ok_or_else(|| Error::Sizing("nuisance combination count overflows".into()))
}


#[cfg(test)]
mod tests {
    use super::fixtures::letters_spec;
    use super::*;

    #[test]
    fn valid_spec_has_empty_report() {
        assert!(validate_spec(&letters_spec()).is_valid());
    }

    #[test]
    fn contrast_value_outside_domain() {
        let mut spec = letters_spec();
        spec.contrast = TreatmentContrast::simple(MethodVariable::uniform("v1", ["A", "B"]), "A", "Z");
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "contrast.control");
    }

    #[test]
    fn nuisance_duplicating_contrast_variable() {
        let mut spec = letters_spec();
        spec.nuisance.push(MethodVariable::uniform("v1", ["X"]));
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "nuisance[3].name");
    }

    #[test]
    fn identical_arms_rejected() {
        let mut spec = letters_spec();
        spec.contrast = TreatmentContrast::simple(MethodVariable::uniform("v1", ["A", "B"]), "A", "A");
        assert_eq!(validate_spec(&spec).violations.len(), 1);
    }

    #[test]
    fn bad_weights_reported() {
        let mut spec = letters_spec();
        spec.nuisance[1] = MethodVariable::weighted("v3", ["D", "I"], vec![0.7, 0.2]);
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "nuisance[1].weights");

        spec.nuisance[1] = MethodVariable::weighted("v3", ["D", "I"], vec![1.5, -0.5]);
        assert!(validate_spec(&spec)
            .violations
            .iter()
            .any(|v| v.path == "nuisance[1].weights[1]"));
    }

    #[test]
    fn duplicate_values_and_empty_domain() {
        let mut spec = letters_spec();
        spec.nuisance[0] = MethodVariable::uniform("v2", ["C", "C"]);
        spec.nuisance.push(MethodVariable::uniform("v5", Vec::<String>::new()));
        let paths: Vec<_> = validate_spec(&spec).violations.into_iter().map(|v| v.path).collect();
        assert!(paths.contains(&"nuisance[0].values[1]".to_string()));
        assert!(paths.contains(&"nuisance[3].values".to_string()));
    }

    #[test]
    fn realisable_exclusion_is_a_violation() {
        let mut spec = letters_spec();
        spec.exclusions.push(Exclusion {
            arm: Some(Arm::Treatment),
            when: [("v2".to_string(), "G".to_string())].into_iter().collect(),
        });
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "exclusions[0]");
    }

    #[test]
    fn exclusion_on_zero_weight_value_is_fine() {
        let mut spec = letters_spec();
        spec.nuisance[1] = MethodVariable::weighted("v3", ["D", "I"], vec![1.0, 0.0]);
        spec.exclusions.push(Exclusion {
            arm: None,
            when: [("v3".to_string(), "I".to_string())].into_iter().collect(),
        });
        assert!(validate_spec(&spec).is_valid());
    }

    #[test]
    fn exclusion_with_unknown_names() {
        let mut spec = letters_spec();
        spec.exclusions.push(Exclusion {
            arm: None,
            when: [("v9".to_string(), "x".to_string())].into_iter().collect(),
        });
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "exclusions[0].when.v9");
    }

    #[test]
    fn validation_is_idempotent() {
        let mut spec = letters_spec();
        spec.nuisance.push(MethodVariable::uniform("v1", ["X", "X"]));
        assert_eq!(validate_spec(&spec), validate_spec(&spec));
    }

    #[test]
    fn combination_counts() {
        assert_eq!(nuisance_combination_count(&letters_spec()).unwrap(), 24);

        let mut one = letters_spec();
        one.nuisance = vec![MethodVariable::uniform("v2", ["C"])];
        assert_eq!(nuisance_combination_count(&one).unwrap(), 1);

        let mut none = letters_spec();
        none.nuisance.clear();
        assert_eq!(nuisance_combination_count(&none).unwrap(), 1);
    }

    #[test]
    fn combination_count_requires_valid_spec() {
        let mut spec = letters_spec();
        spec.nuisance.push(MethodVariable::uniform("v2", ["Z"]));
        assert!(matches!(nuisance_combination_count(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn broad_expansion_sizes() {
        let a = BroadMethodSpec::new(
            "A",
            vec![
                MethodVariable::uniform("a1", ["A", "B"]),
                MethodVariable::uniform("a2", ["C", "G", "H"]),
            ],
        );
        assert_eq!(expand_broad_method(&a).len(), 6);

        let single = BroadMethodSpec::new("S", vec![MethodVariable::uniform("x", ["only"])]);
        assert_eq!(expand_broad_method(&single).len(), 1);
    }

    #[test]
    fn broad_expansion_is_lexicographic() {
        let b = BroadMethodSpec::new(
            "B",
            vec![
                MethodVariable::uniform("p", ["1", "2"]),
                MethodVariable::uniform("q", ["1", "2"]),
            ],
        );
        let order: Vec<(String, String)> = expand_broad_method(&b)
            .into_iter()
            .map(|a| (a["p"].clone(), a["q"].clone()))
            .collect();
        let expected = [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")];
        assert_eq!(order.len(), 4);
        for (got, want) in order.iter().zip(expected) {
            assert_eq!((got.0.as_str(), got.1.as_str()), want);
        }
    }

    #[test]
    fn broad_components_must_be_unique_and_disjoint_from_nuisance() {
        let mut spec = letters_spec();
        spec.contrast = TreatmentContrast::Broad {
            treatment: BroadMethodSpec::new(
                "A",
                vec![MethodVariable::uniform("x", ["1"]), MethodVariable::uniform("x", ["2"])],
            ),
            control: BroadMethodSpec::new("B", vec![MethodVariable::uniform("v2", ["C"])]),
        };
        let paths: Vec<_> = validate_spec(&spec).violations.into_iter().map(|v| v.path).collect();
        assert!(paths.contains(&"contrast.treatment.components[1].name".to_string()));
        assert!(paths.contains(&"nuisance[0].name".to_string()));
    }

    #[test]
    fn uniform_weights_are_exact() {
        for n in 1..=50usize {
            let values: Vec<String> = (0..n).map(|i| format!("m{i}")).collect();
            let var = MethodVariable::uniform("v", values);
            assert!(var.weights.iter().all(|&w| w == 1.0 / n as f64));
            assert!(var.is_uniform());
        }
    }

    #[test]
    fn swapped_contrast_exchanges_labels() {
        let c = letters_spec().contrast;
        let s = c.swapped();
        assert_eq!(s.label(Arm::Treatment), "B");
        assert_eq!(s.label(Arm::Control), "A");
    }
}
