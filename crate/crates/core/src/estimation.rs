//! Expected-generalization-error and treatment-effect estimators.
//!
//! The EGE estimate is the unweighted mean over systems of each system's mean
//! test loss. Systems count equally regardless of their test-set size; pooling
//! all test points instead would weight large test sets more.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{MetricSpec, RunRecord};
use crate::fmt17;
use crate::inference::TestResult;
use crate::numeric::{compensated_sum, mean, normal_critical_value, quantile_sorted, standard_error};
use crate::population::Arm;
use crate::sampling::Design;
use crate::seed::counter_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EGEEstimate {
    pub method_label: String,
    pub arm: Arm,
    #[serde(serialize_with = "fmt17::f64")]
    pub value: f64,
    pub systems: usize,
    /// `None` with fewer than two systems.
    #[serde(serialize_with = "fmt17::opt")]
    pub standard_error: Option<f64>,
    /// Ordered by system id.
    #[serde(serialize_with = "fmt17::vec")]
    pub per_system_means: Vec<f64>,
}

/// EGE estimate from the run records of one arm.
pub fn ege_hat(records: &[RunRecord], method_label: &str) -> Result<EGEEstimate> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("EGE estimate needs at least one run record".into()))?;
    if let Some(other) = records.iter().find(|r| r.arm != first.arm) {
        return Err(Error::Contract(format!(
            "EGE estimate over mixed arms ({} and {})",
            first.arm, other.arm
        )));
    }
    let mut by_system: Vec<(usize, f64)> = records.iter().map(|r| (r.system_id, r.mean_loss)).collect();
    by_system.sort_by_key(|&(id, _)| id);
    if let Some(w) = by_system.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Contract(format!("system {} appears twice in one arm", w[0].0)));
    }
    let per_system_means: Vec<f64> = by_system.into_iter().map(|(_, m)| m).collect();
    Ok(EGEEstimate {
        method_label: method_label.to_string(),
        arm: first.arm,
        value: mean(&per_system_means),
        systems: per_system_means.len(),
        standard_error: standard_error(&per_system_means),
        per_system_means,
    })
}

/// Individual treatment effect of one paired system.
pub fn ite_hat(treatment: &RunRecord, control: &RunRecord) -> Result<f64> {
    if treatment.system_id != control.system_id {
        return Err(Error::Contract(format!(
            "pairing system {} with system {}",
            treatment.system_id, control.system_id
        )));
    }
    if treatment.arm != Arm::Treatment || control.arm != Arm::Control {
        return Err(Error::Contract(format!(
            "system {}: expected treatment/control, got {}/{}",
            treatment.system_id, treatment.arm, control.arm
        )));
    }
    if treatment.nuisance_values != control.nuisance_values || treatment.split_seed != control.split_seed {
        return Err(Error::Contract(format!(
            "system {}: arms do not share a base configuration",
            treatment.system_id
        )));
    }
    Ok(treatment.mean_loss - control.mean_loss)
}

/// ITEs of a paired experiment, ordered by system id.
pub fn paired_ites(treatment: &[RunRecord], control: &[RunRecord]) -> Result<Vec<f64>> {
    let controls: BTreeMap<usize, &RunRecord> = control.iter().map(|r| (r.system_id, r)).collect();
    if controls.len() != treatment.len() || control.len() != treatment.len() {
        return Err(Error::Contract("paired design needs each system once per arm".into()));
    }
    let mut sorted: Vec<&RunRecord> = treatment.iter().collect();
    sorted.sort_by_key(|r| r.system_id);
    sorted
        .into_iter()
        .map(|t| {
            let c = controls
                .get(&t.system_id)
                .ok_or_else(|| Error::Contract(format!("system {} has no control run", t.system_id)))?;
            ite_hat(t, c)
        })
        .collect()
}

/// Difference of the two arms' EGE estimates.
pub fn ate_hat(ege_a: &EGEEstimate, ege_b: &EGEEstimate) -> f64 {
    ege_a.value - ege_b.value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Normal,
    BootstrapOverSystems,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(serialize_with = "fmt17::f64")]
    pub lo: f64,
    #[serde(serialize_with = "fmt17::f64")]
    pub hi: f64,
    #[serde(serialize_with = "fmt17::f64")]
    pub level: f64,
    pub method: IntervalMethod,
}

/// What the interval is computed from.
#[derive(Debug, Clone, Copy)]
pub enum EffectSample<'a> {
    /// Per-system ITEs of a paired design.
    Paired(&'a [f64]),
    /// Per-system means of the treatment and control groups.
    Independent { treatment: &'a [f64], control: &'a [f64] },
}

/// Uncertainty interval for the ATE. Bootstrap resamples systems, never test points.
pub fn ate_interval(
    sample: EffectSample<'_>,
    level: f64,
    method: IntervalMethod,
    resamples: usize,
    seed: u64,
) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Contract(format!("interval level {level} is not in (0, 1)")));
    }
    match sample {
        EffectSample::Paired(ites) if ites.len() < 2 => {
            return Err(Error::Sizing(format!("interval needs at least 2 paired systems, got {}", ites.len())))
        }
        EffectSample::Independent { treatment, control } if treatment.len() < 2 || control.len() < 2 => {
            return Err(Error::Sizing(format!(
                "interval needs at least 2 systems per group, got {} and {}",
                treatment.len(),
                control.len()
            )))
        }
        _ => {}
    }
    let (lo, hi) = match method {
        IntervalMethod::Normal => {
            let z = normal_critical_value(level);
            let (center, se) = match sample {
                EffectSample::Paired(ites) => (mean(ites), standard_error(ites).unwrap_or(0.0)),
                EffectSample::Independent { treatment, control } => {
                    let se_t = standard_error(treatment).unwrap_or(0.0);
                    let se_c = standard_error(control).unwrap_or(0.0);
                    (mean(treatment) - mean(control), (se_t * se_t + se_c * se_c).sqrt())
                }
            };
            (center - z * se, center + z * se)
        }
        IntervalMethod::BootstrapOverSystems => {
            if resamples == 0 {
                return Err(Error::Sizing("bootstrap interval needs at least one resample".into()));
            }
            let mut stats: Vec<f64> = (0..resamples as u64)
                .map(|k| {
                    let mut rng = counter_rng(seed, k);
                    match sample {
                        EffectSample::Paired(ites) => resample_mean(ites, &mut rng),
                        EffectSample::Independent { treatment, control } => {
                            resample_mean(treatment, &mut rng) - resample_mean(control, &mut rng)
                        }
                    }
                })
                .collect();
            stats.sort_by(f64::total_cmp);
            let tail = (1.0 - level) / 2.0;
            (quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail))
        }
    };
    Ok(Interval { lo, hi, level, method })
}

fn resample_mean<R: Rng>(values: &[f64], rng: &mut R) -> f64 {
    let draw: Vec<f64> = (0..values.len()).map(|_| values[rng.random_range(0..values.len())]).collect();
    compensated_sum(&draw) / values.len() as f64
}

/// Machine-readable outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ATEReport {
    pub design: Design,
    pub metric: MetricSpec,
    pub treatment_label: String,
    pub control_label: String,
    pub ege_treatment: EGEEstimate,
    pub ege_control: EGEEstimate,
    #[serde(serialize_with = "fmt17::f64")]
    pub ate: f64,
    /// Paired designs only; omitted otherwise.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "fmt17::opt_vec"
    )]
    pub ites: Option<Vec<f64>>,
    /// Omitted for exhaustive designs, whose ATE is exact.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_interval: Option<Interval>,
    pub tests: Vec<TestResult>,
    pub degenerate_runs: usize,
    pub master_seed: u64,
    pub spec_digest: String,
}


#[cfg(test)]
mod tests {
    use super::fixtures::record;
    use super::*;

    #[test]
    fn mean_of_means_not_pooled() {
        let recs = [record(1, Arm::Treatment, &[0.0, 1.0]), record(2, Arm::Treatment, &[1.0, 1.0, 1.0, 1.0])];
        let e = ege_hat(&recs, "A").unwrap();
        assert_eq!(e.value, 0.75);
        assert_ne!(e.value, 5.0 / 6.0);
        assert_eq!(e.systems, 2);
    }

    #[test]
    fn single_system() {
        let e = ege_hat(&[record(1, Arm::Control, &[1.0, 0.0, 1.0, 1.0])], "B").unwrap();
        assert_eq!(e.value, 0.75);
        assert_eq!(e.standard_error, None);
    }

    #[test]
    fn all_zero_losses() {
        let recs: Vec<_> = (1..=4).map(|i| record(i, Arm::Control, &[0.0, 0.0])).collect();
        let e = ege_hat(&recs, "B").unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.standard_error, Some(0.0));
    }

    #[test]
    fn mixed_arms_and_duplicates_rejected() {
        let mixed = [record(1, Arm::Control, &[0.0]), record(2, Arm::Treatment, &[0.0])];
        assert!(matches!(ege_hat(&mixed, "x"), Err(Error::Contract(_))));
        let dup = [record(1, Arm::Control, &[0.0]), record(1, Arm::Control, &[1.0])];
        assert!(matches!(ege_hat(&dup, "x"), Err(Error::Contract(_))));
        assert!(ege_hat(&[], "x").is_err());
    }

    #[test]
    fn ite_subtracts_means() {
        let t = record(3, Arm::Treatment, &[0.2]);
        let c = record(3, Arm::Control, &[0.35]);
        assert!((ite_hat(&t, &c).unwrap() - (-0.15)).abs() < 1e-15);
        let same = record(3, Arm::Control, &[0.2]);
        assert_eq!(ite_hat(&t, &same).unwrap(), 0.0);
    }

    #[test]
    fn ite_rejects_mismatched_pairs() {
        let t = record(1, Arm::Treatment, &[0.2]);
        let c = record(2, Arm::Control, &[0.2]);
        assert!(matches!(ite_hat(&t, &c), Err(Error::Contract(_))));
        let wrong_arm = record(1, Arm::Treatment, &[0.2]);
        assert!(matches!(ite_hat(&t, &wrong_arm), Err(Error::Contract(_))));
        let mut other_split = record(1, Arm::Control, &[0.2]);
        other_split.split_seed = 99;
        assert!(matches!(ite_hat(&t, &other_split), Err(Error::Contract(_))));
    }

    #[test]
    fn ate_antisymmetry() {
        let mk = |v: f64, arm| EGEEstimate {
            method_label: String::new(),
            arm,
            value: v,
            systems: 1,
            standard_error: None,
            per_system_means: vec![v],
        };
        let a = mk(0.30, Arm::Treatment);
        let b = mk(0.25, Arm::Control);
        assert!((ate_hat(&a, &b) - 0.05).abs() < 1e-15);
        assert_eq!(ate_hat(&b, &a), -ate_hat(&a, &b));
        assert_eq!(ate_hat(&a, &a), 0.0);
    }

    #[test]
    fn permutation_invariance() {
        let mut recs: Vec<_> = (1..=9)
            .map(|i| record(i, Arm::Treatment, &[i as f64 * 0.1, 0.37 / i as f64]))
            .collect();
        let e1 = ege_hat(&recs, "A").unwrap();
        recs.reverse();
        recs.swap(0, 4);
        let e2 = ege_hat(&recs, "A").unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn normal_interval_zero_variance() {
        let ites = [0.3; 5];
        let iv = ate_interval(EffectSample::Paired(&ites), 0.95, IntervalMethod::Normal, 0, 0).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.3, 0.3));
    }

    #[test]
    fn normal_interval_unit_se() {
        let iv = ate_interval(EffectSample::Paired(&[-1.0, 1.0]), 0.95, IntervalMethod::Normal, 0, 0).unwrap();
        let z = 1.959_963_984_540_054;
        assert!((iv.lo + z).abs() < 1e-9 && (iv.hi - z).abs() < 1e-9);
        assert!((iv.hi - 1.96).abs() < 1e-3);
    }

    #[test]
    fn independent_normal_interval() {
        let t = [1.0, 3.0];
        let c = [0.0, 2.0];
        let iv = ate_interval(
            EffectSample::Independent { treatment: &t, control: &c },
            0.95,
            IntervalMethod::Normal,
            0,
            0,
        )
        .unwrap();
        // SE_t = SE_c = 1, combined √2.
        let half = normal_critical_value(0.95) * 2f64.sqrt();
        assert!((iv.lo - (1.0 - half)).abs() < 1e-12);
        assert!((iv.hi - (1.0 + half)).abs() < 1e-12);
    }

    #[test]
    fn too_few_systems() {
        assert!(matches!(
            ate_interval(EffectSample::Paired(&[1.0]), 0.95, IntervalMethod::Normal, 0, 0),
            Err(Error::Sizing(_))
        ));
        assert!(matches!(
            ate_interval(
                EffectSample::Independent { treatment: &[1.0, 2.0], control: &[1.0] },
                0.95,
                IntervalMethod::BootstrapOverSystems,
                100,
                0
            ),
            Err(Error::Sizing(_))
        ));
    }

    #[test]
    fn bootstrap_interval_is_seeded() {
        let ites = [0.1, -0.2, 0.3, 0.05, 0.0, 0.12];
        let a = ate_interval(EffectSample::Paired(&ites), 0.9, IntervalMethod::BootstrapOverSystems, 500, 3).unwrap();
        let b = ate_interval(EffectSample::Paired(&ites), 0.9, IntervalMethod::BootstrapOverSystems, 500, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= mean(&ites) && mean(&ites) <= a.hi);
    }
}
