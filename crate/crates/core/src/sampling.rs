//! Seeded i.i.d. sampling of processing systems and arm assignment.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::SplitUniverse;
use crate::population::{expand_broad_method, Arm, Assignment, MethodVariable, PopulationSpec, TreatmentContrast};
use crate::seed::{derive_seed, rng_from_seed};
use crate::seed_path;

/// How a pool of instances is cut into one training and one test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitPolicy {
    pub train_fraction: f64,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub disjoint: bool,
}

impl SplitPolicy {
    /// Train on `fraction` of the pool, test on the rest.
    pub fn fraction(train_fraction: f64) -> Self {
        SplitPolicy {
            train_fraction,
            train_size: None,
            test_size: None,
            disjoint: true,
        }
    }

    pub fn sized(train_size: usize, test_size: usize) -> Self {
        SplitPolicy {
            train_fraction: 0.5,
            train_size: Some(train_size),
            test_size: Some(test_size),
            disjoint: true,
        }
    }

    /// `(N, M)` for a pool of `pool_size` instances.
    pub fn sizes(&self, pool_size: usize) -> Result<(usize, usize)> {
        if !self.disjoint {
            return Err(Error::Sizing("only disjoint train/test splits are supported".into()));
        }
        if pool_size < 2 {
            return Err(Error::Sizing(format!("pool of {pool_size} instances cannot be split")));
        }
        let n_train = match self.train_size {
            Some(n) => n,
            None => {
                let f = self.train_fraction;
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Sizing(format!("train_fraction {f} is not in (0, 1)")));
                }
                (f * pool_size as f64).round() as usize
            }
        };
        let n_test = match self.test_size {
            Some(m) => m,
            None => pool_size.saturating_sub(n_train),
        };
        if n_train < 1 || n_test < 1 {
            return Err(Error::Sizing(format!(
                "split of a {pool_size}-instance pool gives N={n_train}, M={n_test}; both must be at least 1"
            )));
        }
        if n_train + n_test > pool_size {
            return Err(Error::Sizing(format!(
                "N={n_train} plus M={n_test} exceeds the pool of {pool_size}"
            )));
        }
        Ok((n_train, n_test))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl Split {
    pub fn n_train(&self) -> usize {
        self.train_indices.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_indices.len()
    }

    pub fn is_valid_for(&self, pool_size: usize) -> bool {
        let mut seen = vec![false; pool_size];
        for &i in self.train_indices.iter().chain(&self.test_indices) {
            if i >= pool_size || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        !self.train_indices.is_empty() && !self.test_indices.is_empty()
    }
}

/// Random permutation of the pool under `seed`; the first N indices train,
/// the next M test. Both index lists are returned sorted.
pub fn draw_split(pool_size: usize, policy: &SplitPolicy, seed: u64) -> Result<Split> {
    let (n_train, n_test) = policy.sizes(pool_size)?;
    let mut perm: Vec<usize> = (0..pool_size).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let mut train_indices = perm[..n_train].to_vec();
    let mut test_indices = perm[n_train..n_train + n_test].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(Split {
        train_indices,
        test_indices,
        seed,
    })
}

/// One sampled processing system, before an arm is attached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    /// 1-based ordinal within the sample.
    pub system_id: usize,
    pub nuisance_values: Assignment,
    pub split: Split,
    pub system_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// Every system runs under both arms.
    Paired,
    /// Every system runs under one arm chosen by a fair coin.
    Independent,
    /// The whole finite population is enumerated and run under both arms.
    Exhaustive,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Paired => "paired",
            Design::Independent => "independent",
            Design::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A system with its arm attached: everything an executor needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmedSystem {
    pub base: SystemConfig,
    pub arm: Arm,
    /// Nuisance values plus the arm's method value(s).
    pub full_values: Assignment,
}

fn draw_value<R: Rng>(var: &MethodVariable, rng: &mut R) -> Result<String> {
    let dist = WeightedIndex::new(&var.weights)
        .map_err(|e| Error::Contract(format!("weights of `{}`: {e}", var.name)))?;
    Ok(var.values[dist.sample(rng)].clone())
}

fn draw_nuisance(spec: &PopulationSpec, master_seed: u64, system_id: usize) -> Result<Assignment> {
    let mut rng = rng_from_seed(derive_seed(master_seed, seed_path!["sys", system_id, "nuisance"]));
    spec.nuisance
        .iter()
        .map(|var| Ok((var.name.clone(), draw_value(var, &mut rng)?)))
        .collect()
}

/// Draws `count` systems i.i.d. (with replacement) from the population.
///
/// System `i` uses the seed paths `["sys", i, ...]` only, so growing the sample
/// leaves the first systems untouched.
pub fn sample_systems(spec: &PopulationSpec, count: usize, master_seed: u64) -> Result<Vec<SystemConfig>> {
    spec.ensure_valid()?;
    if count == 0 {
        return Err(Error::Sizing("sample needs at least one system".into()));
    }
    let pool_size = spec.data_source.pool_size();
    (1..=count)
        .map(|id| {
            let split_seed = derive_seed(master_seed, seed_path!["sys", id, "split"]);
            Ok(SystemConfig {
                system_id: id,
                nuisance_values: draw_nuisance(spec, master_seed, id)?,
                split: draw_split(pool_size, &spec.split_policy, split_seed)?,
                system_seed: derive_seed(master_seed, seed_path!["sys", id]),
            })
        })
        .collect()
}

/// Like [`sample_systems`], but each system's split is drawn uniformly from a
/// fixed universe, so the sample targets the same finite population that the
/// oracle enumerates.
pub fn sample_systems_from_universe(
    spec: &PopulationSpec,
    universe: &SplitUniverse,
    count: usize,
    master_seed: u64,
) -> Result<Vec<SystemConfig>> {
    spec.ensure_valid()?;
    if count == 0 {
        return Err(Error::Sizing("sample needs at least one system".into()));
    }
    (1..=count)
        .map(|id| {
            let mut rng = rng_from_seed(derive_seed(master_seed, seed_path!["sys", id, "split"]));
            let split = universe.splits[rng.random_range(0..universe.splits.len())].clone();
            Ok(SystemConfig {
                system_id: id,
                nuisance_values: draw_nuisance(spec, master_seed, id)?,
                split,
                system_seed: derive_seed(master_seed, seed_path!["sys", id]),
            })
        })
        .collect()
}

fn arm_values(
    config: &SystemConfig,
    contrast: &TreatmentContrast,
    arm: Arm,
    seed: u64,
) -> Assignment {
    let mut values = config.nuisance_values.clone();
    match contrast {
        TreatmentContrast::Simple {
            variable,
            treatment,
            control,
        } => {
            let v = if arm == Arm::Treatment { treatment } else { control };
            values.insert(variable.name.clone(), v.clone());
        }
        TreatmentContrast::Broad { treatment, control } => {
            let broad = if arm == Arm::Treatment { treatment } else { control };
            let combos = expand_broad_method(broad);
            let mut rng = rng_from_seed(derive_seed(
                seed,
                seed_path!["combo", config.system_id, arm.as_str()],
            ));
            values.extend(combos[rng.random_range(0..combos.len())].clone());
        }
    }
    values
}

/// Attaches arms to sampled systems.
///
/// Paired (and exhaustive) designs emit treatment then control for every
/// system; independent designs flip one fair coin per system. Broad contrasts
/// draw one component combination per armed system, independently per arm.
pub fn assign_arms(
    configs: &[SystemConfig],
    design: Design,
    contrast: &TreatmentContrast,
    seed: u64,
) -> Vec<ArmedSystem> {
    let mut out = Vec::with_capacity(configs.len() * 2);
    for config in configs {
        let arms: &[Arm] = match design {
            Design::Paired | Design::Exhaustive => &[Arm::Treatment, Arm::Control],
            Design::Independent => {
                let mut rng = rng_from_seed(derive_seed(seed, seed_path!["coin", config.system_id]));
                if rng.random_bool(0.5) {
                    &[Arm::Treatment]
                } else {
                    &[Arm::Control]
                }
            }
        };
        for &arm in arms {
            out.push(ArmedSystem {
                base: config.clone(),
                arm,
                full_values: arm_values(config, contrast, arm, seed),
            });
        }
    }
    out
}
