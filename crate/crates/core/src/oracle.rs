//! Exact evaluation of small finite populations by brute force.
//!
//! The population is every nuisance combination crossed with every split of
//! an explicit [`SplitUniverse`] (and, for broad contrasts, every component
//! combination of the arm). Its EGE is the plain mean over all of them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::ege_hat;
use crate::execution::{execute_many, DataPool, ExecutorRegistry, MetricSpec, RunRecord};
use crate::population::{cross_product, expand_broad_method, nuisance_combination_count, Arm, PopulationSpec, TreatmentContrast};
use crate::sampling::{draw_split, Split, SplitPolicy, SystemConfig};
use crate::seed::derive_seed;
use crate::seed_path;

pub const DEFAULT_BUDGET: u64 = 10_000;

/// Finite stand-in for the data-generating distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitUniverse {
    pub splits: Vec<Split>,
}

impl SplitUniverse {
    pub fn new(splits: Vec<Split>, pool_size: usize) -> Result<Self> {
        if splits.is_empty() {
            return Err(Error::Sizing("split universe is empty".into()));
        }
        if let Some(i) = splits.iter().position(|s| !s.is_valid_for(pool_size)) {
            return Err(Error::Contract(format!("split {i} is not valid for a pool of {pool_size}")));
        }
        Ok(SplitUniverse { splits })
    }

    /// The splits drawn by `draw_split` under each seed.
    pub fn from_seeds(pool_size: usize, policy: &SplitPolicy, seeds: impl IntoIterator<Item = u64>) -> Result<Self> {
        let splits = seeds
            .into_iter()
            .map(|seed| draw_split(pool_size, policy, seed))
            .collect::<Result<Vec<_>>>()?;
        Self::new(splits, pool_size)
    }

    /// Every (train set, test set) pair of the policy's sizes, for tiny pools.
    /// Split seeds are the enumeration ordinals.
    pub fn exhaustive(pool_size: usize, policy: &SplitPolicy, budget: u64) -> Result<Self> {
        let (n_train, n_test) = policy.sizes(pool_size)?;
        let mut splits = Vec::new();
        let mut over = false;
        subsets(&(0..pool_size).collect::<Vec<_>>(), n_train, &mut |train| {
            let rest: Vec<usize> = (0..pool_size).filter(|i| !train.contains(i)).collect();
            subsets(&rest, n_test, &mut |test| {
                if splits.len() as u64 >= budget {
                    over = true;
                    return;
                }
                splits.push(Split {
                    train_indices: train.to_vec(),
                    test_indices: test.to_vec(),
                    seed: splits.len() as u64,
                });
            });
        });
        if over {
            return Err(Error::BudgetExceeded {
                required: u128::from(budget) + 1,
                budget,
            });
        }
        Self::new(splits, pool_size)
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }
}

fn subsets(items: &[usize], k: usize, f: &mut dyn FnMut(&[usize])) {
    fn go(items: &[usize], k: usize, start: usize, acc: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if acc.len() == k {
            f(acc);
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - acc.len() {
                break;
            }
            acc.push(items[i]);
            go(items, k, i + 1, acc, f);
            acc.pop();
        }
    }
    go(items, k, 0, &mut Vec::with_capacity(k), f);
}

/// Every (nuisance combination, split) pair, nuisance-major, with system
/// ids 1, 2, ... in that order.
pub fn enumerate_systems(spec: &PopulationSpec, universe: &SplitUniverse, budget: u64) -> Result<Vec<SystemConfig>> {
    let required = nuisance_combination_count(spec)? * universe.len() as u128;
    if required > u128::from(budget) {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let combos = cross_product(&spec.nuisance);
    let mut out = Vec::with_capacity(required as usize);
    for (c, combo) in combos.iter().enumerate() {
        for (u, split) in universe.splits.iter().enumerate() {
            out.push(SystemConfig {
                system_id: out.len() + 1,
                nuisance_values: combo.clone(),
                split: split.clone(),
                system_seed: derive_seed(split.seed, seed_path!["enum", c, u]),
            });
        }
    }
    Ok(out)
}

fn require_uniform(spec: &PopulationSpec) -> Result<()> {
    match spec.nuisance.iter().find(|v| !v.is_uniform()) {
        Some(v) => Err(Error::Contract(format!(
            "exhaustive evaluation weights combinations uniformly; `{}` has non-uniform weights",
            v.name
        ))),
        None => Ok(()),
    }
}

/// Everything an exact evaluation needs.
#[derive(Clone, Copy)]
pub struct OracleContext<'a> {
    pub spec: &'a PopulationSpec,
    pub registry: &'a ExecutorRegistry,
    pub pool: &'a DataPool,
    pub universe: &'a SplitUniverse,
    pub metric: &'a MetricSpec,
    pub budget: u64,
}

/// Run records of one arm over the whole finite population. For broad
/// contrasts each system is crossed with every combination of the arm, and
/// ids are renumbered over the crossed units.
pub fn exhaustive_records(ctx: OracleContext<'_>, arm: Arm) -> Result<Vec<RunRecord>> {
    require_uniform(ctx.spec)?;
    let systems = enumerate_systems(ctx.spec, ctx.universe, ctx.budget)?;
    let armed = match &ctx.spec.contrast {
        TreatmentContrast::Simple { .. } => {
            crate::sampling::assign_arms(&systems, crate::sampling::Design::Exhaustive, &ctx.spec.contrast, 0)
                .into_iter()
                .filter(|a| a.arm == arm)
                .collect::<Vec<_>>()
        }
        TreatmentContrast::Broad { treatment, control } => {
            let broad = if arm == Arm::Treatment { treatment } else { control };
            let combos = expand_broad_method(broad);
            let required = systems.len() as u128 * combos.len() as u128;
            if required > u128::from(ctx.budget) {
                return Err(Error::BudgetExceeded {
                    required,
                    budget: ctx.budget,
                });
            }
            let mut units = Vec::with_capacity(required as usize);
            for sys in &systems {
                for combo in &combos {
                    let mut base = sys.clone();
                    base.system_id = units.len() + 1;
                    let mut full_values = base.nuisance_values.clone();
                    full_values.extend(combo.clone());
                    units.push(crate::sampling::ArmedSystem { base, arm, full_values });
                }
            }
            units
        }
    };
    execute_many(&armed, ctx.pool, ctx.registry, &ctx.spec.executor_id, ctx.metric)
        .into_iter()
        .collect()
}

/// Exact EGE of `arm` over the finite population.
pub fn exact_ege(ctx: OracleContext<'_>, arm: Arm) -> Result<f64> {
    let records = exhaustive_records(ctx, arm)?;
    Ok(ege_hat(&records, ctx.spec.contrast.label(arm))?.value)
}

/// Exact ATE: treatment EGE minus control EGE.
pub fn exact_ate(ctx: OracleContext<'_>) -> Result<f64> {
    Ok(exact_ege(ctx, Arm::Treatment)? - exact_ege(ctx, Arm::Control)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execution::{builtin_registry, SyntheticSurfaceParams};
    use crate::population::fixtures::letters_spec;

    fn universe(n: usize) -> SplitUniverse {
        let spec = letters_spec();
        SplitUniverse::from_seeds(spec.data_source.pool_size(), &spec.split_policy, 1..=n as u64).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        let spec = letters_spec();
        let systems = enumerate_systems(&spec, &universe(5), DEFAULT_BUDGET).unwrap();
        assert_eq!(systems.len(), 120);
        assert_eq!(systems[0].system_id, 1);
        assert_eq!(systems[119].system_id, 120);
        let unique: std::collections::BTreeSet<_> = systems
            .iter()
            .map(|s| (s.nuisance_values.clone(), s.split.seed))
            .collect();
        assert_eq!(unique.len(), 120);
    }

    #[test]
    fn singleton_population() {
        let mut spec = letters_spec();
        spec.nuisance = vec![crate::population::MethodVariable::uniform("v2", ["C"])];
        assert_eq!(enumerate_systems(&spec, &universe(1), DEFAULT_BUDGET).unwrap().len(), 1);
    }

    #[test]
    fn budget_guard() {
        let err = enumerate_systems(&letters_spec(), &universe(5), 10).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { required: 120, budget: 10 }));
    }

    #[test]
    fn exhaustive_universe_of_tiny_pool() {
        let u = SplitUniverse::exhaustive(4, &SplitPolicy::sized(2, 1), DEFAULT_BUDGET).unwrap();
        // C(4,2) train sets × 2 remaining test choices.
        assert_eq!(u.len(), 12);
        assert!(SplitUniverse::exhaustive(12, &SplitPolicy::fraction(0.5), 100).is_err());
    }

    #[test]
    fn synthetic_exact_ate_is_tau() {
        let spec = letters_spec();
        let mut p = SyntheticSurfaceParams::new(0.3);
        p.treatment_effect = 0.05;
        let reg = builtin_registry(p);
        let pool = DataPool::index_only(spec.data_source.pool_size());
        let u = universe(5);
        let metric = MetricSpec::zero_one_error();
        let ctx = OracleContext {
            spec: &spec,
            registry: &reg,
            pool: &pool,
            universe: &u,
            metric: &metric,
            budget: DEFAULT_BUDGET,
        };
        assert!((exact_ate(ctx).unwrap() - 0.05).abs() < 1e-12);

        // τ follows the arm; a value-keyed effect follows the method, so
        // swapping the contrast flips its sign.
        let mut p = SyntheticSurfaceParams::new(0.3);
        p.effects.insert("v1".into(), [("A".to_string(), 0.05), ("B".to_string(), 0.0)].into_iter().collect());
        let reg = builtin_registry(p);
        let ctx = OracleContext { registry: &reg, ..ctx };
        let swapped = PopulationSpec {
            contrast: spec.contrast.swapped(),
            ..spec.clone()
        };
        let ctx_swapped = OracleContext { spec: &swapped, ..ctx };
        assert_eq!(exact_ate(ctx_swapped).unwrap(), -exact_ate(ctx).unwrap());
    }

    #[test]
    fn non_uniform_weights_rejected() {
        let mut spec = letters_spec();
        spec.nuisance[1] = crate::population::MethodVariable::weighted("v3", ["D", "I"], vec![0.9, 0.1]);
        let reg = builtin_registry(SyntheticSurfaceParams::new(0.0));
        let pool = DataPool::index_only(20);
        let u = universe(2);
        let metric = MetricSpec::zero_one_error();
        let ctx = OracleContext {
            spec: &spec,
            registry: &reg,
            pool: &pool,
            universe: &u,
            metric: &metric,
            budget: DEFAULT_BUDGET,
        };
        assert!(matches!(exact_ege(ctx, Arm::Control), Err(Error::Contract(_))));
    }
}
