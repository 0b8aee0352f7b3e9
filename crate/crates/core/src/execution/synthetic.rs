//! Response-surface executor with a known treatment effect.
//!
//! ```text
//! loss_m = base + Σ effects(v) + [treated]·(τ + Σ interactions(v) + ζ_split)
//!        + ε_split + ε_m + η_m,arm
//! ```
//!
//! Every noise term is seeded from the split seed, so the two arms of a pair
//! see the same ε terms. With `split_effect_sd` and `arm_noise_sd` at zero
//! (their defaults) the per-system treatment effect is exactly τ plus the
//! interaction terms.
//!
//! `τ` belongs to whichever arm is the treatment. Effects keyed by method
//! value (`effects`) belong to the method and flip sign with the contrast.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::population::{expand_broad_method, Arm, PopulationSpec, TreatmentContrast};
use crate::sampling::ArmedSystem;
use crate::seed::{derive_seed, rng_from_seed};
use crate::seed_path;

use super::{DataPool, Executor, ExecutorOutput, MetricSpec};

/// `variable → value → additive term`.
pub type EffectTable = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SyntheticSurfaceParams {
    pub base_loss: f64,
    /// Main effects of method values, applied to both arms.
    pub effects: EffectTable,
    pub treatment_effect: f64,
    /// Nuisance-dependent shifts of the treatment effect (effect heterogeneity).
    pub interactions: EffectTable,
    /// Per-split random shift of the treatment effect: training-set dependence.
    pub split_effect_sd: f64,
    pub split_noise_sd: f64,
    pub instance_noise_sd: f64,
    /// Arm-specific per-instance noise.
    pub arm_noise_sd: f64,
    pub clip: bool,
}

impl SyntheticSurfaceParams {
    pub fn new(base_loss: f64) -> Self {
        SyntheticSurfaceParams {
            base_loss,
            effects: EffectTable::new(),
            treatment_effect: 0.0,
            interactions: EffectTable::new(),
            split_effect_sd: 0.0,
            split_noise_sd: 0.0,
            instance_noise_sd: 0.0,
            arm_noise_sd: 0.0,
            clip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("base_loss", self.base_loss),
            ("treatment_effect", self.treatment_effect),
            ("split_effect_sd", self.split_effect_sd),
            ("split_noise_sd", self.split_noise_sd),
            ("instance_noise_sd", self.instance_noise_sd),
            ("arm_noise_sd", self.arm_noise_sd),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(Error::Config(format!("synthetic.{name} must be finite")));
            }
            if name.ends_with("_sd") && v < 0.0 {
                return Err(Error::Config(format!("synthetic.{name} must be non-negative")));
            }
        }
        for (table, entries) in [("effects", &self.effects), ("interactions", &self.interactions)] {
            for (var, values) in entries {
                for (value, e) in values {
                    if !e.is_finite() {
                        return Err(Error::Config(format!("synthetic.{table}.{var}.{value} must be finite")));
                    }
                }
            }
        }
        Ok(())
    }

    fn lookup(table: &EffectTable, variable: &str, value: &str) -> f64 {
        table
            .get(variable)
            .and_then(|m| m.get(value))
            .copied()
            .unwrap_or(0.0)
    }

    /// Population treatment effect implied by the surface when nuisance
    /// variables are drawn from their declared weights and broad-method
    /// combinations uniformly (ζ has mean zero).
    pub fn population_ate(&self, spec: &PopulationSpec) -> f64 {
        let interaction: f64 = spec
            .nuisance
            .iter()
            .map(|var| {
                var.values
                    .iter()
                    .zip(&var.weights)
                    .map(|(value, w)| w * Self::lookup(&self.interactions, &var.name, value))
                    .sum::<f64>()
            })
            .sum();
        let arm_main = |arm: Arm| -> f64 {
            match &spec.contrast {
                TreatmentContrast::Simple { variable, .. } => {
                    Self::lookup(&self.effects, &variable.name, spec.contrast.label(arm))
                }
                TreatmentContrast::Broad { treatment, control } => {
                    let broad = if arm == Arm::Treatment { treatment } else { control };
                    let combos = expand_broad_method(broad);
                    let total: f64 = combos
                        .iter()
                        .flat_map(|c| c.iter())
                        .map(|(var, value)| Self::lookup(&self.effects, var, value))
                        .sum();
                    total / combos.len() as f64
                }
            }
        };
        self.treatment_effect + interaction + arm_main(Arm::Treatment) - arm_main(Arm::Control)
    }
}

fn normal_draws<R: Rng>(sd: f64, n: usize, rng: &mut R) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, sd).expect("sd validated non-negative and finite");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Per-instance losses of `armed` on the surface.
pub fn run_synthetic(armed: &ArmedSystem, params: &SyntheticSurfaceParams) -> Vec<f64> {
    let split = &armed.base.split;
    let m = split.n_test();
    let treated = armed.arm == Arm::Treatment;

    // Sum in sorted variable order so both arms add the shared terms identically.
    let main: f64 = armed
        .full_values
        .iter()
        .map(|(var, value)| SyntheticSurfaceParams::lookup(&params.effects, var, value))
        .sum();

    let mut split_rng = rng_from_seed(derive_seed(split.seed, seed_path!["surface", "split"]));
    let split_noise = normal_draws(params.split_noise_sd, 1, &mut split_rng)[0];
    let split_effect = normal_draws(params.split_effect_sd, 1, &mut split_rng)[0];

    let mut instance_rng = rng_from_seed(derive_seed(split.seed, seed_path!["surface", "instance"]));
    let instance_noise = normal_draws(params.instance_noise_sd, m, &mut instance_rng);

    let mut arm_rng = rng_from_seed(derive_seed(
        split.seed,
        seed_path!["surface", "arm", armed.arm.as_str()],
    ));
    let arm_noise = normal_draws(params.arm_noise_sd, m, &mut arm_rng);

    let effect = if treated {
        let interaction: f64 = armed
            .base
            .nuisance_values
            .iter()
            .map(|(var, value)| SyntheticSurfaceParams::lookup(&params.interactions, var, value))
            .sum();
        params.treatment_effect + interaction + split_effect
    } else {
        0.0
    };

    let shared = params.base_loss + main + split_noise;
    (0..m)
        .map(|i| {
            let loss = shared + instance_noise[i] + effect + arm_noise[i];
            if params.clip {
                loss.clamp(0.0, 1.0)
            } else {
                loss
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticSurfaceExecutor {
    pub params: SyntheticSurfaceParams,
}

impl SyntheticSurfaceExecutor {
    pub fn new(params: SyntheticSurfaceParams) -> Self {
        SyntheticSurfaceExecutor { params }
    }
}

impl Executor for SyntheticSurfaceExecutor {
    fn id(&self) -> &str {
        "synthetic_surface"
    }

    fn needs_documents(&self) -> bool {
        false
    }

    fn run(&self, armed: &ArmedSystem, _pool: &DataPool, _metric: &MetricSpec) -> Result<ExecutorOutput> {
        Ok(ExecutorOutput {
            losses: run_synthetic(armed, &self.params),
            degenerate: false,
        })
    }
}
