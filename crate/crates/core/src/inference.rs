//! Resampling hypothesis tests.
//!
//! [`shifted_bootstrap_test`] is the common single-test-set baseline: it
//! resamples test instances of one trained pair of models, so it only sees
//! test-set noise. [`paired_system_test`] and [`independent_system_test`]
//! resample systems, which also carries training-set and method variation.
//!
//! Small inputs are enumerated exhaustively, so their p-values are exact.
//! Resampled iterations use counter-indexed streams and do not depend on
//! evaluation order.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt17;
use crate::numeric::{compensated_sum, mean};
use crate::seed::counter_rng;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Largest resample space enumerated automatically by the bootstrap and
/// relabeling tests.
pub const EXHAUSTIVE_LIMIT: u128 = 100_000;
/// Sign-flip tests enumerate all 2^S patterns up to this many systems.
pub const SIGN_FLIP_EXHAUSTIVE_MAX_SYSTEMS: usize = 20;

/// Relative slack under which a resampled statistic counts as tying the
/// observed one. Ties count toward the rejection region.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    /// Reject for large positive statistics.
    Greater,
    Less,
}

impl Sidedness {
    fn extreme(self, stat: f64, observed: f64) -> bool {
        let eps = TIE_TOLERANCE * (1.0 + observed.abs());
        match self {
            Sidedness::TwoSided => stat.abs() >= observed.abs() - eps,
            Sidedness::Greater => stat >= observed - eps,
            Sidedness::Less => stat <= observed + eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enumeration {
    /// Enumerate when the space is small (or no larger than the resample count).
    Auto,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedMode {
    SignFlipPermutation,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// `None` uses the test's default sidedness.
    pub sidedness: Option<Sidedness>,
    pub enumeration: Enumeration,
}

impl TestConfig {
    pub fn new(seed: u64) -> Self {
        TestConfig {
            resamples: DEFAULT_RESAMPLES,
            alpha: DEFAULT_ALPHA,
            seed,
            sidedness: None,
            enumeration: Enumeration::Auto,
        }
    }

    pub fn with_resamples(mut self, resamples: usize) -> Self {
        self.resamples = resamples;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_sidedness(mut self, sidedness: Sidedness) -> Self {
        self.sidedness = Some(sidedness);
        self
    }

    pub fn with_enumeration(mut self, enumeration: Enumeration) -> Self {
        self.enumeration = enumeration;
        self
    }

    fn check(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::Sizing("resample count K must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Contract(format!("alpha {} is not in (0, 1)", self.alpha)));
        }
        Ok(())
    }

    fn enumerate(&self, space: Option<u128>, limit: u128) -> bool {
        match (self.enumeration, space) {
            (Enumeration::Never, _) | (_, None) => false,
            (Enumeration::Auto, Some(n)) => n <= limit || n <= self.resamples as u128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_id: String,
    #[serde(serialize_with = "fmt17::f64")]
    pub statistic: f64,
    #[serde(serialize_with = "fmt17::f64")]
    pub p_value: f64,
    /// Resamples evaluated: the full space size when exhaustive.
    pub k: u64,
    pub exhaustive: bool,
    pub sidedness: Sidedness,
    #[serde(serialize_with = "fmt17::f64")]
    pub alpha: f64,
    pub reject: bool,
    pub seed: u64,
}

impl TestResult {
    fn new(test_id: &str, statistic: f64, extreme: u64, k: u64, exhaustive: bool, side: Sidedness, cfg: &TestConfig) -> Self {
        let p_value = extreme as f64 / k as f64;
        TestResult {
            test_id: test_id.to_string(),
            statistic,
            p_value,
            k,
            exhaustive,
            sidedness: side,
            alpha: cfg.alpha,
            reject: p_value < cfg.alpha,
            seed: cfg.seed,
        }
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<u128> {
    (base as u128).checked_pow(u32::try_from(exp).ok()?)
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Calls `f` with every index tuple in `[0, n)^n`, odometer order.
fn for_each_tuple(n: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; n];
    loop {
        f(&idx);
        let mut pos = n;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn difference_of_means(a: &[f64], b: &[f64]) -> f64 {
    mean(a) - mean(b)
}

/// Bootstrap distribution of resampled statistics under one index scheme,
/// before shifting. Returns `(stats, exhaustive)`.
fn bootstrap_stats(n: usize, cfg: &TestConfig, stat: impl Fn(&[usize]) -> f64) -> (Vec<f64>, bool) {
    if cfg.enumerate(checked_pow(n, n), EXHAUSTIVE_LIMIT) {
        let mut stats = Vec::new();
        for_each_tuple(n, |idx| stats.push(stat(idx)));
        (stats, true)
    } else {
        let stats = (0..cfg.resamples as u64)
            .map(|k| {
                let mut rng = counter_rng(cfg.seed, k);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                stat(&idx)
            })
            .collect();
        (stats, false)
    }
}

fn shift_to_zero(stats: &mut [f64]) {
    let center = mean(stats);
    for s in stats.iter_mut() {
        *s -= center;
    }
}

/// Shifted (zero-centred) bootstrap distribution of the difference in mean
/// loss on one test set, as used by [`shifted_bootstrap_test`].
pub fn shifted_bootstrap_distribution(losses_a: &[f64], losses_b: &[f64], cfg: &TestConfig) -> Result<(Vec<f64>, bool)> {
    cfg.check()?;
    if losses_a.len() != losses_b.len() {
        return Err(Error::Contract(format!(
            "test-set losses differ in length: {} vs {}",
            losses_a.len(),
            losses_b.len()
        )));
    }
    if losses_a.is_empty() {
        return Err(Error::Sizing("bootstrap test needs at least one test instance".into()));
    }
    let (mut stats, exhaustive) = bootstrap_stats(losses_a.len(), cfg, |idx| {
        let a: Vec<f64> = idx.iter().map(|&i| losses_a[i]).collect();
        let b: Vec<f64> = idx.iter().map(|&i| losses_b[i]).collect();
        difference_of_means(&a, &b)
    });
    shift_to_zero(&mut stats);
    Ok((stats, exhaustive))
}

/// Single-test-set bootstrap test of two models' per-instance losses.
///
/// δ = mean(a) − mean(b); K resamples of the M test instances (with
/// replacement) give δ_k, shifted by their mean; p is the share of shifted
/// values at least as extreme as δ. One-sided (`Greater`) by default.
pub fn shifted_bootstrap_test(losses_a: &[f64], losses_b: &[f64], cfg: &TestConfig) -> Result<TestResult> {
    let side = cfg.sidedness.unwrap_or(Sidedness::Greater);
    let observed = difference_of_means(losses_a, losses_b);
    let (shifted, exhaustive) = shifted_bootstrap_distribution(losses_a, losses_b, cfg)?;
    let extreme = shifted.iter().filter(|&&s| side.extreme(s, observed)).count() as u64;
    Ok(TestResult::new(
        "shifted_bootstrap",
        observed,
        extreme,
        shifted.len() as u64,
        exhaustive,
        side,
        cfg,
    ))
}

fn signed_mean(values: &[f64], signs: impl Fn(usize) -> bool) -> f64 {
    let terms: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &x)| if signs(i) { -x } else { x })
        .collect();
    compensated_sum(&terms) / values.len() as f64
}

/// System-level test for paired designs on per-system ITEs. Two-sided by default.
pub fn paired_system_test(ites: &[f64], mode: PairedMode, cfg: &TestConfig) -> Result<TestResult> {
    cfg.check()?;
    let s = ites.len();
    if s < 2 {
        return Err(Error::Sizing(format!("paired test needs at least 2 systems, got {s}")));
    }
    let side = cfg.sidedness.unwrap_or(Sidedness::TwoSided);
    let observed = signed_mean(ites, |_| false);
    match mode {
        PairedMode::SignFlipPermutation => {
            let space = if s < 128 { Some(1u128 << s) } else { None };
            let exhaustive = cfg.enumeration == Enumeration::Auto
                && (s <= SIGN_FLIP_EXHAUSTIVE_MAX_SYSTEMS || space.is_some_and(|n| n <= cfg.resamples as u128));
            let (extreme, k) = if exhaustive {
                let patterns = 1u64 << s;
                let extreme = (0..patterns)
                    .filter(|&mask| side.extreme(signed_mean(ites, |i| mask >> i & 1 == 1), observed))
                    .count() as u64;
                (extreme, patterns)
            } else {
                let extreme = (0..cfg.resamples as u64)
                    .filter(|&k| {
                        let mut rng = counter_rng(cfg.seed, k);
                        let flips: Vec<bool> = (0..s).map(|_| rng.random_bool(0.5)).collect();
                        side.extreme(signed_mean(ites, |i| flips[i]), observed)
                    })
                    .count() as u64;
                (extreme, cfg.resamples as u64)
            };
            Ok(TestResult::new("paired_sign_flip", observed, extreme, k, exhaustive, side, cfg))
        }
        PairedMode::Bootstrap => {
            let (mut stats, exhaustive) = bootstrap_stats(s, cfg, |idx| {
                let draw: Vec<f64> = idx.iter().map(|&i| ites[i]).collect();
                mean(&draw)
            });
            shift_to_zero(&mut stats);
            let extreme = stats.iter().filter(|&&x| side.extreme(x, observed)).count() as u64;
            Ok(TestResult::new(
                "paired_bootstrap",
                observed,
                extreme,
                stats.len() as u64,
                exhaustive,
                side,
                cfg,
            ))
        }
    }
}

/// Lexicographic k-subsets of `[0, n)`.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn relabeled_statistic(pooled: &[f64], group_a: &[usize]) -> f64 {
    let mut in_a = vec![false; pooled.len()];
    for &i in group_a {
        in_a[i] = true;
    }
    let a: Vec<f64> = pooled.iter().zip(&in_a).filter(|(_, &sel)| sel).map(|(&x, _)| x).collect();
    let b: Vec<f64> = pooled.iter().zip(&in_a).filter(|(_, &sel)| !sel).map(|(&x, _)| x).collect();
    difference_of_means(&a, &b)
}

/// Permutation test for independent designs on per-system mean losses.
/// Group sizes are preserved; two-sided by default.
pub fn independent_system_test(means_a: &[f64], means_b: &[f64], cfg: &TestConfig) -> Result<TestResult> {
    cfg.check()?;
    let (na, nb) = (means_a.len(), means_b.len());
    if na < 1 || nb < 1 || na + nb < 3 {
        return Err(Error::Sizing(format!(
            "independent test needs both groups non-empty and 3 systems in total, got {na} and {nb}"
        )));
    }
    let side = cfg.sidedness.unwrap_or(Sidedness::TwoSided);
    let observed = difference_of_means(means_a, means_b);
    // Sorting makes the statistic a function of the group multisets alone.
    let mut sorted_a = means_a.to_vec();
    let mut sorted_b = means_b.to_vec();
    sorted_a.sort_by(f64::total_cmp);
    sorted_b.sort_by(f64::total_cmp);
    let pooled: Vec<f64> = sorted_a.into_iter().chain(sorted_b).collect();
    let n = na + nb;

    let exhaustive = cfg.enumerate(binomial(n, na), EXHAUSTIVE_LIMIT);
    let (extreme, k) = if exhaustive {
        let (mut extreme, mut k) = (0u64, 0u64);
        for_each_combination(n, na, |group| {
            k += 1;
            if side.extreme(relabeled_statistic(&pooled, group), observed) {
                extreme += 1;
            }
        });
        (extreme, k)
    } else {
        let extreme = (0..cfg.resamples as u64)
            .filter(|&k| {
                let mut rng = counter_rng(cfg.seed, k);
                let group = index::sample(&mut rng, n, na).into_vec();
                side.extreme(relabeled_statistic(&pooled, &group), observed)
            })
            .count() as u64;
        (extreme, cfg.resamples as u64)
    };
    Ok(TestResult::new(
        "independent_permutation",
        observed,
        extreme,
        k,
        exhaustive,
        side,
        cfg,
    ))
}
