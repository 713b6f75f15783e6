//! Monte Carlo simulation of purchases and empirical choice tables.
//!
//! Every assortment gets its own ChaCha stream: the key is the run seed and
//! the stream id is a hash of the assortment's products. Tables therefore do
//! not depend on the order assortments are listed in or on the thread count,
//! and a run with `m` samples is a prefix of a run with more samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::choice::{ChoiceTable, NOISY_DENOM_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::{Assortment, ModelParams};
use crate::plan::RecoveryPlan;
use crate::recovery::{recover, RecoverOptions};

pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub samples_per_assortment: usize,
    pub seed: u64,
    pub max_steps: usize,
    /// Pseudo-count added to every outcome before normalizing.
    pub laplace: f64,
}

impl SampleConfig {
    pub fn new(samples_per_assortment: usize, seed: u64) -> Self {
        Self {
            samples_per_assortment,
            seed,
            max_steps: DEFAULT_MAX_STEPS,
            laplace: 0.0,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.samples_per_assortment == 0 {
            return Err(Error::domain("samples per assortment must be positive"));
        }
        if self.max_steps < n {
            return Err(Error::domain(format!(
                "max_steps = {} is below n = {n}",
                self.max_steps
            )));
        }
        if !(self.laplace >= 0.0 && self.laplace.is_finite()) {
            return Err(Error::domain("laplace pseudo-count must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Cumulative tables for drawing from `lambda` and the rows of `rho`.
#[derive(Clone, Debug)]
pub struct PurchaseSampler {
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

impl PurchaseSampler {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            initial: cumulative(model.lambda()),
            transitions: model.rho().iter().map(|row| cumulative(row)).collect(),
        }
    }

    /// One customer: returns the absorbing outcome and the number of states
    /// visited.
    pub fn sample_walk<R: Rng + ?Sized>(
        &self,
        offered: &[bool],
        rng: &mut R,
        max_steps: usize,
    ) -> Result<(usize, usize)> {
        let mut state = draw(&self.initial, rng);
        let mut steps = 1;
        while !(state == 0 || offered[state]) {
            if steps >= max_steps {
                return Err(Error::WalkLimitExceeded { max_steps });
            }
            state = draw(&self.transitions[state], rng);
            steps += 1;
        }
        Ok((state, steps))
    }
}

/// Membership mask over states `0..=n` (state 0 is never "offered").
pub fn offered_mask(n: usize, s: &Assortment) -> Vec<bool> {
    let mut mask = vec![false; n + 1];
    for &p in s.products() {
        mask[p] = true;
    }
    mask
}

/// Simulates one purchase: start from `lambda`, move along `rho` until the
/// walk reaches an offered product or state 0.
pub fn sample_purchase<R: Rng + ?Sized>(
    model: &ModelParams,
    s: &Assortment,
    rng: &mut R,
    max_steps: usize,
) -> Result<usize> {
    s.check_bounds(model.n())?;
    let sampler = PurchaseSampler::new(model);
    sampler
        .sample_walk(&offered_mask(model.n(), s), rng, max_steps)
        .map(|(outcome, _)| outcome)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit key for an assortment.
pub fn assortment_key(s: &Assortment) -> u64 {
    s.products()
        .iter()
        .fold(splitmix64(s.len() as u64), |h, &p| splitmix64(h ^ p as u64))
}

/// RNG stream for `(seed, S)`.
pub fn assortment_rng(seed: u64, s: &Assortment) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(assortment_key(s));
    rng
}

/// Outcome counts over [`Assortment::outcomes`] from `m` simulated customers.
pub fn sample_counts(model: &ModelParams, s: &Assortment, cfg: &SampleConfig) -> Result<Vec<u64>> {
    cfg.check(model.n())?;
    s.check_bounds(model.n())?;
    let sampler = PurchaseSampler::new(model);
    let mask = offered_mask(model.n(), s);
    let mut rng = assortment_rng(cfg.seed, s);
    let mut counts = vec![0u64; s.outcome_count()];
    for _ in 0..cfg.samples_per_assortment {
        let (outcome, _) = sampler.sample_walk(&mask, &mut rng, cfg.max_steps)?;
        counts[s.outcome_index(outcome).expect("walks end at outcomes")] += 1;
    }
    Ok(counts)
}

/// Empirical choice table over `assortments`.
pub fn estimate_table<'a, I>(model: &ModelParams, assortments: I, cfg: &SampleConfig) -> Result<ChoiceTable>
where
    I: IntoIterator<Item = &'a Assortment>,
{
    cfg.check(model.n())?;
    let list: Vec<&Assortment> = assortments.into_iter().collect();
    let estimated: Vec<(Assortment, Vec<f64>)> = list
        .par_iter()
        .map(|&s| {
            let counts = sample_counts(model, s, cfg)?;
            let total = cfg.samples_per_assortment as f64 + cfg.laplace * counts.len() as f64;
            let probs = counts
                .iter()
                .map(|&c| (c as f64 + cfg.laplace) / total)
                .collect();
            Ok((s.clone(), probs))
        })
        .collect::<Result<_>>()?;
    let mut table = ChoiceTable::new();
    for (s, probs) in estimated {
        table.insert(s, probs)?;
    }
    Ok(table)
}

/// One point of the error-versus-samples curve.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyPoint {
    pub samples: usize,
    /// Max entrywise parameter error, or the reason recovery failed.
    pub outcome: std::result::Result<f64, String>,
}

/// For each `m`, estimates the plan's tables with `m` samples per
/// assortment, runs recovery, and measures the error against `model`.
/// Recovery failures become rows rather than aborting the sweep.
pub fn error_vs_samples(
    model: &ModelParams,
    plan: &RecoveryPlan,
    m_values: &[usize],
    seed: u64,
) -> Result<Vec<StudyPoint>> {
    if m_values.is_empty() {
        return Err(Error::domain("at least one sample size is required"));
    }
    let options = RecoverOptions {
        denom_tolerance: NOISY_DENOM_TOLERANCE,
        ..RecoverOptions::default()
    };
    m_values
        .iter()
        .map(|&m| {
            let cfg = SampleConfig::new(m, seed);
            let table = estimate_table(model, plan.required_assortments(), &cfg)?;
            let outcome = recover(&table, plan, &options)
                .and_then(|report| report.recovered.max_abs_diff(model))
                .map_err(|e| e.to_string());
            Ok(StudyPoint { samples: m, outcome })
        })
        .collect()
}
