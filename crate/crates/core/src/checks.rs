//! Seeded small instances and the cross-validation suite run by
//! `latsep oracle-check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::TokenSeq;
use crate::error::Result;
use crate::likelihood::{normalize, CountTensor, LikelihoodModel};
use crate::oracle::{exact_map, exact_posterior, sequence_at};
use crate::prior::{train_ngram, NGramPrior, PriorPair};
use crate::separator::{self, candidate_rng, StepRule};

/// A random separation problem small enough to enumerate.
#[derive(Clone, Debug)]
pub struct Instance {
    pub m: TokenSeq,
    pub prior1: NGramPrior,
    pub prior2: NGramPrior,
    pub likelihood: LikelihoodModel,
}

impl Instance {
    /// Priors are trained on sequences from random Markov chains, the count
    /// tensor sees noisy `(a + b) mod K` mixtures, and `m` is uniform.
    pub fn random(seed: u64, k: usize, s: usize, order: usize, delta: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior1 = random_prior(&mut rng, k, order, delta)?;
        let prior2 = random_prior(&mut rng, k, order, delta)?;
        let mut counts = CountTensor::new(k);
        for _ in 0..8 * k * k {
            let a = rng.gen_range(0..k);
            let b = rng.gen_range(0..k);
            let m = if rng.gen::<f64>() < 0.7 { (a + b) % k } else { rng.gen_range(0..k) };
            counts.observe(a, b, m)?;
        }
        let m = TokenSeq((0..s).map(|_| rng.gen_range(0..k)).collect());
        Ok(Instance { m, prior1, prior2, likelihood: normalize(&counts) })
    }

    pub fn priors(&self) -> PriorPair<'_> {
        PriorPair { first: &self.prior1, second: &self.prior2 }
    }

    /// Joint score of a full pair, summed the same way as the oracle table.
    pub fn score(&self, z1: &TokenSeq, z2: &TokenSeq, lambda: f64) -> Result<f64> {
        let ll: f64 = (0..self.m.len())
            .map(|s| self.likelihood.log_prob(z1.0[s], z2.0[s], self.m.0[s]))
            .sum();
        Ok(self.prior1.sequence_logprob(z1)? + self.prior2.sequence_logprob(z2)? + lambda * ll)
    }
}

fn random_prior(rng: &mut ChaCha8Rng, k: usize, order: usize, delta: f64) -> Result<NGramPrior> {
    let weights: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..k).map(|_| rng.gen::<f64>().powi(3)).collect())
        .collect();
    let corpus: Vec<TokenSeq> = (0..30)
        .map(|_| {
            let mut z = vec![rng.gen_range(0..k)];
            for _ in 1..8 {
                let w = &weights[*z.last().unwrap()];
                let total: f64 = w.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut next = k - 1;
                for (t, &wt) in w.iter().enumerate() {
                    if u < wt {
                        next = t;
                        break;
                    }
                    u -= wt;
                }
                z.push(next);
            }
            TokenSeq(z)
        })
        .collect();
    train_ngram(&corpus, k, order, delta)
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub test: String,
    pub pass: bool,
    pub max_error: f64,
}

impl CheckResult {
    fn new(test: &str, max_error: f64, tolerance: f64) -> Self {
        CheckResult { test: test.to_string(), pass: max_error <= tolerance, max_error }
    }
}

/// Beam search with `B = K^(2S)` against the enumerated MAP score.
pub fn check_beam_map(seeds: std::ops::Range<u64>, lambdas: &[f64]) -> Result<CheckResult> {
    let (k, s): (usize, usize) = (3, 4);
    let width = k.pow(2 * s as u32);
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let inst = Instance::random(seed, k, s, 2, 0.1)?;
        for &lambda in lambdas {
            let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, lambda)?;
            let (z1, z2) = exact_map(&table);
            let best = separator::beam_search(&inst.m, inst.priors(), &inst.likelihood, lambda, width)?;
            let err = (best[0].logscore - table.score(&z1, &z2)).abs();
            worst = worst.max(err);
        }
    }
    Ok(CheckResult::new("beam_search_matches_exact_map", worst, 1e-9))
}

/// Every exhaustive-beam hypothesis carries exactly the oracle's score.
pub fn check_stepwise_scores(seed: u64, lambda: f64) -> Result<CheckResult> {
    let (k, s): (usize, usize) = (3, 3);
    let inst = Instance::random(seed, k, s, 2, 0.1)?;
    let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, lambda)?;
    let beams = separator::beam_search(&inst.m, inst.priors(), &inst.likelihood, lambda, k.pow(2 * s as u32))?;
    let mut worst: f64 = if beams.len() == table.scores().len() { 0.0 } else { f64::MAX };
    for h in &beams {
        worst = worst.max((h.logscore - table.score(&h.z1, &h.z2)).abs());
    }
    Ok(CheckResult::new("stepwise_scores_match_global", worst, 1e-9))
}

/// Stepwise ancestral sampling against the normalized table on an instance
/// whose posterior factorizes over positions (order-1 priors).
pub fn check_ancestral_fidelity(seed: u64, lambda: f64, draws: usize) -> Result<CheckResult> {
    let (k, s): (usize, usize) = (3, 3);
    let inst = Instance::random(seed, k, s, 1, 0.1)?;
    let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, lambda)?;
    let mut counts = vec![0u64; table.scores().len()];
    let mut rng = candidate_rng(seed, 0);
    for _ in 0..draws {
        let h = separator::sample_path(&inst.m, inst.priors(), &inst.likelihood, lambda, StepRule::Ancestral, &mut rng)?;
        counts[table.index_of(&h.z1, &h.z2)] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let tv = total_variation(&empirical, &table.probabilities());
    Ok(CheckResult::new("ancestral_matches_posterior", tv, 0.02))
}

/// Chain-rule consistency: sequence probabilities sum to one.
pub fn check_prior_normalization() -> Result<CheckResult> {
    let (k, s): (usize, usize) = (4, 5);
    let mut worst: f64 = 0.0;
    for order in 1..=3 {
        for delta in [0.0, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(order as u64 * 31 + (delta * 10.0) as u64);
            let prior = random_prior(&mut rng, k, order, delta)?;
            let n = k.pow(s as u32);
            let mut total = 0.0;
            for i in 0..n {
                total += prior.sequence_logprob(&TokenSeq(sequence_at(i, k, s)))?.exp();
            }
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok(CheckResult::new("prior_sequences_sum_to_one", worst, 1e-6))
}

/// Stored likelihood rows sum to one and are symmetric in `(a, b)`.
pub fn check_likelihood_rows(seed: u64) -> Result<CheckResult> {
    let inst = Instance::random(seed, 6, 1, 1, 0.1)?;
    let mut worst: f64 = 0.0;
    for ((a, b), row) in inst.likelihood.rows() {
        let sum: f64 = row.iter().map(|&(_, p)| p).sum();
        worst = worst.max((sum - 1.0).abs());
        if inst.likelihood.row(b, a) != Some(row) {
            worst = f64::MAX;
        }
    }
    Ok(CheckResult::new("likelihood_rows_normalized_and_symmetric", worst, 1e-9))
}

/// λ = 0 makes the marginal of `z1` equal the first prior.
pub fn check_factorization(seed: u64) -> Result<CheckResult> {
    let (k, s): (usize, usize) = (3, 3);
    let inst = Instance::random(seed, k, s, 2, 0.1)?;
    let table = exact_posterior(&inst.m, inst.priors(), &inst.likelihood, 0.0)?;
    let marginal = table.marginal_first();
    let mut worst: f64 = 0.0;
    for (i, &p) in marginal.iter().enumerate() {
        let want = inst.prior1.sequence_logprob(&TokenSeq(sequence_at(i, k, s)))?.exp();
        worst = worst.max((p - want).abs());
    }
    Ok(CheckResult::new("lambda_zero_marginal_is_prior", worst, 1e-9))
}

/// Full suite in a fixed order.
pub fn run_oracle_checks() -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_beam_map(0..8, &[0.0, 1.0, 3.0])?,
        check_stepwise_scores(11, 1.0)?,
        check_ancestral_fidelity(5, 3.0, 200_000)?,
        check_prior_normalization()?,
        check_likelihood_rows(3)?,
        check_factorization(2)?,
    ])
}
