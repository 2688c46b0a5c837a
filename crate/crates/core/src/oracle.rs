//! Exhaustive reference posterior for small instances.
//!
//! Every pair `(z1, z2)` of length-S sequences over K tokens receives the
//! global score `ln p1(z1) + ln p2(z2) + λ Σ_s ln P[z1_s, z2_s, m_s]`, the sum
//! of the per-step terms the stepwise decoder accumulates. Pairs are indexed
//! `i * K^S + j`, where `i` and `j` read `z1` and `z2` as base-K numbers with
//! the first token most significant, so index order is lexicographic order.

use crate::codec::{Token, TokenSeq};
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::par;
use crate::prior::{NGramPrior, PriorPair};

/// Largest table `exact_posterior` will build.
pub const MAX_TABLE_SIZE: u64 = 10_000_000;

#[derive(Clone, Debug)]
pub struct PosteriorTable {
    k: usize,
    s: usize,
    scores: Vec<f64>,
    log_partition: f64,
}

impl PosteriorTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len_seq(&self) -> usize {
        self.s
    }

    /// Number of sequences per source, `K^S`.
    pub fn num_sequences(&self) -> usize {
        self.k.pow(self.s as u32)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn score(&self, z1: &TokenSeq, z2: &TokenSeq) -> f64 {
        self.scores[self.index_of(z1, z2)]
    }

    pub fn index_of(&self, z1: &TokenSeq, z2: &TokenSeq) -> usize {
        sequence_index(z1.tokens(), self.k) * self.num_sequences() + sequence_index(z2.tokens(), self.k)
    }

    pub fn pair(&self, index: usize) -> (TokenSeq, TokenSeq) {
        let n = self.num_sequences();
        (
            TokenSeq(sequence_at(index / n, self.k, self.s)),
            TokenSeq(sequence_at(index % n, self.k, self.s)),
        )
    }

    /// Normalized posterior probabilities in index order.
    pub fn probabilities(&self) -> Vec<f64> {
        self.scores.iter().map(|v| (v - self.log_partition).exp()).collect()
    }

    /// Posterior marginal of `z1`, indexed like [`sequence_at`].
    pub fn marginal_first(&self) -> Vec<f64> {
        let n = self.num_sequences();
        self.probabilities().chunks(n).map(|row| row.iter().sum()).collect()
    }
}

/// The `index`-th sequence of length `s` over `k` tokens in lexicographic order.
pub fn sequence_at(mut index: usize, k: usize, s: usize) -> Vec<Token> {
    let mut out = vec![0; s];
    for slot in out.iter_mut().rev() {
        *slot = index % k;
        index /= k;
    }
    out
}

pub fn sequence_index(z: &[Token], k: usize) -> usize {
    z.iter().fold(0, |acc, &t| acc * k + t)
}

fn all_sequence_logprobs(prior: &NGramPrior, s: usize) -> Result<Vec<f64>> {
    let k = prior.k();
    let n = k.pow(s as u32);
    par::map_range(n, |i| prior.sequence_logprob(&TokenSeq(sequence_at(i, k, s))))
        .into_iter()
        .collect()
}

/// Stable `ln Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn exact_posterior(
    m: &TokenSeq,
    priors: PriorPair<'_>,
    lik: &LikelihoodModel,
    lambda: f64,
) -> Result<PosteriorTable> {
    let k = priors.k();
    if lik.k() != k {
        return Err(Error::KMismatch { expected: k, found: lik.k() });
    }
    m.check_range(k)?;
    let s = m.len();
    let size = (k as u128).pow(2 * s as u32);
    if size > MAX_TABLE_SIZE as u128 {
        return Err(Error::InstanceTooLarge { size, cap: MAX_TABLE_SIZE });
    }
    let n = k.pow(s as u32);
    let lp1 = all_sequence_logprobs(priors.first, s)?;
    let lp2 = all_sequence_logprobs(priors.second, s)?;
    let slices: Vec<Vec<f64>> = m
        .tokens()
        .iter()
        .map(|&ms| lik.slice(ms).map(|sl| sl.to_dense()))
        .collect::<Result<_>>()?;

    let rows = par::map_range(n, |i| {
        let z1 = sequence_at(i, k, s);
        (0..n)
            .map(|j| {
                let z2 = sequence_at(j, k, s);
                let ll: f64 = (0..s).map(|t| slices[t][z1[t] * k + z2[t]]).sum();
                lp1[i] + lp2[j] + lambda * ll
            })
            .collect::<Vec<f64>>()
    });
    let scores = rows.concat();
    let log_partition = log_sum_exp(&scores);
    Ok(PosteriorTable { k, s, scores, log_partition })
}

/// Highest-scoring pair; ties go to the lexicographically smallest `(z1, z2)`.
pub fn exact_map(table: &PosteriorTable) -> (TokenSeq, TokenSeq) {
    let mut best = 0;
    for (i, &v) in table.scores.iter().enumerate() {
        if v > table.scores[best] {
            best = i;
        }
    }
    table.pair(best)
}
