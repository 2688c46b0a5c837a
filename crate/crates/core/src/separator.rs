//! Stepwise posterior decoding of a token mixture into two token sequences.
//!
//! At position `s` the joint score of the pair `(a, b)` is
//! `ln p1(a | z1_<s) + ln p2(b | z2_<s) + λ ln P[a, b, m_s]`, materialized as
//! a dense K×K matrix. A sampler then picks one cell (greedy, ancestral,
//! top-k) or a beam search keeps the best `B` partial pairs.
//!
//! Stochastic samplers draw `num_candidates` complete pairs and keep the one
//! whose decoded average is closest to the mixture in L2. Candidate `c` uses a
//! ChaCha8 stream seeded with the config seed and stream id `c`, so results do
//! not depend on how candidates are scheduled across threads.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, Codebook, Signal, Token, TokenSeq};
use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodModel, LikelihoodSlice};
use crate::prior::PriorPair;
use crate::{metrics, par};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sampler {
    Greedy,
    Ancestral,
    Topk { k: usize },
    Beam { b: usize },
}

impl Sampler {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, Sampler::Ancestral | Sampler::Topk { .. })
    }
}

fn default_candidates() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub lambda: f64,
    pub sampler: Sampler,
    #[serde(default = "default_candidates")]
    pub num_candidates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SeparationConfig {
    pub fn new(lambda: f64, sampler: Sampler) -> Self {
        SeparationConfig { lambda, sampler, num_candidates: 1, seed: 0 }
    }

    pub fn with_candidates(mut self, n: usize) -> Self {
        self.num_candidates = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        if self.num_candidates == 0 {
            return Err(Error::invalid("num_candidates must be at least 1"));
        }
        match self.sampler {
            Sampler::Topk { k: top } if top == 0 || top > k * k => Err(Error::invalid(format!(
                "top-k k = {top} outside [1, K^2 = {}]",
                k * k
            ))),
            Sampler::Beam { b: 0 } => Err(Error::invalid("beam width must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// Row-major K×K matrix of log scores, indexed `(a, b)` = (source 1, source 2).
#[derive(Clone, Debug, PartialEq)]
pub struct LogMatrix {
    k: usize,
    data: Vec<f64>,
}

impl LogMatrix {
    pub fn from_vec(k: usize, data: Vec<f64>) -> Result<Self> {
        codec::check_same_len(k * k, data.len())?;
        Ok(LogMatrix { k, data })
    }

    pub fn filled(k: usize, value: f64) -> Self {
        LogMatrix { k, data: vec![value; k * k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, a: Token, b: Token) -> f64 {
        self.data[a * self.k + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn cell(&self, i: usize) -> (Token, Token) {
        (i / self.k, i % self.k)
    }
}

/// A pair of equal-length partial sequences and their accumulated score.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub z1: TokenSeq,
    pub z2: TokenSeq,
    pub logscore: f64,
}

impl Hypothesis {
    pub fn empty() -> Self {
        Hypothesis { z1: TokenSeq::default(), z2: TokenSeq::default(), logscore: 0.0 }
    }

    fn extend(&self, a: Token, b: Token, score: f64) -> Self {
        let mut z1 = self.z1.0.clone();
        let mut z2 = self.z2.0.clone();
        z1.push(a);
        z2.push(b);
        Hypothesis { z1: TokenSeq(z1), z2: TokenSeq(z2), logscore: self.logscore + score }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationResult {
    pub x1: Signal,
    pub x2: Signal,
    pub z1: TokenSeq,
    pub z2: TokenSeq,
    pub logscore: f64,
    /// `‖(x1 + x2) / 2 − y‖₂`
    pub residual: f64,
}

/// Joint posterior scores from the two prior conditionals (probabilities)
/// and a likelihood slice.
pub fn posterior_step(p1: &[f64], p2: &[f64], ll: &LikelihoodSlice<'_>, lambda: f64) -> LogMatrix {
    let lp1: Vec<f64> = p1.iter().map(|p| p.ln()).collect();
    let lp2: Vec<f64> = p2.iter().map(|p| p.ln()).collect();
    let mut out = LogMatrix::filled(lp1.len(), 0.0);
    posterior_from_logs(&lp1, &lp2, ll, lambda, &mut out);
    out
}

fn posterior_from_logs(lp1: &[f64], lp2: &[f64], ll: &LikelihoodSlice<'_>, lambda: f64, out: &mut LogMatrix) {
    let k = lp1.len();
    debug_assert_eq!(out.k, k);
    let floor = lambda * ll.floor_logp();
    for (a, row) in out.data.chunks_exact_mut(k).enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = lp1[a] + lp2[b] + floor;
        }
    }
    for &(a, b, lp) in ll.entries() {
        out.data[a * k + b] = lp1[a] + lp2[b] + lambda * lp;
    }
}

/// Arg-max cell; ties go to the smallest `a`, then `b`.
pub fn greedy_select(post: &LogMatrix) -> (Token, Token) {
    post.cell(argmax(&post.data))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Draws one cell from the softmax of `post`.
pub fn ancestral_sample<R: Rng + ?Sized>(post: &LogMatrix, rng: &mut R) -> (Token, Token) {
    post.cell(draw_index(&post.data, None, rng))
}

/// Keeps the `k` highest cells (ties by index order), renormalizes among
/// them and draws one. `k = K²` is exactly [`ancestral_sample`].
pub fn topk_sample<R: Rng + ?Sized>(post: &LogMatrix, k: usize, rng: &mut R) -> Result<(Token, Token)> {
    let n = post.data.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("top-k k = {k} outside [1, {n}]")));
    }
    if k == n {
        return Ok(ancestral_sample(post, rng));
    }
    let mask = topk_mask(&post.data, k);
    Ok(post.cell(draw_index(&post.data, Some(&mask), rng)))
}

fn topk_mask(values: &[f64], k: usize) -> Vec<bool> {
    let mut sorted = values.to_vec();
    let (_, &mut threshold, _) = sorted.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let above = values.iter().filter(|v| v.total_cmp(&threshold) == Ordering::Greater).count();
    let mut ties = k - above;
    values
        .iter()
        .map(|v| match v.total_cmp(&threshold) {
            Ordering::Greater => true,
            Ordering::Equal if ties > 0 => {
                ties -= 1;
                true
            }
            _ => false,
        })
        .collect()
}

/// Inverse-CDF draw over `exp(v - max)` in index order, restricted to `mask`.
/// Consumes exactly one `f64` from `rng`.
fn draw_index<R: Rng + ?Sized>(values: &[f64], mask: Option<&[bool]>, rng: &mut R) -> usize {
    let kept = |i: usize| mask.is_none_or(|m| m[i]);
    let max = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| kept(i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let weight = |v: f64| if max == f64::NEG_INFINITY { 1.0 } else { (v - max).exp() };
    let total: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| kept(i))
        .map(|(_, &v)| weight(v))
        .sum();
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &v) in values.iter().enumerate() {
        if !kept(i) {
            continue;
        }
        let w = weight(v);
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if acc > target {
            return i;
        }
    }
    last.unwrap_or(0)
}

/// Scores every one-pair extension of every beam and keeps the best `width`.
/// Ties are broken by parent index, then `a`, then `b`.
pub fn beam_step(beams: &[Hypothesis], posts: &[LogMatrix], width: usize) -> Vec<Hypothesis> {
    assert_eq!(beams.len(), posts.len(), "one posterior matrix per beam");
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (parent, (h, post)) in beams.iter().zip(posts).enumerate() {
        cands.extend(post.data.iter().enumerate().map(|(cell, &v)| (h.logscore + v, parent, cell)));
    }
    let order = |x: &(f64, usize, usize), y: &(f64, usize, usize)| {
        y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
    };
    if width < cands.len() {
        cands.select_nth_unstable_by(width, order);
        cands.truncate(width);
    }
    cands.sort_unstable_by(order);
    cands
        .into_iter()
        .map(|(_, parent, cell)| {
            let (a, b) = posts[parent].cell(cell);
            beams[parent].extend(a, b, posts[parent].data[cell])
        })
        .collect()
}

/// Per-step selection rule for single-path decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    Greedy,
    Ancestral,
    TopK(usize),
}

struct Model<'a> {
    priors: PriorPair<'a>,
    lik: &'a LikelihoodModel,
    lambda: f64,
}

impl Model<'_> {
    fn check(&self, m: &TokenSeq) -> Result<usize> {
        let k = self.priors.k();
        if self.lik.k() != k {
            return Err(Error::KMismatch { expected: k, found: self.lik.k() });
        }
        m.check_range(k)?;
        Ok(k)
    }

    fn posterior(&self, h: &Hypothesis, m: Token, out: &mut LogMatrix, lp1: &mut [f64], lp2: &mut [f64]) {
        self.priors.first.fill_log_conditional(h.z1.tokens(), lp1);
        self.priors.second.fill_log_conditional(h.z2.tokens(), lp2);
        let slice = self.lik.slice(m).expect("mixture token range checked");
        posterior_from_logs(lp1, lp2, &slice, self.lambda, out);
    }
}

/// Decodes one pair of sequences for the mixture tokens `m`, selecting each
/// step's pair with `rule`.
pub fn sample_path<R: Rng + ?Sized>(
    m: &TokenSeq,
    priors: PriorPair<'_>,
    lik: &LikelihoodModel,
    lambda: f64,
    rule: StepRule,
    rng: &mut R,
) -> Result<Hypothesis> {
    let model = Model { priors, lik, lambda };
    let k = model.check(m)?;
    if let StepRule::TopK(top) = rule {
        if top == 0 || top > k * k {
            return Err(Error::invalid(format!("top-k k = {top} outside [1, {}]", k * k)));
        }
    }
    let mut h = Hypothesis::empty();
    let mut post = LogMatrix::filled(k, 0.0);
    let (mut lp1, mut lp2) = (vec![0.0; k], vec![0.0; k]);
    for &ms in m.tokens() {
        model.posterior(&h, ms, &mut post, &mut lp1, &mut lp2);
        let (a, b) = match rule {
            StepRule::Greedy => greedy_select(&post),
            StepRule::Ancestral => ancestral_sample(&post, rng),
            StepRule::TopK(top) => topk_sample(&post, top, rng)?,
        };
        let score = post.get(a, b);
        h = h.extend(a, b, score);
    }
    Ok(h)
}

/// Beam search over token pairs; returns the final beams, best first.
pub fn beam_search(
    m: &TokenSeq,
    priors: PriorPair<'_>,
    lik: &LikelihoodModel,
    lambda: f64,
    width: usize,
) -> Result<Vec<Hypothesis>> {
    let model = Model { priors, lik, lambda };
    let k = model.check(m)?;
    if width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let mut beams = vec![Hypothesis::empty()];
    for &ms in m.tokens() {
        let posts = par::map_slice(&beams, |h| {
            let mut post = LogMatrix::filled(k, 0.0);
            let (mut lp1, mut lp2) = (vec![0.0; k], vec![0.0; k]);
            model.posterior(h, ms, &mut post, &mut lp1, &mut lp2);
            post
        });
        beams = beam_step(&beams, &posts, width);
    }
    Ok(beams)
}

/// Derives a per-item seed from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG used for candidate `candidate` of a separation seeded with `seed`.
pub fn candidate_rng(seed: u64, candidate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(candidate);
    rng
}

/// Separates the mixture `y` into two sources.
pub fn separate(
    y: &Signal,
    priors: PriorPair<'_>,
    lik: &LikelihoodModel,
    codec: &Codebook,
    cfg: &SeparationConfig,
) -> Result<SeparationResult> {
    let k = priors.k();
    for found in [lik.k(), codec.k()] {
        if found != k {
            return Err(Error::KMismatch { expected: k, found });
        }
    }
    cfg.validate(k)?;
    let m = codec::encode(codec, y)?;

    let finish = |h: Hypothesis| -> Result<SeparationResult> {
        let x1 = codec::decode(codec, &h.z1)?;
        let x2 = codec::decode(codec, &h.z2)?;
        let residual = metrics::mix(&x1, &x2)?.l2_distance(y)?;
        Ok(SeparationResult { x1, x2, z1: h.z1, z2: h.z2, logscore: h.logscore, residual })
    };

    let rule = match cfg.sampler {
        Sampler::Beam { b } => {
            let best = beam_search(&m, priors, lik, cfg.lambda, b)?.swap_remove(0);
            return finish(best);
        }
        Sampler::Greedy => {
            let mut rng = candidate_rng(cfg.seed, 0);
            return finish(sample_path(&m, priors, lik, cfg.lambda, StepRule::Greedy, &mut rng)?);
        }
        Sampler::Ancestral => StepRule::Ancestral,
        Sampler::Topk { k } => StepRule::TopK(k),
    };

    let candidates = par::map_range(cfg.num_candidates, |c| -> Result<SeparationResult> {
        let mut rng = candidate_rng(cfg.seed, c as u64);
        finish(sample_path(&m, priors, lik, cfg.lambda, rule, &mut rng)?)
    });
    let mut best: Option<SeparationResult> = None;
    for cand in candidates {
        let cand = cand?;
        if best.as_ref().is_none_or(|b| cand.residual < b.residual) {
            best = Some(cand);
        }
    }
    Ok(best.expect("num_candidates >= 1"))
}
