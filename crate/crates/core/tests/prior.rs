mod common;

use std::collections::HashMap;

use common::rng;
use latsep::oracle::sequence_at;
use latsep::{train_ngram, NGramPrior, TokenSeq};
use proptest::prelude::*;
use rand::Rng;

fn random_corpus(seed: u64, k: usize, n: usize, max_len: usize) -> Vec<TokenSeq> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let len = r.gen_range(1..=max_len);
            // skewed draws so some contexts dominate
            TokenSeq((0..len).map(|_| (r.gen_range(0..k * k) as f64).sqrt() as usize).collect())
        })
        .collect()
}

/// Counts of `token` after every context suffix of length `< order`.
fn recount(corpus: &[TokenSeq], order: usize) -> HashMap<Vec<usize>, HashMap<usize, u64>> {
    let mut out: HashMap<Vec<usize>, HashMap<usize, u64>> = HashMap::new();
    for z in corpus {
        for s in 0..z.len() {
            for len in 0..order.min(s + 1) {
                *out.entry(z.0[s - len..s].to_vec()).or_default().entry(z.0[s]).or_default() += 1;
            }
        }
    }
    out
}

fn expected_conditional(
    table: &HashMap<Vec<usize>, HashMap<usize, u64>>,
    context: &[usize],
    k: usize,
    order: usize,
    delta: f64,
) -> Vec<f64> {
    let keep = context.len().min(order - 1);
    match table.get(&context[context.len() - keep..]) {
        Some(c) => {
            let total: u64 = c.values().sum();
            (0..k)
                .map(|t| (*c.get(&t).unwrap_or(&0) as f64 + delta) / (total as f64 + delta * k as f64))
                .collect()
        }
        None => vec![1.0 / k as f64; k],
    }
}

#[test]
fn conditionals_match_recount() {
    for (seed, k, order, delta) in [(1, 3, 1, 0.1), (2, 4, 2, 0.0), (3, 5, 3, 0.5), (4, 3, 4, 1.0)] {
        let corpus = random_corpus(seed, k, 25, 9);
        let prior = train_ngram(&corpus, k, order, delta).unwrap();
        let table = recount(&corpus, order);
        for len in 0..=3 {
            for i in 0..k.pow(len as u32) {
                let ctx = sequence_at(i, k, len);
                let got = prior.conditional(&ctx).unwrap();
                let want = expected_conditional(&table, &ctx, k, order, delta);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-15, "ctx {ctx:?}: {got:?} vs {want:?}");
                }
                let keep = ctx.len().min(order - 1);
                for t in 0..k {
                    let c = table.get(&ctx[ctx.len() - keep..]).and_then(|m| m.get(&t)).copied().unwrap_or(0);
                    assert_eq!(prior.count(&ctx, t), c);
                }
            }
        }
    }
}

#[test]
fn sequence_logprob_is_chain_rule() {
    let corpus = random_corpus(7, 4, 30, 7);
    let prior = train_ngram(&corpus, 4, 3, 0.1).unwrap();
    let table = recount(&corpus, 3);
    let mut r = rng(8);
    for _ in 0..50 {
        let z: Vec<usize> = (0..r.gen_range(0..8)).map(|_| r.gen_range(0..4)).collect();
        let want: f64 = (0..z.len())
            .map(|s| expected_conditional(&table, &z[..s], 4, 3, 0.1)[z[s]].ln())
            .sum();
        let got = prior.sequence_logprob(&TokenSeq(z)).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn empty_context_is_unigram() {
    let prior = train_ngram(&[TokenSeq(vec![0, 1, 0, 1])], 2, 3, 0.0).unwrap();
    assert_eq!(prior.conditional(&[]).unwrap(), vec![0.5, 0.5]);
    assert_eq!(prior.conditional(&[0]).unwrap(), vec![0.0, 1.0]);
    assert_eq!(prior.conditional(&[1, 1]).unwrap(), vec![0.5, 0.5]);
}

#[test]
fn chain_normalizes_over_all_sequences() {
    for order in 1..=4 {
        for delta in [0.0, 0.05, 1.0] {
            let corpus = random_corpus(order as u64, 3, 12, 6);
            let prior = train_ngram(&corpus, 3, order, delta).unwrap();
            let total: f64 = (0..3usize.pow(6))
                .map(|i| prior.sequence_logprob(&TokenSeq(sequence_at(i, 3, 6))).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "order {order} delta {delta}: {total}");
        }
    }
}

#[test]
fn huge_delta_is_nearly_uniform() {
    let corpus = random_corpus(11, 5, 30, 9);
    let prior = train_ngram(&corpus, 5, 2, 1e6).unwrap();
    for ctx in [vec![], vec![0], vec![3], vec![4, 1]] {
        let p = prior.conditional(&ctx).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-3), "{p:?}");
    }
}

#[test]
fn training_errors() {
    assert!(train_ngram(&[], 3, 2, 0.1).is_err());
    assert!(train_ngram(&[TokenSeq(vec![])], 3, 2, 0.1).is_err());
    assert!(train_ngram(&[TokenSeq(vec![0])], 3, 0, 0.1).is_err());
    assert!(train_ngram(&[TokenSeq(vec![0])], 3, 2, -0.1).is_err());
    assert!(train_ngram(&[TokenSeq(vec![3])], 3, 2, 0.1).is_err());
    let prior = train_ngram(&[TokenSeq(vec![0, 2])], 3, 2, 0.1).unwrap();
    assert!(prior.conditional(&[5]).is_err());
    assert!(prior.sequence_logprob(&TokenSeq(vec![0, 3])).is_err());
}

#[test]
fn prior_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prior.json");
    let prior = train_ngram(&random_corpus(5, 6, 20, 10), 6, 3, 0.1).unwrap();
    prior.save(&path).unwrap();
    assert_eq!(NGramPrior::load(&path).unwrap(), prior);
    std::fs::write(&path, r#"{"k": 2, "order": 2, "delta": 0.1, "contexts": [[[4], [[0, 1]]]]}"#).unwrap();
    assert!(NGramPrior::load(&path).unwrap_err().is_file_error());
}

proptest! {
    #[test]
    fn conditionals_sum_to_one(seed in 0u64..1000, k in 1usize..7, order in 1usize..5, delta in 0.0f64..2.0) {
        let corpus = random_corpus(seed, k, 10, 8);
        let prior = train_ngram(&corpus, k, order, delta).unwrap();
        let mut r = rng(seed ^ 0xabc);
        let ctx: Vec<usize> = (0..r.gen_range(0..6)).map(|_| r.gen_range(0..k)).collect();
        let p = prior.conditional(&ctx).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
