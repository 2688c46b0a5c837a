mod common;

use common::{random_codebook, rng};
use latsep::codec::DenseEmbedding;
use latsep::refine::{gradient, objective, refine_with_trace};
use latsep::{decode, refine, RefinementConfig, Signal, TokenSeq};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_signal(r: &mut ChaCha8Rng, len: usize) -> Signal {
    Signal::new((0..len).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn embedding(r: &mut ChaCha8Rng, p: usize, n: usize) -> DenseEmbedding {
    DenseEmbedding::from_flat(p, (0..p * n).map(|_| r.gen_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..20 {
        let mut r = rng(seed);
        let (p, n) = (r.gen_range(1..5), r.gen_range(1..10));
        let book = random_codebook(&mut r, 3, p);
        let e1 = embedding(&mut r, p, n);
        let e2 = embedding(&mut r, p, n);
        let y = random_signal(&mut r, p * n);
        let (g1, g2) = gradient(&book, &e1, &e2, &y).unwrap();
        for (which, g) in [(0, &g1), (1, &g2)] {
            for i in 0..p * n {
                let shifted = |d: f64| {
                    let mut a = e1.as_flat().to_vec();
                    let mut b = e2.as_flat().to_vec();
                    if which == 0 { a[i] += d } else { b[i] += d }
                    let a = DenseEmbedding::from_flat(p, a).unwrap();
                    let b = DenseEmbedding::from_flat(p, b).unwrap();
                    objective(&book, &a, &b, &y).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5, "seed {seed} coord {i}: {fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn plain_steps_contract_residual_geometrically() {
    let mut r = rng(3);
    let book = random_codebook(&mut r, 4, 2);
    let x1 = random_signal(&mut r, 8);
    let x2 = random_signal(&mut r, 8);
    let y = random_signal(&mut r, 8);
    let cfg = RefinementConfig { steps: 10, alpha: 0.1, backtracking: false, tolerance: None };
    let trace = refine_with_trace(&x1, &x2, &y, &book, &cfg).unwrap();
    assert_eq!(trace.residuals.len(), 11);
    for w in trace.residuals.windows(2) {
        assert!((w[1] - 0.6 * w[0]).abs() < 1e-12);
    }
}

#[test]
fn large_step_diverges_without_backtracking_only() {
    let mut r = rng(4);
    let book = random_codebook(&mut r, 4, 2);
    let (x1, x2, y) = (random_signal(&mut r, 6), random_signal(&mut r, 6), random_signal(&mut r, 6));
    let mut cfg = RefinementConfig { steps: 20, alpha: 0.7, backtracking: false, tolerance: None };
    let plain = refine_with_trace(&x1, &x2, &y, &book, &cfg).unwrap();
    assert!(plain.residuals.last().unwrap() > &plain.residuals[0]);
    cfg.backtracking = true;
    let safe = refine_with_trace(&x1, &x2, &y, &book, &cfg).unwrap();
    assert!(safe.residuals.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn consistent_pair_is_fixed_point() {
    let mut r = rng(5);
    let book = random_codebook(&mut r, 5, 3);
    let z1 = TokenSeq((0..6).map(|_| r.gen_range(0..5)).collect());
    let z2 = TokenSeq((0..6).map(|_| r.gen_range(0..5)).collect());
    let x1 = decode(&book, &z1).unwrap();
    let x2 = decode(&book, &z2).unwrap();
    let y = latsep::metrics::mix(&x1, &x2).unwrap();
    let (a, b) = refine(&x1, &x2, &y, &book, &RefinementConfig::default()).unwrap();
    assert_eq!((a, b), (x1, x2));
}

#[test]
fn tolerance_stops_early() {
    let mut r = rng(6);
    let book = random_codebook(&mut r, 4, 2);
    let (x1, x2, y) = (random_signal(&mut r, 8), random_signal(&mut r, 8), random_signal(&mut r, 8));
    let cfg = RefinementConfig { steps: 500, alpha: 0.1, backtracking: false, tolerance: Some(1e-3) };
    let trace = refine_with_trace(&x1, &x2, &y, &book, &cfg).unwrap();
    assert!(trace.residuals.len() < 30);
}

#[test]
fn rejects_bad_inputs() {
    let book = random_codebook(&mut rng(7), 3, 2);
    let x = Signal::new(vec![0.0; 4]).unwrap();
    let bad = RefinementConfig { alpha: 0.0, ..Default::default() };
    assert!(refine(&x, &x, &x, &book, &bad).is_err());
    let odd = Signal::new(vec![0.0; 3]).unwrap();
    assert!(refine(&odd, &odd, &odd, &book, &RefinementConfig::default()).is_err());
    let short = Signal::new(vec![0.0; 2]).unwrap();
    assert!(refine(&x, &short, &x, &book, &RefinementConfig::default()).is_err());
}

proptest! {
    #[test]
    fn backtracking_never_increases_residual(seed in 0u64..500, alpha in 0.01f64..3.0) {
        let mut r = rng(seed);
        let book = random_codebook(&mut r, 3, 2);
        let (x1, x2, y) = (random_signal(&mut r, 10), random_signal(&mut r, 10), random_signal(&mut r, 10));
        let cfg = RefinementConfig { steps: 50, alpha, backtracking: true, tolerance: None };
        let trace = refine_with_trace(&x1, &x2, &y, &book, &cfg).unwrap();
        prop_assert!(trace.residuals.windows(2).all(|w| w[1] <= w[0]));
    }
}
