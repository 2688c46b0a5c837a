#![allow(dead_code)]

use latsep::{Codebook, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sig(v: &[f64]) -> Signal {
    Signal::new(v.to_vec()).unwrap()
}

/// Values on a coarse grid so that exact ties show up.
pub fn grid_signal(rng: &mut ChaCha8Rng, len: usize) -> Signal {
    Signal::new((0..len).map(|_| rng.gen_range(-4..=4) as f64 / 4.0).collect()).unwrap()
}

pub fn random_codebook(rng: &mut ChaCha8Rng, k: usize, p: usize) -> Codebook {
    let mut codes: Vec<Vec<f64>> = Vec::new();
    while codes.len() < k {
        let c: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if !codes.contains(&c) {
            codes.push(c);
        }
    }
    Codebook::new(codes).unwrap()
}

/// Brute-force nearest code, first minimum wins.
pub fn nearest(codes: &[Vec<f64>], patch: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in codes.iter().enumerate() {
        let d: f64 = c.iter().zip(patch).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn brute_encode(codes: &[Vec<f64>], x: &[f64]) -> Vec<usize> {
    let p = codes[0].len();
    x.chunks(p).map(|patch| nearest(codes, patch)).collect()
}
