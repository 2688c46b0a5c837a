//! Mixing, PSNR, and the trivial "average" baseline.

use crate::codec::{check_same_len, Signal};
use crate::error::Result;

/// Element-wise average `(x1 + x2) / 2`.
pub fn mix(x1: &Signal, x2: &Signal) -> Result<Signal> {
    check_same_len(x1.len(), x2.len())?;
    let y = x1.samples().iter().zip(x2.samples()).map(|(a, b)| (a + b) / 2.0).collect();
    Signal::new(y)
}

pub fn mse(est: &Signal, reference: &Signal) -> Result<f64> {
    check_same_len(est.len(), reference.len())?;
    let sum: f64 = est
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / est.len() as f64)
}

/// `10 log10(peak² / MSE)` in dB; `f64::INFINITY` for an exact match.
pub fn psnr(est: &Signal, reference: &Signal, peak: f64) -> Result<f64> {
    let mse = mse(est, reference)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Both estimates are the mixture itself.
pub fn average_baseline(y: &Signal) -> (Signal, Signal) {
    (y.clone(), y.clone())
}
