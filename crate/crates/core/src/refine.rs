//! Post-separation refinement: gradient descent on the dense patch
//! embeddings of both estimates so that their decoded sum approaches `2y`.
//!
//! The objective is `‖D(e1) + D(e2) − 2y‖²`. The decoder is a concatenation,
//! so the gradient with respect to either embedding is `2r` with
//! `r = D(e1) + D(e2) − 2y`.

use serde::{Deserialize, Serialize};

use crate::codec::{self, check_same_len, Codebook, DenseEmbedding, Signal};
use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.1;
const BACKTRACK_FACTOR: f64 = 0.5;
const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub backtracking: bool,
    /// Stop once the residual norm improves by less than this.
    #[serde(default)]
    pub tolerance: Option<f64>,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig { steps: DEFAULT_STEPS, alpha: DEFAULT_ALPHA, backtracking: false, tolerance: None }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("refinement step size {} must be > 0", self.alpha)));
        }
        if let Some(t) = self.tolerance {
            if !t.is_finite() {
                return Err(Error::invalid("refinement tolerance must be finite"));
            }
        }
        Ok(())
    }
}

/// Output of [`refine_with_trace`]; `residuals[t]` is `‖D(e1_t) + D(e2_t) − 2y‖₂`
/// before step `t`, plus the final value.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub x1: Signal,
    pub x2: Signal,
    pub residuals: Vec<f64>,
}

/// `‖D(e1) + D(e2) − 2y‖²`.
pub fn objective(codec: &Codebook, e1: &DenseEmbedding, e2: &DenseEmbedding, y: &Signal) -> Result<f64> {
    let d1 = codec::decode_dense(codec, e1)?;
    let d2 = codec::decode_dense(codec, e2)?;
    check_same_len(d1.len(), y.len())?;
    check_same_len(d2.len(), y.len())?;
    Ok(residual_vec(d1.samples(), d2.samples(), y.samples()).iter().map(|r| r * r).sum())
}

/// Analytic gradient of [`objective`] with respect to `e1` and `e2` (flattened).
pub fn gradient(codec: &Codebook, e1: &DenseEmbedding, e2: &DenseEmbedding, y: &Signal) -> Result<(Vec<f64>, Vec<f64>)> {
    check_same_len(codec.patch_len(), e1.patch_len())?;
    check_same_len(codec.patch_len(), e2.patch_len())?;
    check_same_len(e1.as_flat().len(), y.len())?;
    check_same_len(e2.as_flat().len(), y.len())?;
    let g: Vec<f64> = residual_vec(e1.as_flat(), e2.as_flat(), y.samples()).iter().map(|r| 2.0 * r).collect();
    Ok((g.clone(), g))
}

fn residual_vec(d1: &[f64], d2: &[f64], y: &[f64]) -> Vec<f64> {
    d1.iter().zip(d2).zip(y).map(|((a, b), y)| a + b - 2.0 * y).collect()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn refine(x1: &Signal, x2: &Signal, y: &Signal, codec: &Codebook, cfg: &RefinementConfig) -> Result<(Signal, Signal)> {
    let r = refine_with_trace(x1, x2, y, codec, cfg)?;
    Ok((r.x1, r.x2))
}

pub fn refine_with_trace(
    x1: &Signal,
    x2: &Signal,
    y: &Signal,
    codec: &Codebook,
    cfg: &RefinementConfig,
) -> Result<Refinement> {
    cfg.validate()?;
    check_same_len(x1.len(), x2.len())?;
    check_same_len(x1.len(), y.len())?;
    codec.num_patches(x1.len())?;
    let p = codec.patch_len();
    // patch embeddings of the inputs; for decoded estimates these are the codes
    let mut e1 = x1.samples().to_vec();
    let mut e2 = x2.samples().to_vec();
    let ys = y.samples();

    let mut f = sq_norm(&residual_vec(&e1, &e2, ys));
    let mut residuals = vec![f.sqrt()];
    for _ in 0..cfg.steps {
        let g: Vec<f64> = residual_vec(&e1, &e2, ys).iter().map(|r| 2.0 * r).collect();
        if g.iter().all(|&v| v == 0.0) {
            break;
        }
        let mut step = cfg.alpha;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let n1: Vec<f64> = e1.iter().zip(&g).map(|(e, g)| e - step * g).collect();
            let n2: Vec<f64> = e2.iter().zip(&g).map(|(e, g)| e - step * g).collect();
            let nf = sq_norm(&residual_vec(&n1, &n2, ys));
            if !cfg.backtracking || nf <= f {
                accepted = Some((n1, n2, nf));
                break;
            }
            step *= BACKTRACK_FACTOR;
        }
        let Some((n1, n2, nf)) = accepted else { break };
        let improvement = f.sqrt() - nf.sqrt();
        e1 = n1;
        e2 = n2;
        f = nf;
        residuals.push(f.sqrt());
        if cfg.tolerance.is_some_and(|t| improvement < t) {
            break;
        }
    }
    let x1 = codec::decode_dense(codec, &DenseEmbedding::from_flat(p, e1)?)?;
    let x2 = codec::decode_dense(codec, &DenseEmbedding::from_flat(p, e2)?)?;
    Ok(Refinement { x1, x2, residuals })
}
