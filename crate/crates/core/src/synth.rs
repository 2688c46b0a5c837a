//! Seeded synthetic source classes.
//!
//! RNG scheme: source slot `j` (0 or 1) of a dataset generated with `seed`
//! draws from `ChaCha8Rng::seed_from_u64(derive_seed(seed, source.seed))` on
//! stream `j`. Signals are produced one after another from that stream.
//!
//! * `markov_levels`: draw a level index with `gen_range(0..L)`; for each
//!   later sample draw `u = gen::<f64>()` and, if `u >= persistence`, redraw
//!   the index with `gen_range(0..L)`. Sample value is `amplitude * level`.
//! * `tone_bank`: each voice draws a frequency index with `gen_range(0..F)`
//!   and a phase `gen::<f64>() * 2π`. Sample `t` is `amplitude / voices *
//!   Σ sin(phase_v)`; afterwards each voice (in order) advances its phase by
//!   `2π f_v`, draws `u = gen::<f64>()` and redraws its frequency index if
//!   `u >= persistence`.
//!
//! All samples are clipped to `[-1, 1]`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Signal;
use crate::error::{Error, Result};
use crate::separator::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    MarkovLevels { levels: Vec<f64> },
    ToneBank {
        /// Cycles per sample.
        frequencies: Vec<f64>,
        #[serde(default = "one")]
        voices: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub class_name: String,
    pub generator: Generator,
    pub persistence: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(format!("source {:?}: {msg}", self.class_name)));
        if !(0.0..=1.0).contains(&self.persistence) {
            return bad(format!("persistence {} outside [0, 1]", self.persistence));
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite".into());
        }
        let (name, values) = match &self.generator {
            Generator::MarkovLevels { levels } => ("level set", levels),
            Generator::ToneBank { frequencies, voices } => {
                if *voices == 0 {
                    return bad("tone bank needs at least one voice".into());
                }
                ("frequency set", frequencies)
            }
        };
        if values.is_empty() {
            return bad(format!("{name} is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad(format!("{name} has non-finite entries"));
        }
        Ok(())
    }

    /// Generator stream for slot `slot` of a dataset seeded with `seed`.
    pub fn rng(&self, seed: u64, slot: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, self.seed));
        rng.set_stream(slot);
        rng
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Signal {
        let mut out = Vec::with_capacity(len);
        match &self.generator {
            Generator::MarkovLevels { levels } => {
                let mut idx = rng.gen_range(0..levels.len());
                out.push(self.amplitude * levels[idx]);
                for _ in 1..len {
                    if rng.gen::<f64>() >= self.persistence {
                        idx = rng.gen_range(0..levels.len());
                    }
                    out.push(self.amplitude * levels[idx]);
                }
            }
            Generator::ToneBank { frequencies, voices } => {
                let mut state: Vec<(usize, f64)> = (0..*voices)
                    .map(|_| {
                        let f = rng.gen_range(0..frequencies.len());
                        (f, rng.gen::<f64>() * TAU)
                    })
                    .collect();
                let gain = self.amplitude / *voices as f64;
                for _ in 0..len {
                    out.push(gain * state.iter().map(|(_, ph)| ph.sin()).sum::<f64>());
                    for (f, ph) in state.iter_mut() {
                        *ph += TAU * frequencies[*f];
                        if rng.gen::<f64>() >= self.persistence {
                            *f = rng.gen_range(0..frequencies.len());
                        }
                    }
                }
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        Signal::new(out).expect("generator output is finite and non-empty")
    }
}

/// `count` independent `(x1, x2)` pairs of length `len`, `x1` from `spec1`
/// and `x2` from `spec2`.
pub fn generate_dataset(
    spec1: &SourceSpec,
    spec2: &SourceSpec,
    count: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<(Signal, Signal)>> {
    spec1.validate()?;
    spec2.validate()?;
    if len == 0 {
        return Err(Error::invalid("signal length must be positive"));
    }
    let mut rng1 = spec1.rng(seed, 0);
    let mut rng2 = spec2.rng(seed, 1);
    Ok((0..count)
        .map(|_| (spec1.sample(len, &mut rng1), spec2.sample(len, &mut rng2)))
        .collect())
}
