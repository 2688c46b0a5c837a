//! End-to-end synthetic benchmark: generate paired sources, fit the codec,
//! likelihood and priors, separate every test mixture, and score the
//! estimates with PSNR against the ground truth.
//!
//! Scoring is permutation invariant: both source-to-estimate assignments are
//! evaluated and the one with the higher mean PSNR is kept. Aggregate means
//! clamp exact reconstructions to [`PSNR_CAP_DB`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{self, Codebook, Signal};
use crate::error::{Error, Result};
use crate::likelihood::{self, LikelihoodModel};
use crate::metrics::{self, psnr};
use crate::prior::{self, NGramPrior, PriorPair};
use crate::refine::{self, RefinementConfig};
use crate::separator::{self, derive_seed, SeparationConfig};
use crate::synth::{self, SourceSpec};
use crate::{io, par};

/// Value used for infinite PSNR when averaging.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_PEAK: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecSettings {
    pub k: usize,
    pub p: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Train one prior on both classes and use it for both sources.
    #[serde(default)]
    pub shared: bool,
}

fn default_order() -> usize {
    prior::DEFAULT_ORDER
}

fn default_delta() -> f64 {
    prior::DEFAULT_DELTA
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings { order: default_order(), delta: default_delta(), shared: false }
    }
}

/// Pre-built model files, resolved relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPaths {
    pub codec: PathBuf,
    pub likelihood: PathBuf,
    pub prior1: PathBuf,
    pub prior2: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sources: [SourceSpec; 2],
    pub signal_length: usize,
    pub train_pairs: usize,
    pub test_mixtures: usize,
    #[serde(default)]
    pub seed: u64,
    pub codec: CodecSettings,
    #[serde(default)]
    pub prior: PriorSettings,
    pub separation: SeparationConfig,
    #[serde(default)]
    pub refinement: Option<RefinementConfig>,
    #[serde(default)]
    pub models: Option<ModelPaths>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        io::read_json(path)
    }

    /// Training pairs for the codec, likelihood and priors.
    pub fn train_set(&self) -> Result<Vec<(Signal, Signal)>> {
        let [a, b] = &self.sources;
        synth::generate_dataset(a, b, self.train_pairs, self.signal_length, derive_seed(self.seed, 0))
    }

    /// Ground-truth test pairs; mixture `i` is `mix(x1_i, x2_i)`.
    pub fn test_set(&self) -> Result<Vec<(Signal, Signal)>> {
        let [a, b] = &self.sources;
        synth::generate_dataset(a, b, self.test_mixtures, self.signal_length, derive_seed(self.seed, 1))
    }
}

/// Everything needed to separate mixtures.
#[derive(Clone, Debug)]
pub struct Models {
    pub codec: Codebook,
    pub likelihood: LikelihoodModel,
    pub prior1: NGramPrior,
    pub prior2: NGramPrior,
    pub density: Option<f64>,
}

impl Models {
    pub fn priors(&self) -> Result<PriorPair<'_>> {
        let pair = PriorPair::new(&self.prior1, &self.prior2)?;
        for found in [self.likelihood.k(), self.codec.k()] {
            if found != pair.k() {
                return Err(Error::KMismatch { expected: pair.k(), found });
            }
        }
        Ok(pair)
    }

    pub fn load(paths: &ModelPaths, base: &Path) -> Result<Self> {
        let models = Models {
            codec: Codebook::load(base.join(&paths.codec))?,
            likelihood: LikelihoodModel::load(base.join(&paths.likelihood))?,
            prior1: NGramPrior::load(base.join(&paths.prior1))?,
            prior2: NGramPrior::load(base.join(&paths.prior2))?,
            density: None,
        };
        models.priors()?;
        Ok(models)
    }

    /// Fits codec, likelihood tensor and priors on `train`.
    pub fn train(train: &[(Signal, Signal)], codec: &CodecSettings, prior: &PriorSettings) -> Result<Self> {
        let corpus: Vec<Signal> = train.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        let book = codec::fit_codebook(&corpus, codec.k, codec.p, codec.seed)?;
        let counts = likelihood::build_counts(train, &book)?;
        let encode_all = |pick: fn(&(Signal, Signal)) -> &Signal| -> Result<Vec<_>> {
            train.iter().map(|pair| codec::encode(&book, pick(pair))).collect()
        };
        let z1 = encode_all(|p| &p.0)?;
        let z2 = encode_all(|p| &p.1)?;
        let (prior1, prior2) = if prior.shared {
            let all: Vec<_> = z1.iter().chain(&z2).cloned().collect();
            let shared = prior::train_ngram(&all, book.k(), prior.order, prior.delta)?;
            (shared.clone(), shared)
        } else {
            (
                prior::train_ngram(&z1, book.k(), prior.order, prior.delta)?,
                prior::train_ngram(&z2, book.k(), prior.order, prior.delta)?,
            )
        };
        Ok(Models {
            likelihood: likelihood::normalize(&counts),
            density: Some(counts.density()),
            codec: book,
            prior1,
            prior2,
        })
    }
}

/// Per-mixture outcome. PSNR values serialize as numbers, or `"inf"` for an
/// exact reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureScore {
    pub index: usize,
    #[serde(with = "psnr_serde")]
    pub psnr1: f64,
    #[serde(with = "psnr_serde")]
    pub psnr2: f64,
    /// Estimates were assigned to the sources in swapped order.
    pub swapped: bool,
    #[serde(with = "psnr_serde")]
    pub baseline_psnr1: f64,
    #[serde(with = "psnr_serde")]
    pub baseline_psnr2: f64,
    pub residual: f64,
    pub logscore: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub num_mixtures: usize,
    pub k: usize,
    pub patch_len: usize,
    pub signal_length: usize,
    pub separation: SeparationConfig,
    pub refinement: Option<RefinementConfig>,
    /// Percentage of nonzero likelihood entries; absent for loaded models.
    pub likelihood_density: Option<f64>,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub baseline_mean_psnr: f64,
    pub baseline_std_psnr: f64,
    pub mixtures: Vec<MixtureScore>,
    /// Wall-clock seconds per separation; not serialized so reports stay
    /// reproducible byte for byte.
    #[serde(skip)]
    pub seconds: Vec<f64>,
}

mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
        }
    }
}

fn capped(v: f64) -> f64 {
    v.min(PSNR_CAP_DB)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// PSNRs of `(est1, est2)` against `(ref1, ref2)` under the better of the
/// two assignments. Returns `(psnr_for_ref1, psnr_for_ref2, swapped)`.
pub fn best_permutation_psnr(est: (&Signal, &Signal), truth: (&Signal, &Signal)) -> Result<(f64, f64, bool)> {
    let direct = (psnr(est.0, truth.0, PSNR_PEAK)?, psnr(est.1, truth.1, PSNR_PEAK)?);
    let swapped = (psnr(est.1, truth.0, PSNR_PEAK)?, psnr(est.0, truth.1, PSNR_PEAK)?);
    let score = |(a, b): (f64, f64)| capped(a) + capped(b);
    if score(swapped) > score(direct) {
        Ok((swapped.0, swapped.1, true))
    } else {
        Ok((direct.0, direct.1, false))
    }
}

/// Separates each test mixture and scores it.
pub fn evaluate(
    models: &Models,
    test: &[(Signal, Signal)],
    sep: &SeparationConfig,
    refinement: Option<&RefinementConfig>,
) -> Result<ExperimentReport> {
    let priors = models.priors()?;
    sep.validate(priors.k())?;
    if let Some(r) = refinement {
        r.validate()?;
    }
    let outcomes = par::map_range(test.len(), |i| -> Result<(MixtureScore, f64)> {
        let (x1, x2) = &test[i];
        let y = metrics::mix(x1, x2)?;
        let started = Instant::now();
        let cfg = SeparationConfig { seed: derive_seed(sep.seed, i as u64), ..sep.clone() };
        let res = separator::separate(&y, priors, &models.likelihood, &models.codec, &cfg)?;
        let (e1, e2) = match refinement {
            Some(r) => refine::refine(&res.x1, &res.x2, &y, &models.codec, r)?,
            None => (res.x1.clone(), res.x2.clone()),
        };
        let seconds = started.elapsed().as_secs_f64();
        let (psnr1, psnr2, swapped) = best_permutation_psnr((&e1, &e2), (x1, x2))?;
        let (b1, b2) = metrics::average_baseline(&y);
        let score = MixtureScore {
            index: i,
            psnr1,
            psnr2,
            swapped,
            baseline_psnr1: psnr(&b1, x1, PSNR_PEAK)?,
            baseline_psnr2: psnr(&b2, x2, PSNR_PEAK)?,
            residual: res.residual,
            logscore: res.logscore,
        };
        Ok((score, seconds))
    });
    let mut mixtures = Vec::with_capacity(test.len());
    let mut seconds = Vec::with_capacity(test.len());
    for o in outcomes {
        let (m, s) = o?;
        mixtures.push(m);
        seconds.push(s);
    }
    let all: Vec<f64> = mixtures.iter().flat_map(|m| [capped(m.psnr1), capped(m.psnr2)]).collect();
    let base: Vec<f64> = mixtures
        .iter()
        .flat_map(|m| [capped(m.baseline_psnr1), capped(m.baseline_psnr2)])
        .collect();
    let (mean_psnr, std_psnr) = mean_std(&all);
    let (baseline_mean_psnr, baseline_std_psnr) = mean_std(&base);
    Ok(ExperimentReport {
        num_mixtures: test.len(),
        k: models.codec.k(),
        patch_len: models.codec.patch_len(),
        signal_length: test.first().map_or(0, |(x, _)| x.len()),
        separation: sep.clone(),
        refinement: refinement.cloned(),
        likelihood_density: models.density,
        mean_psnr,
        std_psnr,
        baseline_mean_psnr,
        baseline_std_psnr,
        mixtures,
        seconds,
    })
}

/// Builds or loads the models described by `cfg` and evaluates the test set.
/// Relative model paths resolve against `base_dir`.
pub fn run(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentReport> {
    let models = match &cfg.models {
        Some(paths) => Models::load(paths, base_dir)?,
        None => Models::train(&cfg.train_set()?, &cfg.codec, &cfg.prior)?,
    };
    evaluate(&models, &cfg.test_set()?, &cfg.separation, cfg.refinement.as_ref())
}

pub fn run_experiment(config_path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = config_path.as_ref();
    let cfg = ExperimentConfig::load(path)?;
    run(&cfg, path.parent().unwrap_or(Path::new(".")))
}

impl ExperimentReport {
    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let sampler = match self.separation.sampler {
            separator::Sampler::Greedy => "greedy".to_string(),
            separator::Sampler::Ancestral => "ancestral".to_string(),
            separator::Sampler::Topk { k } => format!("top-k (k = {k})"),
            separator::Sampler::Beam { b } => format!("beam (B = {b})"),
        };
        let _ = writeln!(out, "mixtures   {:>8}", self.num_mixtures);
        let _ = writeln!(out, "K / P / N  {:>8}", format!("{}/{}/{}", self.k, self.patch_len, self.signal_length));
        let _ = writeln!(out, "sampler    {sampler}, lambda = {}, candidates = {}", self.separation.lambda, self.separation.num_candidates);
        if let Some(r) = &self.refinement {
            let _ = writeln!(out, "refinement T = {}, alpha = {}{}", r.steps, r.alpha, if r.backtracking { ", backtracking" } else { "" });
        }
        if let Some(d) = self.likelihood_density {
            let _ = writeln!(out, "density    {d:.4} %");
        }
        let _ = writeln!(out, "{:<12}{:>12}{:>10}", "method", "PSNR (dB)", "std");
        let _ = writeln!(out, "{:<12}{:>12.2}{:>10.2}", "average", self.baseline_mean_psnr, self.baseline_std_psnr);
        let _ = writeln!(out, "{:<12}{:>12.2}{:>10.2}", "separated", self.mean_psnr, self.std_psnr);
        if !self.seconds.is_empty() {
            let (m, s) = mean_std(&self.seconds);
            let _ = writeln!(out, "time / separation  {:.4} s ± {:.4} s", m, s);
        }
        out
    }
}
