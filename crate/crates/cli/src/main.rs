use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use latsep::checks;
use latsep::experiment::{self, ExperimentConfig};
use latsep::io::{self, PairRecord, SignalRecord, TokenRecord};
use latsep::separator::derive_seed;
use latsep::{
    Codebook, Error, LikelihoodModel, NGramPrior, PriorPair, RefinementConfig, Result, SeparationConfig, Signal,
    TokenSeq,
};

#[derive(Parser)]
#[command(name = "latsep", version, about = "Two-source separation over quantized token sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a patch codebook with k-means on a signal dataset.
    CodecFit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize signals into token sequences.
    Encode {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn token sequences back into signals.
    Decode {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count latent triples over paired sources and write the likelihood.
    LikelihoodBuild {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw count tensor.
        #[arg(long)]
        counts_out: Option<PathBuf>,
    },
    /// Train an n-gram token prior on a signal dataset.
    PriorTrain {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = latsep::prior::DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = latsep::prior::DEFAULT_DELTA)]
        delta: f64,
        /// Only use records of this class.
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Separate every mixture in a signal dataset.
    Separate {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        likelihood: PathBuf,
        #[arg(long)]
        prior1: PathBuf,
        #[arg(long)]
        prior2: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        refine_steps: Option<usize>,
        #[arg(long)]
        refine_alpha: Option<f64>,
        #[arg(long)]
        refine_backtrack: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a synthetic benchmark described by an experiment config.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-check samplers and models against exact enumeration.
    OracleCheck {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the train and test sets of an experiment config as JSON lines.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct SeparationRecord {
    id: String,
    x1: Signal,
    x2: Signal,
    z1: TokenSeq,
    z2: TokenSeq,
    logscore: f64,
    residual: f64,
}

fn signals(path: &Path) -> Result<Vec<(SignalRecord, Signal)>> {
    io::read_jsonl::<SignalRecord>(path)?
        .into_iter()
        .map(|r| {
            let s = Signal::new(r.samples.clone()).map_err(|e| Error::Malformed(format!("{}: {e}", r.id)))?;
            Ok((r, s))
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::CodecFit { input, k, p, seed, out } => {
            let corpus: Vec<Signal> = signals(&input)?.into_iter().map(|(_, s)| s).collect();
            let book = latsep::fit_codebook(&corpus, k, p, seed)?;
            book.save(&out)?;
        }
        Command::Encode { codec, input, out } => {
            let book = Codebook::load(&codec)?;
            let records = signals(&input)?
                .into_iter()
                .map(|(r, s)| {
                    let z = latsep::encode(&book, &s)?;
                    Ok(TokenRecord { id: r.id, class: r.class, tokens: z.0 })
                })
                .collect::<Result<Vec<_>>>()?;
            io::write_jsonl(&out, &records)?;
        }
        Command::Decode { codec, input, out } => {
            let book = Codebook::load(&codec)?;
            let records = io::read_jsonl::<TokenRecord>(&input)?
                .into_iter()
                .map(|r| {
                    let x = latsep::decode(&book, &TokenSeq(r.tokens))?;
                    Ok(SignalRecord { id: r.id, class: r.class, samples: x.into_inner() })
                })
                .collect::<Result<Vec<_>>>()?;
            io::write_jsonl(&out, &records)?;
        }
        Command::LikelihoodBuild { codec, pairs, out, counts_out } => {
            let book = Codebook::load(&codec)?;
            let pairs = io::read_jsonl::<PairRecord>(&pairs)?
                .into_iter()
                .map(|r| Ok((Signal::new(r.x1)?, Signal::new(r.x2)?)))
                .collect::<Result<Vec<_>>>()?;
            let counts = latsep::build_counts(&pairs, &book)?;
            if let Some(path) = counts_out {
                counts.save(path)?;
            }
            latsep::normalize(&counts).save(&out)?;
            println!("density {:.6} % ({} nonzero of K^3 = {})", counts.density(), counts.nnz(), book.k().pow(3));
        }
        Command::PriorTrain { codec, input, order, delta, class, out } => {
            let book = Codebook::load(&codec)?;
            let corpus = signals(&input)?
                .into_iter()
                .filter(|(r, _)| class.as_ref().is_none_or(|c| &r.class == c))
                .map(|(_, s)| latsep::encode(&book, &s))
                .collect::<Result<Vec<_>>>()?;
            latsep::train_ngram(&corpus, book.k(), order, delta)?.save(&out)?;
        }
        Command::Separate {
            mixture,
            codec,
            likelihood,
            prior1,
            prior2,
            config,
            refine_steps,
            refine_alpha,
            refine_backtrack,
            out,
        } => {
            let book = Codebook::load(&codec)?;
            let lik = LikelihoodModel::load(&likelihood)?;
            let p1 = NGramPrior::load(&prior1)?;
            let p2 = NGramPrior::load(&prior2)?;
            let priors = PriorPair::new(&p1, &p2)?;
            let cfg: SeparationConfig = io::read_json(&config)?;
            let refinement = (refine_steps.is_some() || refine_alpha.is_some() || refine_backtrack).then(|| {
                let d = RefinementConfig::default();
                RefinementConfig {
                    steps: refine_steps.unwrap_or(d.steps),
                    alpha: refine_alpha.unwrap_or(d.alpha),
                    backtracking: refine_backtrack,
                    tolerance: None,
                }
            });
            let records = signals(&mixture)?
                .into_iter()
                .enumerate()
                .map(|(i, (r, y))| {
                    let cfg = SeparationConfig { seed: derive_seed(cfg.seed, i as u64), ..cfg.clone() };
                    let res = latsep::separate(&y, priors, &lik, &book, &cfg)?;
                    let (x1, x2) = match &refinement {
                        Some(rc) => latsep::refine(&res.x1, &res.x2, &y, &book, rc)?,
                        None => (res.x1, res.x2),
                    };
                    let residual = latsep::metrics::mix(&x1, &x2)?.l2_distance(&y)?;
                    Ok(SeparationRecord {
                        id: r.id,
                        x1,
                        x2,
                        z1: res.z1,
                        z2: res.z2,
                        logscore: res.logscore,
                        residual,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            create_dir(&out)?;
            io::write_jsonl(out.join("separations.jsonl"), &records)?;
        }
        Command::Evaluate { config, out } => {
            let report = experiment::run_experiment(&config)?;
            io::write_json(&out, &report)?;
            print!("{}", report.table());
        }
        Command::OracleCheck { out } => {
            let results = checks::run_oracle_checks()?;
            io::write_json(&out, &results)?;
            for r in &results {
                println!("{:<44} {}  max_error = {:.3e}", r.test, if r.pass { "PASS" } else { "FAIL" }, r.max_error);
            }
            if results.iter().any(|r| !r.pass) {
                return Err(Error::InvalidParameter("oracle cross-check failed".into()));
            }
        }
        Command::Generate { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            create_dir(&out)?;
            write_split(&cfg, &cfg.train_set()?, "train", &out)?;
            write_split(&cfg, &cfg.test_set()?, "test", &out)?;
        }
    }
    Ok(())
}

/// `<split>_pairs.jsonl`, `<split>_sources.jsonl` (both classes, labelled) and
/// `<split>_mixtures.jsonl`.
fn write_split(cfg: &ExperimentConfig, data: &[(Signal, Signal)], split: &str, dir: &Path) -> Result<()> {
    let [c1, c2] = [&cfg.sources[0].class_name, &cfg.sources[1].class_name];
    let mut pairs = Vec::new();
    let mut sources = Vec::new();
    let mut mixtures = Vec::new();
    for (i, (x1, x2)) in data.iter().enumerate() {
        let id = format!("{split}-{i:05}");
        pairs.push(PairRecord { id: id.clone(), x1: x1.samples().to_vec(), x2: x2.samples().to_vec() });
        sources.push(SignalRecord { id: format!("{id}-1"), class: c1.clone(), samples: x1.samples().to_vec() });
        sources.push(SignalRecord { id: format!("{id}-2"), class: c2.clone(), samples: x2.samples().to_vec() });
        let y = latsep::metrics::mix(x1, x2)?;
        mixtures.push(SignalRecord { id, class: "mixture".into(), samples: y.into_inner() });
    }
    io::write_jsonl(dir.join(format!("{split}_pairs.jsonl")), &pairs)?;
    io::write_jsonl(dir.join(format!("{split}_sources.jsonl")), &sources)?;
    io::write_jsonl(dir.join(format!("{split}_mixtures.jsonl")), &mixtures)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_file_error() { 2 } else { 1 })
        }
    }
}
