//! Two-source separation in a discrete latent space.
//!
//! Signals are quantized into token sequences by a patch codebook
//! ([`codec`]). Two autoregressive token priors ([`prior`]) and a sparse
//! count-based likelihood `P(m | z1, z2)` ([`likelihood`]) are combined step
//! by step into a joint posterior over token pairs, which is decoded by
//! greedy, ancestral, top-k or beam search sampling ([`separator`]).
//! Decoded estimates can be refined by gradient descent on their dense
//! embeddings ([`refine`]). [`oracle`] enumerates the exact posterior on
//! small instances, and [`synth`] / [`experiment`] provide the synthetic
//! benchmark harness.

pub mod checks;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod oracle;
mod par;
pub mod prior;
pub mod refine;
pub mod separator;
pub mod synth;

pub use codec::{decode, decode_dense, encode, fit_codebook, Codebook, DenseEmbedding, Signal, Token, TokenSeq};
pub use error::{Error, Result};
pub use likelihood::{build_counts, normalize, CountTensor, LikelihoodModel, LikelihoodSlice};
pub use par::is_parallel;
pub use prior::{train_ngram, NGramPrior, PriorPair};
pub use refine::{refine, RefinementConfig};
pub use separator::{separate, Sampler, SeparationConfig, SeparationResult};
