//! Count-based autoregressive token priors.
//!
//! An order-`n` model conditions on at most the last `n - 1` tokens. Every
//! occurrence is counted under each suffix of its context up to that length,
//! so the empty context holds unigram counts and shorter contexts near the
//! start of a sequence are always populated.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{check_tokens, Token, TokenSeq};
use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    counts: BTreeMap<Token, u64>,
    total: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramPrior {
    k: usize,
    order: usize,
    delta: f64,
    contexts: BTreeMap<Vec<Token>, ContextCounts>,
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    k: usize,
    order: usize,
    delta: f64,
    contexts: Vec<(Vec<Token>, Vec<(Token, u64)>)>,
}

/// Trains an order-`order` model with add-`delta` smoothing.
pub fn train_ngram(corpus: &[TokenSeq], k: usize, order: usize, delta: f64) -> Result<NGramPrior> {
    NGramPrior::train(corpus, k, order, delta)
}

impl NGramPrior {
    pub fn train(corpus: &[TokenSeq], k: usize, order: usize, delta: f64) -> Result<Self> {
        if corpus.is_empty() || corpus.iter().all(TokenSeq::is_empty) {
            return Err(Error::Empty("prior training corpus"));
        }
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("smoothing delta {delta} must be finite and >= 0")));
        }
        let mut contexts: BTreeMap<Vec<Token>, ContextCounts> = BTreeMap::new();
        for seq in corpus {
            let z = seq.tokens();
            check_tokens(z, k)?;
            for (s, &tok) in z.iter().enumerate() {
                let longest = s.min(order - 1);
                for len in 0..=longest {
                    let entry = contexts.entry(z[s - len..s].to_vec()).or_default();
                    *entry.counts.entry(tok).or_insert(0) += 1;
                    entry.total += 1;
                }
            }
        }
        Ok(NGramPrior { k, order, delta, contexts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    fn truncate<'c>(&self, context: &'c [Token]) -> &'c [Token] {
        let keep = context.len().min(self.order - 1);
        &context[context.len() - keep..]
    }

    /// Raw count of `token` after the (truncated) context.
    pub fn count(&self, context: &[Token], token: Token) -> u64 {
        self.contexts
            .get(self.truncate(context))
            .and_then(|c| c.counts.get(&token).copied())
            .unwrap_or(0)
    }

    /// `p(· | context)` over all K tokens.
    pub fn conditional(&self, context: &[Token]) -> Result<Vec<f64>> {
        check_tokens(context, self.k)?;
        let mut out = vec![0.0; self.k];
        self.fill_conditional(context, &mut out);
        Ok(out)
    }

    /// `ln p(· | context)`; contexts must already be range checked.
    pub(crate) fn fill_log_conditional(&self, context: &[Token], out: &mut [f64]) {
        self.fill_conditional(context, out);
        for v in out.iter_mut() {
            *v = v.ln();
        }
    }

    fn fill_conditional(&self, context: &[Token], out: &mut [f64]) {
        let k = self.k as f64;
        match self.contexts.get(self.truncate(context)) {
            Some(c) if c.total > 0 => {
                let denom = c.total as f64 + self.delta * k;
                out.fill(self.delta / denom);
                for (&t, &n) in &c.counts {
                    out[t] = (n as f64 + self.delta) / denom;
                }
            }
            _ => out.fill(1.0 / k),
        }
    }

    /// `Σ_s ln p(z_s | z_<s)`.
    pub fn sequence_logprob(&self, z: &TokenSeq) -> Result<f64> {
        let tokens = z.tokens();
        check_tokens(tokens, self.k)?;
        let mut buf = vec![0.0; self.k];
        let mut total = 0.0;
        for s in 0..tokens.len() {
            self.fill_conditional(&tokens[..s], &mut buf);
            total += buf[tokens[s]].ln();
        }
        Ok(total)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let contexts = self
            .contexts
            .iter()
            .map(|(ctx, c)| (ctx.clone(), c.counts.iter().map(|(&t, &n)| (t, n)).collect()))
            .collect();
        io::write_json(
            path,
            &PriorFile { k: self.k, order: self.order, delta: self.delta, contexts },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: PriorFile = io::read_json(path)?;
        let bad = |msg: String| Error::Malformed(msg);
        if file.k == 0 || file.order == 0 || !(file.delta >= 0.0 && file.delta.is_finite()) {
            return Err(bad(format!(
                "invalid header k={} order={} delta={}",
                file.k, file.order, file.delta
            )));
        }
        let mut contexts = BTreeMap::new();
        for (ctx, counts) in file.contexts {
            if ctx.len() >= file.order {
                return Err(bad(format!("context {ctx:?} too long for order {}", file.order)));
            }
            check_tokens(&ctx, file.k).map_err(|e| bad(e.to_string()))?;
            let mut entry = ContextCounts::default();
            for (t, n) in counts {
                check_tokens(&[t], file.k).map_err(|e| bad(e.to_string()))?;
                if entry.counts.insert(t, n).is_some() {
                    return Err(bad(format!("context {ctx:?} repeats token {t}")));
                }
                entry.total += n;
            }
            if contexts.insert(ctx.clone(), entry).is_some() {
                return Err(bad(format!("duplicate context {ctx:?}")));
            }
        }
        Ok(NGramPrior { k: file.k, order: file.order, delta: file.delta, contexts })
    }
}

/// The two source priors. Both may refer to the same model.
#[derive(Clone, Copy, Debug)]
pub struct PriorPair<'a> {
    pub first: &'a NGramPrior,
    pub second: &'a NGramPrior,
}

impl<'a> PriorPair<'a> {
    pub fn new(first: &'a NGramPrior, second: &'a NGramPrior) -> Result<Self> {
        if first.k != second.k {
            return Err(Error::KMismatch { expected: first.k, found: second.k });
        }
        Ok(PriorPair { first, second })
    }

    pub fn shared(prior: &'a NGramPrior) -> Self {
        PriorPair { first: prior, second: prior }
    }

    pub fn k(&self) -> usize {
        self.first.k
    }
}
