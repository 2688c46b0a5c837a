//! Sparse count tensor `F[a, b, m]` over (source-1 token, source-2 token,
//! mixture token) triples, and its row-normalized likelihood `P(m | a, b)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{self, check_same_len, Codebook, Signal, Token};
use crate::error::{Error, Result};
use crate::{io, par};

/// Log-probability reported for every unobserved `(a, b, m)` entry.
pub const FLOOR_LOGP: f64 = -27.631_021_115_928_547; // ln(1e-12)

const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTensor {
    k: usize,
    entries: BTreeMap<(Token, Token, Token), u64>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct CountFile {
    k: usize,
    triples: Vec<[u64; 4]>,
}

impl CountTensor {
    pub fn new(k: usize) -> Self {
        CountTensor { k, entries: BTreeMap::new(), total: 0 }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, a: Token, b: Token, m: Token) -> u64 {
        self.entries.get(&(a, b, m)).copied().unwrap_or(0)
    }

    /// Stored triples in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = ((Token, Token, Token), u64)> + '_ {
        self.entries.iter().map(|(&t, &c)| (t, c))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Records one observation of `(a, b) -> m` together with its mirror
    /// `(b, a) -> m`. On the diagonal both land on the same cell.
    pub fn observe(&mut self, a: Token, b: Token, m: Token) -> Result<()> {
        codec::check_tokens(&[a, b, m], self.k)?;
        *self.entries.entry((a, b, m)).or_insert(0) += 1;
        *self.entries.entry((b, a, m)).or_insert(0) += 1;
        self.total += 2;
        Ok(())
    }

    pub fn observe_sequences(&mut self, z1: &[Token], z2: &[Token], m: &[Token]) -> Result<()> {
        check_same_len(z1.len(), z2.len())?;
        check_same_len(z1.len(), m.len())?;
        for ((&a, &b), &c) in z1.iter().zip(z2).zip(m) {
            self.observe(a, b, c)?;
        }
        Ok(())
    }

    /// Element-wise sum.
    pub fn merge(&mut self, other: &CountTensor) -> Result<()> {
        if self.k != other.k {
            return Err(Error::KMismatch { expected: self.k, found: other.k });
        }
        for (&t, &c) in &other.entries {
            *self.entries.entry(t).or_insert(0) += c;
        }
        self.total += other.total;
        Ok(())
    }

    /// Percentage of the K³ cells holding a nonzero count.
    pub fn density(&self) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        let cells = (self.k as f64).powi(3);
        100.0 * self.entries.len() as f64 / cells
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let triples = self
            .entries
            .iter()
            .map(|(&(a, b, m), &c)| [a as u64, b as u64, m as u64, c])
            .collect();
        io::write_json(path, &CountFile { k: self.k, triples })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CountFile = io::read_json(path)?;
        let mut t = CountTensor::new(file.k);
        for [a, b, m, c] in file.triples {
            let (a, b, m) = (a as usize, b as usize, m as usize);
            codec::check_tokens(&[a, b, m], file.k).map_err(|e| Error::Malformed(e.to_string()))?;
            if c == 0 {
                continue;
            }
            if t.entries.insert((a, b, m), c).is_some() {
                return Err(Error::Malformed(format!("duplicate triple ({a}, {b}, {m})")));
            }
            t.total += c;
        }
        if t.entries.iter().any(|(&(a, b, m), c)| t.entries.get(&(b, a, m)) != Some(c)) {
            return Err(Error::Malformed("count tensor is not symmetric".into()));
        }
        Ok(t)
    }
}

/// Counts `(z1, z2, m)` triples over paired sources, where `m` encodes the
/// mixture `(x1 + x2) / 2`. Pairs are sharded across workers and merged in
/// order, so the result does not depend on the thread count.
pub fn build_counts(pairs: &[(Signal, Signal)], codec: &Codebook) -> Result<CountTensor> {
    const SHARD: usize = 64;
    let partials = par::map_chunks(pairs, SHARD, |chunk| -> Result<CountTensor> {
        let mut t = CountTensor::new(codec.k());
        for (x1, x2) in chunk {
            let y = crate::metrics::mix(x1, x2)?;
            let z1 = codec::encode(codec, x1)?;
            let z2 = codec::encode(codec, x2)?;
            let m = codec::encode(codec, &y)?;
            t.observe_sequences(z1.tokens(), z2.tokens(), m.tokens())?;
        }
        Ok(t)
    });
    let mut total = CountTensor::new(codec.k());
    for p in partials {
        total.merge(&p?)?;
    }
    Ok(total)
}

pub fn density(f: &CountTensor) -> f64 {
    f.density()
}

/// Row-normalized likelihood `P(m | a, b)`. Rows with no observations are not
/// stored; every unstored entry reads as [`FLOOR_LOGP`].
#[derive(Clone, Debug)]
pub struct LikelihoodModel {
    k: usize,
    floor_logp: f64,
    rows: BTreeMap<(Token, Token), Vec<(Token, f64)>>,
    // log P[a, b, m] grouped by m, sorted by (a, b)
    by_mixture: Vec<Vec<(Token, Token, f64)>>,
}

impl PartialEq for LikelihoodModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.floor_logp == other.floor_logp && self.rows == other.rows
    }
}

#[derive(Serialize, Deserialize)]
struct LikelihoodFile {
    k: usize,
    floor_logp: f64,
    rows: Vec<(Token, Token, Vec<(Token, f64)>)>,
}

impl LikelihoodModel {
    fn from_rows(
        k: usize,
        floor_logp: f64,
        rows: BTreeMap<(Token, Token), Vec<(Token, f64)>>,
    ) -> Self {
        let mut by_mixture = vec![Vec::new(); k];
        for (&(a, b), row) in &rows {
            for &(m, p) in row {
                by_mixture[m].push((a, b, p.ln()));
            }
        }
        LikelihoodModel { k, floor_logp, rows, by_mixture }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn floor_logp(&self) -> f64 {
        self.floor_logp
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> impl Iterator<Item = ((Token, Token), &[(Token, f64)])> + '_ {
        self.rows.iter().map(|(&ab, r)| (ab, r.as_slice()))
    }

    pub fn row(&self, a: Token, b: Token) -> Option<&[(Token, f64)]> {
        self.rows.get(&(a, b)).map(Vec::as_slice)
    }

    /// `P[a, b, m]`, zero when unobserved.
    pub fn prob(&self, a: Token, b: Token, m: Token) -> f64 {
        self.row(a, b)
            .and_then(|r| r.binary_search_by_key(&m, |&(t, _)| t).ok().map(|i| r[i].1))
            .unwrap_or(0.0)
    }

    /// `ln P[a, b, m]`, or the floor when unobserved.
    pub fn log_prob(&self, a: Token, b: Token, m: Token) -> f64 {
        match self.prob(a, b, m) {
            p if p > 0.0 => p.ln(),
            _ => self.floor_logp,
        }
    }

    /// The K×K log-likelihood matrix for a fixed mixture token.
    pub fn slice(&self, m: Token) -> Result<LikelihoodSlice<'_>> {
        if m >= self.k {
            return Err(Error::TokenOutOfRange { token: m, k: self.k });
        }
        Ok(LikelihoodSlice { k: self.k, floor_logp: self.floor_logp, entries: &self.by_mixture[m] })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows = self.rows.iter().map(|(&(a, b), r)| (a, b, r.clone())).collect();
        io::write_json(path, &LikelihoodFile { k: self.k, floor_logp: self.floor_logp, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: LikelihoodFile = io::read_json(path)?;
        let k = file.k;
        let mut rows = BTreeMap::new();
        let mut min_logp = f64::INFINITY;
        for (a, b, mut row) in file.rows {
            codec::check_tokens(&[a, b], k).map_err(|e| Error::Malformed(e.to_string()))?;
            row.sort_by_key(|&(m, _)| m);
            let mut sum = 0.0;
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Malformed(format!("row ({a}, {b}) repeats m = {}", w[0].0)));
                }
            }
            for &(m, p) in &row {
                codec::check_tokens(&[m], k).map_err(|e| Error::Malformed(e.to_string()))?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Malformed(format!("probability {p} at ({a}, {b}, {m})")));
                }
                sum += p;
                min_logp = min_logp.min(p.ln());
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Malformed(format!("row ({a}, {b}) sums to {sum}")));
            }
            if rows.insert((a, b), row).is_some() {
                return Err(Error::Malformed(format!("duplicate row ({a}, {b})")));
            }
        }
        if !(file.floor_logp < min_logp) {
            return Err(Error::Malformed("floor_logp must be below every stored log-probability".into()));
        }
        if rows.iter().any(|(&(a, b), r)| rows.get(&(b, a)) != Some(r)) {
            return Err(Error::Malformed("likelihood rows are not symmetric".into()));
        }
        Ok(Self::from_rows(k, file.floor_logp, rows))
    }
}

/// Divides each nonempty row `F[a, b, :]` by its sum.
pub fn normalize(f: &CountTensor) -> LikelihoodModel {
    let mut rows: BTreeMap<(Token, Token), Vec<(Token, f64)>> = BTreeMap::new();
    let mut sums: BTreeMap<(Token, Token), u64> = BTreeMap::new();
    for ((a, b, _), c) in f.iter() {
        *sums.entry((a, b)).or_insert(0) += c;
    }
    for ((a, b, m), c) in f.iter() {
        let total = sums[&(a, b)] as f64;
        rows.entry((a, b)).or_default().push((m, c as f64 / total));
    }
    LikelihoodModel::from_rows(f.k, FLOOR_LOGP, rows)
}

/// Sparse view of `ln P[:, :, m]`; unstored cells read as the floor.
#[derive(Clone, Copy, Debug)]
pub struct LikelihoodSlice<'a> {
    k: usize,
    floor_logp: f64,
    entries: &'a [(Token, Token, f64)],
}

impl<'a> LikelihoodSlice<'a> {
    pub fn new(k: usize, floor_logp: f64, entries: &'a [(Token, Token, f64)]) -> Self {
        LikelihoodSlice { k, floor_logp, entries }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn floor_logp(&self) -> f64 {
        self.floor_logp
    }

    /// Stored `(a, b, log p)` cells sorted by `(a, b)`.
    pub fn entries(&self) -> &'a [(Token, Token, f64)] {
        self.entries
    }

    pub fn get(&self, a: Token, b: Token) -> f64 {
        match self.entries.binary_search_by(|&(x, y, _)| (x, y).cmp(&(a, b))) {
            Ok(i) => self.entries[i].2,
            Err(_) => self.floor_logp,
        }
    }

    /// Row-major dense K×K copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![self.floor_logp; self.k * self.k];
        for &(a, b, lp) in self.entries {
            out[a * self.k + b] = lp;
        }
        out
    }
}
