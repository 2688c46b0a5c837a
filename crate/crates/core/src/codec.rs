//! Patch codebook quantizer.
//!
//! A signal is cut into consecutive patches of `p` samples; each patch is
//! replaced by the index of its nearest code. Decoding concatenates the codes
//! back, so the decoder is linear in the (dense) code vectors.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{io, par};

pub type Token = usize;

pub const KMEANS_TOLERANCE: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;

/// A finite, non-empty real-valued signal.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Signal(Vec<f64>);

impl Signal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("signal"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("signal sample {i} is not finite")));
        }
        Ok(Signal(samples))
    }

    pub fn zeros(len: usize) -> Self {
        Signal(vec![0.0; len.max(1)])
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to another signal of the same length.
    pub fn l2_distance(&self, other: &Signal) -> Result<f64> {
        check_same_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

impl<'de> Deserialize<'de> for Signal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Signal::new(v).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<Vec<f64>> for Signal {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Signal::new(v)
    }
}

pub(crate) fn check_same_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// A sequence of code indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_range(&self, k: usize) -> Result<()> {
        check_tokens(&self.0, k)
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

pub(crate) fn check_tokens(tokens: &[Token], k: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= k) {
        Some(&token) => Err(Error::TokenOutOfRange { token, k }),
        None => Ok(()),
    }
}

/// Continuous per-patch vectors, not restricted to codebook entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEmbedding {
    patch: usize,
    data: Vec<f64>,
}

impl DenseEmbedding {
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let patch = vectors.first().map(Vec::len).ok_or(Error::Empty("embedding"))?;
        if patch == 0 {
            return Err(Error::invalid("embedding vectors must be non-empty"));
        }
        let mut data = Vec::with_capacity(vectors.len() * patch);
        for v in &vectors {
            check_same_len(patch, v.len())?;
            data.extend_from_slice(v);
        }
        Self::from_flat(patch, data)
    }

    pub fn from_flat(patch: usize, data: Vec<f64>) -> Result<Self> {
        if patch == 0 || data.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if !data.len().is_multiple_of(patch) {
            return Err(Error::NotDivisible { len: data.len(), patch });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding entries must be finite"));
        }
        Ok(DenseEmbedding { patch, data })
    }

    pub fn patch_len(&self) -> usize {
        self.patch
    }

    pub fn num_vectors(&self) -> usize {
        self.data.len() / self.patch
    }

    pub fn vector(&self, s: usize) -> &[f64] {
        &self.data[s * self.patch..(s + 1) * self.patch]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// K distinct code vectors of length P, in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: usize,
    p: usize,
    codes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    k: usize,
    p: usize,
    codes: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(codes: Vec<Vec<f64>>) -> Result<Self> {
        let k = codes.len();
        if k == 0 {
            return Err(Error::Empty("codebook"));
        }
        let p = codes[0].len();
        if p == 0 {
            return Err(Error::invalid("patch length must be at least 1"));
        }
        let mut flat = Vec::with_capacity(k * p);
        for c in &codes {
            check_same_len(p, c.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("code entries must be finite"));
            }
            flat.extend_from_slice(c);
        }
        let book = Codebook { k, p, codes: flat };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| lex_cmp(book.code(a), book.code(b)));
        if order.windows(2).any(|w| book.code(w[0]) == book.code(w[1])) {
            return Err(Error::invalid("codes must be pairwise distinct"));
        }
        Ok(book)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn patch_len(&self) -> usize {
        self.p
    }

    pub fn code(&self, token: Token) -> &[f64] {
        &self.codes[token * self.p..(token + 1) * self.p]
    }

    pub fn codes(&self) -> Vec<Vec<f64>> {
        self.codes.chunks(self.p).map(<[f64]>::to_vec).collect()
    }

    /// Index of the nearest code under squared Euclidean distance; ties go to
    /// the smallest index.
    pub fn nearest(&self, patch: &[f64]) -> Token {
        debug_assert_eq!(patch.len(), self.p);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, code) in self.codes.chunks_exact(self.p).enumerate() {
            let d = sq_dist(patch, code);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn num_patches(&self, len: usize) -> Result<usize> {
        if !len.is_multiple_of(self.p) {
            return Err(Error::NotDivisible { len, patch: self.p });
        }
        Ok(len / self.p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_json(path, &CodebookFile { k: self.k, p: self.p, codes: self.codes() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CodebookFile = io::read_json(path)?;
        let book = Codebook::new(file.codes).map_err(|e| Error::Malformed(e.to_string()))?;
        if book.k != file.k || book.p != file.p {
            return Err(Error::Malformed(format!(
                "header says k={}, p={} but codes are {}x{}",
                file.k, file.p, book.k, book.p
            )));
        }
        Ok(book)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Quantizes `x` into one token per patch.
pub fn encode(codec: &Codebook, x: &Signal) -> Result<TokenSeq> {
    codec.num_patches(x.len())?;
    Ok(TokenSeq(x.samples().chunks_exact(codec.p).map(|patch| codec.nearest(patch)).collect()))
}

pub fn decode(codec: &Codebook, z: &TokenSeq) -> Result<Signal> {
    if z.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    z.check_range(codec.k)?;
    let mut out = Vec::with_capacity(z.len() * codec.p);
    for &t in z.tokens() {
        out.extend_from_slice(codec.code(t));
    }
    Ok(Signal(out))
}

/// Replaces every token by its code vector.
pub fn embed(codec: &Codebook, z: &TokenSeq) -> Result<DenseEmbedding> {
    let x = decode(codec, z)?;
    DenseEmbedding::from_flat(codec.p, x.into_inner())
}

pub fn decode_dense(codec: &Codebook, e: &DenseEmbedding) -> Result<Signal> {
    check_same_len(codec.p, e.patch)?;
    Signal::new(e.data.clone())
}

/// Splits every corpus signal into length-`p` patches, flattened in order.
pub fn extract_patches(corpus: &[Signal], p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::invalid("patch length must be at least 1"));
    }
    let mut out = Vec::new();
    for x in corpus {
        if x.len() % p != 0 {
            return Err(Error::NotDivisible { len: x.len(), patch: p });
        }
        out.extend_from_slice(x.samples());
    }
    Ok(out)
}

fn count_distinct(patches: &[f64], p: usize) -> usize {
    let mut rows: Vec<&[f64]> = patches.chunks_exact(p).collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.dedup_by(|a, b| a == b);
    rows.len()
}

/// k-means++ seeding over flattened patches. Requires at least `k` distinct
/// patches so that every draw has positive total weight.
pub fn kmeans_pp_init(patches: &[f64], p: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = patches.len() / p;
    let row = |i: usize| &patches[i * p..(i + 1) * p];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(row(rng.gen_range(0..n)).to_vec());
    let mut d2: Vec<f64> = par::map_range(n, |i| sq_dist(row(i), &centers[0]));
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("k-means++ requires at least k distinct patches");
        let c = row(pick).to_vec();
        d2 = par::map_range(n, |i| d2[i].min(sq_dist(row(i), &c)));
        centers.push(c);
    }
    centers
}

/// Learns a codebook with k-means over all length-`p` patches of `corpus`.
///
/// Seeding is k-means++ from `seed`; Lloyd iterations run until the largest
/// centroid move drops below [`KMEANS_TOLERANCE`] or [`KMEANS_MAX_ITER`]
/// iterations. Codes are returned in lexicographic order.
pub fn fit_codebook(corpus: &[Signal], k: usize, p: usize, seed: u64) -> Result<Codebook> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let patches = extract_patches(corpus, p)?;
    let distinct = count_distinct(&patches, p);
    if distinct < k {
        return Err(Error::CorpusTooSmall { distinct, k });
    }
    let mut centers = Codebook {
        k,
        p,
        codes: kmeans_pp_init(&patches, p, k, seed).concat(),
    };
    let rows: Vec<&[f64]> = patches.chunks_exact(p).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let labels = par::map_slice(&rows, |r| centers.nearest(r));
        let mut sums = vec![0.0; k * p];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l * p..(l + 1) * p].iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = counts[c] as f64;
            let old = centers.code(c).to_vec();
            let new: Vec<f64> = sums[c * p..(c + 1) * p].iter().map(|s| s / inv).collect();
            shift = shift.max(sq_dist(&old, &new).sqrt());
            centers.codes[c * p..(c + 1) * p].copy_from_slice(&new);
        }
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    let mut codes = centers.codes();
    codes.sort_by(|a, b| lex_cmp(a, b));
    Codebook::new(codes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec()).unwrap()
    }

    fn binary() -> Codebook {
        Codebook::new(vec![vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn fit_two_scalar_patches() {
        let book = fit_codebook(&[sig(&[0.0, 0.0, 1.0, 1.0])], 2, 1, 3).unwrap();
        assert_eq!(book.codes(), vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn fit_rejects_degenerate_corpus() {
        let z = sig(&[0.0; 8]);
        let err = fit_codebook(&[z.clone(), z], 2, 1, 0).unwrap_err();
        assert!(matches!(err, Error::CorpusTooSmall { distinct: 1, k: 2 }));
    }

    #[test]
    fn fit_rejects_bad_length() {
        let err = fit_codebook(&[sig(&[0.0, 1.0, 2.0])], 2, 2, 0).unwrap_err();
        assert!(matches!(err, Error::NotDivisible { len: 3, patch: 2 }));
    }

    #[test]
    fn encode_exact_patches() {
        let z = encode(&binary(), &sig(&[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(z.tokens(), &[0, 1, 1, 0]);
    }

    #[test]
    fn encode_ties_take_smallest_index() {
        let z = encode(&binary(), &sig(&[0.5])).unwrap();
        assert_eq!(z.tokens(), &[0]);
    }

    #[test]
    fn decode_concatenates() {
        let x = decode(&binary(), &TokenSeq(vec![1, 0])).unwrap();
        assert_eq!(x.samples(), &[1.0, 0.0]);
        let single = decode(&binary(), &TokenSeq(vec![1])).unwrap();
        assert_eq!(single.samples(), binary().code(1));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let err = decode(&binary(), &TokenSeq(vec![0, 2])).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { token: 2, k: 2 }));
    }

    #[test]
    fn decode_dense_of_embedding_matches_decode() {
        let book = Codebook::new(vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let z = TokenSeq(vec![2, 0, 1, 1]);
        let e = embed(&book, &z).unwrap();
        assert_eq!(decode_dense(&book, &e).unwrap(), decode(&book, &z).unwrap());
        let doubled = DenseEmbedding::from_flat(2, e.as_flat().iter().map(|v| 2.0 * v).collect()).unwrap();
        let a = decode_dense(&book, &doubled).unwrap();
        for (x, y) in a.samples().iter().zip(decode(&book, &z).unwrap().samples()) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn decode_dense_rejects_wrong_width() {
        let e = DenseEmbedding::from_vectors(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(decode_dense(&binary(), &e), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn codebook_rejects_duplicates() {
        assert!(Codebook::new(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn signal_rejects_non_finite() {
        assert!(Signal::new(vec![0.0, f64::NAN]).is_err());
        assert!(Signal::new(vec![]).is_err());
    }

    #[test]
    fn codebook_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codec.json");
        let book = Codebook::new(vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-17, 7.0]]).unwrap();
        book.save(&path).unwrap();
        assert_eq!(Codebook::load(&path).unwrap(), book);
    }
}
