//! Document-level soft guardrail.
//!
//! A document is embedded by mean-pooling its source token embeddings and
//! scored by the mean Euclidean distance to its `k` nearest neighbours in a
//! cache of known case-report embeddings. Large distances mean the document
//! looks unlike anything the model was trained on; above the threshold it is
//! flagged and never reaches translation.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::icsr::{serialize_for_model, IcsrDocument};
use crate::model::{AdapterError, ModelAdapter};

pub const CACHE_MAGIC: &[u8; 4] = b"PVGC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DluqError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds cache size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("k must be positive")]
    InvalidK,
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("target false-positive rate {0} is outside (0, 1)")]
    InvalidFpr(f64),
    #[error("embedding document {doc_id}: {source}")]
    Embedder { doc_id: String, source: AdapterError },
    #[error("cache format: {0}")]
    Format(String),
    #[error("cache io: {0}")]
    Io(String),
}

impl From<std::io::Error> for DluqError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Coordinate-wise arithmetic mean.
pub fn pool_embedding(token_embeddings: &[Vec<f64>]) -> Result<Vec<f64>, DluqError> {
    let first = token_embeddings.first().ok_or(DluqError::EmptyInput)?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for v in token_embeddings {
        if v.len() != dim {
            return Err(DluqError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (acc, x) in sum.iter_mut().zip(v) {
            if !x.is_finite() {
                return Err(DluqError::NonFinite);
            }
            *acc += x;
        }
    }
    let n = token_embeddings.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub doc_id: String,
    pub vector: Vec<f32>,
}

/// Known-good document embeddings, stored as `f32` so that a reload is
/// bit-identical to what was scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dimension: usize,
    entries: Vec<CacheEntry>,
    pub source_corpus_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DluqVerdict {
    Accept,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DluqScore {
    pub distance: f64,
    pub k_used: usize,
    pub nearest_ids: Vec<String>,
    pub threshold: f64,
    pub verdict: DluqVerdict,
}

impl EmbeddingCache {
    pub fn new(dimension: usize, source_corpus_tag: impl Into<String>) -> Result<Self, DluqError> {
        if dimension == 0 {
            return Err(DluqError::Format("dimension must be positive".into()));
        }
        Ok(Self {
            dimension,
            entries: Vec::new(),
            source_corpus_tag: source_corpus_tag.into(),
        })
    }

    pub fn push(&mut self, doc_id: impl Into<String>, vector: &[f64]) -> Result<(), DluqError> {
        let doc_id = doc_id.into();
        if vector.len() != self.dimension {
            return Err(DluqError::DimensionMismatch {
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite() || !(*x as f32).is_finite()) {
            return Err(DluqError::NonFinite);
        }
        if self.entries.iter().any(|e| e.doc_id == doc_id) {
            return Err(DluqError::DuplicateId(doc_id));
        }
        self.entries.push(CacheEntry {
            doc_id,
            vector: vector.iter().map(|&x| x as f32).collect(),
        });
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), DluqError> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        write_str(&mut w, &self.source_corpus_tag)?;
        for e in &self.entries {
            write_str(&mut w, &e.doc_id)?;
            for x in &e.vector {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DluqError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| DluqError::Format("truncated header".into()))?;
        if &magic != CACHE_MAGIC {
            return Err(DluqError::Format("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(DluqError::Format(format!("unsupported version {version}")));
        }
        let dimension = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let tag = read_str(&mut r)?;
        let mut cache = Self::new(dimension, tag)?;
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let doc_id = read_str(&mut r)?;
            let mut vector = Vec::with_capacity(dimension);
            for _ in 0..dimension {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|_| DluqError::Format("truncated entry".into()))?;
                let x = f32::from_le_bytes(b);
                if !x.is_finite() {
                    return Err(DluqError::NonFinite);
                }
                vector.push(x);
            }
            if !seen.insert(doc_id.clone()) {
                return Err(DluqError::DuplicateId(doc_id));
            }
            cache.entries.push(CacheEntry { doc_id, vector });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(DluqError::Format("trailing bytes after last entry".into()));
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DluqError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DluqError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Score of every cache entry against the rest of the cache.
    pub fn leave_one_out_scores(&self, k: usize) -> Result<Vec<f64>, DluqError> {
        if self.entries.len() < 2 {
            return Err(DluqError::EmptyInput);
        }
        if k == 0 {
            return Err(DluqError::InvalidK);
        }
        if k > self.entries.len() - 1 {
            return Err(DluqError::KTooLarge {
                k,
                size: self.entries.len() - 1,
            });
        }
        Ok((0..self.entries.len())
            .map(|i| {
                let q: Vec<f64> = self.entries[i].vector.iter().map(|&x| x as f64).collect();
                let mut d: Vec<f64> = self
                    .entries
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, e)| euclidean(&q, &e.vector))
                    .collect();
                d.sort_by(f64::total_cmp);
                d[..k].iter().sum::<f64>() / k as f64
            })
            .collect())
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<(), DluqError> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, DluqError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| DluqError::Format("truncated integer".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, DluqError> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|_| DluqError::Format("truncated string".into()))?;
    String::from_utf8(b).map_err(|_| DluqError::Format("doc id is not UTF-8".into()))
}

fn euclidean(q: &[f64], c: &[f32]) -> f64 {
    q.iter()
        .zip(c)
        .map(|(a, &b)| {
            let d = a - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Embeds and pools every document with the same instruction prefix the
/// pipeline uses at inference time.
pub fn build_cache(
    docs: &[IcsrDocument],
    embedder: &dyn ModelAdapter,
    instruction: &str,
    source_corpus_tag: &str,
) -> Result<EmbeddingCache, DluqError> {
    if docs.is_empty() {
        return Err(DluqError::EmptyInput);
    }
    let mut cache = EmbeddingCache::new(embedder.embedding_dim(), source_corpus_tag)?;
    for doc in docs {
        let tokens = embedder
            .embed_source(&serialize_for_model(doc, instruction))
            .map_err(|source| DluqError::Embedder {
                doc_id: doc.case_id.clone(),
                source,
            })?;
        cache.push(doc.case_id.clone(), &pool_embedding(&tokens)?)?;
    }
    Ok(cache)
}

/// Mean distance to the `k` nearest cache entries; flagged above `threshold`.
pub fn score_document(
    doc_embedding: &[f64],
    cache: &EmbeddingCache,
    k: usize,
    threshold: f64,
) -> Result<DluqScore, DluqError> {
    if k == 0 {
        return Err(DluqError::InvalidK);
    }
    if doc_embedding.len() != cache.dimension {
        return Err(DluqError::DimensionMismatch {
            expected: cache.dimension,
            found: doc_embedding.len(),
        });
    }
    if k > cache.len() {
        return Err(DluqError::KTooLarge { k, size: cache.len() });
    }
    if doc_embedding.iter().any(|x| !x.is_finite()) {
        return Err(DluqError::NonFinite);
    }
    let mut dists: Vec<(f64, usize)> = cache
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (euclidean(doc_embedding, &e.vector), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
        dists.truncate(k);
    }
    dists.sort_by(cmp);
    // sum in ascending order so the result does not depend on cache order
    let distance = dists.iter().map(|d| d.0).sum::<f64>() / k as f64;
    Ok(DluqScore {
        distance,
        k_used: k,
        nearest_ids: dists.iter().map(|d| cache.entries[d.1].doc_id.clone()).collect(),
        threshold,
        verdict: if distance > threshold {
            DluqVerdict::Flag
        } else {
            DluqVerdict::Accept
        },
    })
}

/// Nearest-rank `(1 - target_fpr)` quantile of in-distribution scores: at
/// most `target_fpr` of them lie strictly above the returned value.
pub fn calibrate_threshold(in_scores: &[f64], target_fpr: f64) -> Result<f64, DluqError> {
    if in_scores.is_empty() {
        return Err(DluqError::EmptyInput);
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(DluqError::InvalidFpr(target_fpr));
    }
    if in_scores.iter().any(|x| !x.is_finite()) {
        return Err(DluqError::NonFinite);
    }
    let mut sorted = in_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let allowed_above = (target_fpr * n as f64 + 1e-9).floor() as usize;
    Ok(sorted[n - allowed_above - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cache(vs: &[&[f64]]) -> EmbeddingCache {
        let mut c = EmbeddingCache::new(vs[0].len(), "test").unwrap();
        for (i, v) in vs.iter().enumerate() {
            c.push(format!("d{i}"), v).unwrap();
        }
        c
    }

    #[test]
    fn pooling_means() {
        assert_eq!(pool_embedding(&[vec![1.0, 1.0]]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pool_embedding(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            pool_embedding(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(pool_embedding(&[]), Err(DluqError::EmptyInput));
        assert!(matches!(
            pool_embedding(&[vec![1.0], vec![1.0, 2.0]]),
            Err(DluqError::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn scoring_examples() {
        let c = cache(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let s = score_document(&[3.0, 4.0], &c, 1, 0.1).unwrap();
        assert_eq!(s.distance, 0.0);
        assert_eq!(s.verdict, DluqVerdict::Accept);
        assert_eq!(s.nearest_ids, vec!["d1"]);
        assert_eq!(score_document(&[6.0, 8.0], &c, 1, 1.0).unwrap().distance, 5.0);
        let s = score_document(&[0.0, 0.0], &c, 2, 1.0).unwrap();
        assert_eq!(s.distance, 2.5);
        assert_eq!(s.verdict, DluqVerdict::Flag);
        assert_eq!(s.k_used, 2);
    }

    #[test]
    fn scoring_errors() {
        let c = cache(&[&[0.0, 0.0]]);
        assert_eq!(score_document(&[0.0, 0.0], &c, 2, 1.0), Err(DluqError::KTooLarge { k: 2, size: 1 }));
        assert_eq!(
            score_document(&[0.0], &c, 1, 1.0),
            Err(DluqError::DimensionMismatch { expected: 2, found: 1 })
        );
        assert_eq!(score_document(&[0.0, 0.0], &c, 0, 1.0), Err(DluqError::InvalidK));
    }

    #[test]
    fn calibration() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(calibrate_threshold(&scores, 0.05).unwrap(), 95.0);
        assert_eq!(calibrate_threshold(&scores, 0.5).unwrap(), 50.0);
        assert_eq!(calibrate_threshold(&[2.5; 7], 0.3).unwrap(), 2.5);
        assert_eq!(calibrate_threshold(&[2.5; 7], 0.01).unwrap(), 2.5);
        assert_eq!(calibrate_threshold(&scores, 0.0), Err(DluqError::InvalidFpr(0.0)));
        assert_eq!(calibrate_threshold(&scores, 1.0), Err(DluqError::InvalidFpr(1.0)));
        assert_eq!(calibrate_threshold(&[], 0.1), Err(DluqError::EmptyInput));
    }

    #[test]
    fn cache_binary_layout_and_round_trip() {
        let c = cache(&[&[0.1, -2.0], &[3.0, 4.5]]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PVGC");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        // tag, then "d0" and its two floats
        assert_eq!(&buf[16..20], &4u32.to_le_bytes());
        assert_eq!(&buf[20..24], b"test");
        assert_eq!(&buf[24..28], &2u32.to_le_bytes());
        assert_eq!(&buf[28..30], b"d0");
        assert_eq!(&buf[30..34], &0.1f32.to_le_bytes());
        assert_eq!(buf.len(), 24 + 2 * (4 + 2 + 8));
        let back = EmbeddingCache::read_from(&buf[..]).unwrap();
        assert_eq!(back, c);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn cache_rejects_corruption() {
        let c = cache(&[&[0.1, -2.0]]);
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert!(matches!(EmbeddingCache::read_from(&buf[..buf.len() - 1]), Err(DluqError::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingCache::read_from(&bad[..]), Err(DluqError::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(EmbeddingCache::read_from(&extra[..]), Err(DluqError::Format(_))));
    }

    #[test]
    fn push_validates() {
        let mut c = EmbeddingCache::new(2, "t").unwrap();
        c.push("a", &[0.0, 1.0]).unwrap();
        assert_eq!(c.push("a", &[1.0, 1.0]), Err(DluqError::DuplicateId("a".into())));
        assert_eq!(c.push("b", &[f64::NAN, 1.0]), Err(DluqError::NonFinite));
        assert!(matches!(c.push("c", &[1.0]), Err(DluqError::DimensionMismatch { .. })));
    }

    #[test]
    fn leave_one_out() {
        let c = cache(&[&[0.0, 0.0], &[3.0, 4.0], &[0.0, 1.0]]);
        let s = c.leave_one_out_scores(1).unwrap();
        assert_eq!(s, vec![1.0, (9.0f64 + 9.0).sqrt(), 1.0]);
    }

    fn small_vecs(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-8i32..8, 3).prop_map(|v| v.into_iter().map(f64::from).collect()), n)
    }

    proptest! {
        #[test]
        fn distance_zero_iff_exact_member(vs in small_vecs(1..8), q in small_vecs(1..2)) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let c = cache_dedup(&refs);
            let d = score_document(&q[0], &c, 1, 0.0).unwrap().distance;
            prop_assert_eq!(d == 0.0, vs.contains(&q[0]));
        }

        #[test]
        fn monotone_in_k(vs in small_vecs(1..10), q in small_vecs(1..2)) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let c = cache_dedup(&refs);
            let mut prev = 0.0;
            for k in 1..=c.len() {
                let d = score_document(&q[0], &c, k, 0.0).unwrap().distance;
                prop_assert!(d >= prev - 1e-12);
                prev = d;
            }
        }

        #[test]
        fn permutation_and_translation_invariance(vs in small_vecs(2..10), q in small_vecs(1..2), shift in small_vecs(1..2), k in 1usize..4) {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let c = cache_dedup(&refs);
            let k = k.min(c.len());
            let base = score_document(&q[0], &c, k, 0.0).unwrap().distance;
            let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
            let c_rev = cache_dedup(&rev);
            prop_assert_eq!(score_document(&q[0], &c_rev, k, 0.0).unwrap().distance, base);
            let shifted: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().zip(&shift[0]).map(|(a, b)| a + b).collect()).collect();
            let srefs: Vec<&[f64]> = shifted.iter().map(|v| v.as_slice()).collect();
            let qs: Vec<f64> = q[0].iter().zip(&shift[0]).map(|(a, b)| a + b).collect();
            let d = score_document(&qs, &cache_dedup(&srefs), k, 0.0).unwrap().distance;
            assert_relative_eq!(d, base, epsilon = 1e-9);
        }

        #[test]
        fn calibration_bounds_false_positives(scores in proptest::collection::vec(0u32..50, 1..60), fpr in 0.01f64..0.99) {
            let s: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
            let t = calibrate_threshold(&s, fpr).unwrap();
            let above = s.iter().filter(|&&x| x > t).count();
            prop_assert!(above as f64 <= fpr * s.len() as f64 + 1e-9);
            prop_assert!(s.contains(&t));
        }
    }

    fn cache_dedup(vs: &[&[f64]]) -> EmbeddingCache {
        cache(vs)
    }
}
