//! Deterministic stand-in for a translation model.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{fixture_vocabulary, FixturePair};
use super::corrupt::{apply_corruption, CorruptionContext, CorruptionSpec};
use super::tokenize::{source_tokens, target_tokens};
use super::{AdapterError, GenerationConfig, GenerationResult, ModelAdapter};
use crate::guardrail::tluq::{Distribution, TokenRecord};
use crate::icsr::{parse_model_input, serialize_for_model};
use crate::lexicon::Lexicon;

pub const DEFAULT_DIM: usize = 32;
const TOP_K: usize = 5;

/// How cleanly mock embeddings separate case reports from other text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockProfile {
    #[default]
    Separable,
    Noisy,
}

struct ProfileParams {
    offset: f64,
    token_noise: f64,
    doc_noise: f64,
    /// Per-mille of tokens whose vocabulary class is flipped.
    flip_per_mille: u64,
}

impl MockProfile {
    fn params(self) -> ProfileParams {
        match self {
            Self::Separable => ProfileParams {
                offset: 1.0,
                token_noise: 0.05,
                doc_noise: 0.0,
                flip_per_mille: 0,
            },
            Self::Noisy => ProfileParams {
                offset: 1.0,
                token_noise: 0.6,
                doc_noise: 0.2,
                flip_per_mille: 60,
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Separable => "separable",
            Self::Noisy => "noisy",
        }
    }
}

impl fmt::Display for MockProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MockProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "separable" => Ok(Self::Separable),
            "noisy" => Ok(Self::Noisy),
            other => Err(format!("unknown mock profile {other:?}")),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn hash_vec(key: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Translation table plus seeded embeddings and token distributions.
///
/// Inputs found in the table translate to their paired target; anything else
/// gets a term-by-term rendering of the narrative, marked with
/// `mock_fallback` in the config echo.
pub struct MockAdapter {
    lexicon: Arc<Lexicon>,
    table: HashMap<String, String>,
    instruction: String,
    profile: MockProfile,
    seed: u64,
    dim: usize,
    vocabulary: HashSet<String>,
    direction: Vec<f64>,
    source_language: String,
    target_language: String,
    armed_global: RwLock<Option<CorruptionSpec>>,
    armed: RwLock<HashMap<String, CorruptionSpec>>,
    translate_calls: AtomicUsize,
}

impl MockAdapter {
    pub fn new(lexicon: Arc<Lexicon>, profile: MockProfile, seed: u64) -> Self {
        let dim = DEFAULT_DIM;
        let raw = hash_vec(seed ^ 0xd1ec_7105, dim);
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self {
            vocabulary: fixture_vocabulary(&lexicon),
            lexicon,
            table: HashMap::new(),
            instruction: crate::icsr::DEFAULT_INSTRUCTION.to_string(),
            profile,
            seed,
            dim,
            direction: raw.into_iter().map(|x| x / norm).collect(),
            source_language: "ja".into(),
            target_language: "en".into(),
            armed_global: RwLock::new(None),
            armed: RwLock::new(HashMap::new()),
            translate_calls: AtomicUsize::new(0),
        }
    }

    /// Instruction used to key fixture pairs in the table.
    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        let old: Vec<(String, String)> = self.table.drain().collect();
        let instruction = instruction.into();
        for (k, v) in old {
            let rekeyed = match k.strip_prefix(self.instruction.as_str()) {
                Some(rest) => format!("{instruction}{rest}"),
                None => k,
            };
            self.table.insert(rekeyed, v);
        }
        self.instruction = instruction;
        self
    }

    pub fn with_languages(mut self, source: &str, target: &str) -> Self {
        self.source_language = source.into();
        self.target_language = target.into();
        self
    }

    pub fn with_pairs<'a>(mut self, pairs: impl IntoIterator<Item = &'a FixturePair>) -> Self {
        for p in pairs {
            self.insert_pair(&serialize_for_model(&p.doc, &self.instruction), &p.target);
        }
        self
    }

    pub fn insert_pair(&mut self, serialized_input: &str, target: &str) {
        self.table.insert(serialized_input.to_string(), target.to_string());
    }

    pub fn profile(&self) -> MockProfile {
        self.profile
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    /// Applies `spec` to every translation without a per-input arming.
    pub fn arm_global(&self, spec: Option<CorruptionSpec>) {
        *self.armed_global.write() = spec;
    }

    pub fn arm(&self, serialized_input: &str, spec: CorruptionSpec) {
        self.armed.write().insert(serialized_input.to_string(), spec);
    }

    pub fn disarm(&self, serialized_input: &str) {
        self.armed.write().remove(serialized_input);
    }

    pub fn translate_calls(&self) -> usize {
        self.translate_calls.load(Ordering::SeqCst)
    }

    fn in_vocabulary(&self, token: &str) -> bool {
        let lower = token.to_lowercase();
        let member = lower.bytes().all(|b| b.is_ascii_digit()) || self.vocabulary.contains(&lower);
        let flip = fnv1a(lower.as_bytes()) ^ self.seed;
        if flip % 1000 < self.profile.params().flip_per_mille {
            !member
        } else {
            member
        }
    }

    fn fallback_translation(&self, input: &str) -> Result<String, AdapterError> {
        let narrative = parse_model_input(input).map(|(_, _, n)| n).unwrap_or_else(|| input.to_string());
        let matches = self
            .lexicon
            .find_terms(&narrative, &self.source_language, None)
            .map_err(|e| AdapterError::GenerationFailed(e.to_string()))?;
        let mut out = String::with_capacity(narrative.len());
        let mut pos = 0;
        for m in matches {
            out.push_str(&narrative[pos..m.span.0]);
            let entry = self.lexicon.get(&m.canonical_id).expect("matched ids exist");
            match entry.surfaces_in(&self.target_language).next() {
                Some(s) => {
                    out.push(' ');
                    out.push_str(s);
                    out.push(' ');
                }
                None => out.push_str(&narrative[m.span.0..m.span.1]),
            }
            pos = m.span.1;
        }
        out.push_str(&narrative[pos..]);
        Ok(out)
    }

    fn token_records(&self, input: &str, target: &str, hot: &[(usize, usize)]) -> Vec<TokenRecord> {
        let base = fnv1a(input.as_bytes()) ^ self.seed.rotate_left(17);
        target_tokens(target)
            .into_iter()
            .enumerate()
            .map(|(i, (s, e))| {
                let mut rng = ChaCha8Rng::seed_from_u64(base ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let uncertain = hot.iter().any(|&(hs, he)| s < he && hs < e);
                let top = if uncertain {
                    rng.random_range(0.2..0.5)
                } else {
                    rng.random_range(0.75..0.99)
                };
                let weights: Vec<f64> = (1..TOP_K).map(|_| rng.random_range(0.05..1.0)).collect();
                let wsum: f64 = weights.iter().sum();
                let text = target[s..e].to_string();
                let mut topk = vec![(text.trim().to_string(), top)];
                topk.extend(weights.iter().enumerate().map(|(j, w)| (format!("<alt{j}>"), (1.0 - top) * w / wsum)));
                TokenRecord {
                    token_text: text,
                    byte_span: (s, e),
                    distribution: Distribution::topk_renormalized(topk).expect("positive mass"),
                }
            })
            .collect()
    }
}

impl ModelAdapter for MockAdapter {
    fn translate(&self, input: &str, config: &GenerationConfig) -> Result<GenerationResult, AdapterError> {
        self.translate_calls.fetch_add(1, Ordering::SeqCst);
        if input.trim().is_empty() {
            return Err(AdapterError::EmptyInput);
        }
        let mut echo = config.clone();
        let target = match self.table.get(input) {
            Some(t) => t.clone(),
            None => {
                echo.insert("mock_fallback".into(), true.into());
                self.fallback_translation(input)?
            }
        };
        let spec = self.armed.read().get(input).cloned().or_else(|| self.armed_global.read().clone());
        let (target, corruption) = match spec {
            None => (target, None),
            Some(spec) => {
                let narrative = parse_model_input(input).map(|(_, _, n)| n).unwrap_or_else(|| input.to_string());
                let ctx = CorruptionContext {
                    lexicon: &self.lexicon,
                    source_text: &narrative,
                    source_language: &self.source_language,
                    target_language: &self.target_language,
                };
                let (t, r) = apply_corruption(&target, &ctx, &spec).map_err(|e| AdapterError::GenerationFailed(e.to_string()))?;
                (t, Some(r))
            }
        };
        let hot = corruption.as_ref().map(|r| r.inserted_spans.clone()).unwrap_or_default();
        Ok(GenerationResult {
            tokens: self.token_records(input, &target, &hot),
            source_token_embeddings: self.embed_source(input)?,
            target_text: target,
            generation_config_echo: echo,
            corruption,
        })
    }

    fn embed_source(&self, input: &str) -> Result<Vec<Vec<f64>>, AdapterError> {
        let tokens = source_tokens(input);
        if tokens.is_empty() {
            return Err(AdapterError::EmptyInput);
        }
        let p = self.profile.params();
        let doc_vec = (p.doc_noise > 0.0).then(|| hash_vec(fnv1a(input.as_bytes()) ^ self.seed.rotate_left(7), self.dim));
        Ok(tokens
            .into_iter()
            .map(|(s, e)| {
                let tok = &input[s..e];
                let noise = hash_vec(fnv1a(tok.to_lowercase().as_bytes()) ^ self.seed, self.dim);
                let offset = if self.in_vocabulary(tok) { 0.0 } else { p.offset };
                (0..self.dim)
                    .map(|d| {
                        let doc = doc_vec.as_ref().map_or(0.0, |v| p.doc_noise * v[d]);
                        offset * self.direction[d] + p.token_noise * noise[d] + doc
                    })
                    .collect()
            })
            .collect())
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guardrail::dluq::pool_embedding;
    use crate::icsr::DEFAULT_INSTRUCTION;
    use crate::model::corpus::{synthesize_corpus, synthesize_pairs, CorpusLabel};
    use crate::model::corrupt::CorruptionKind;

    fn adapter(profile: MockProfile) -> (MockAdapter, Vec<FixturePair>) {
        let lex = Arc::new(Lexicon::builtin());
        let pairs = synthesize_pairs(&lex, 5, 1);
        (MockAdapter::new(lex, profile, 42).with_pairs(&pairs), pairs)
    }

    #[test]
    fn table_lookup_is_faithful_and_deterministic() {
        let (m, pairs) = adapter(MockProfile::Separable);
        let input = serialize_for_model(&pairs[0].doc, DEFAULT_INSTRUCTION);
        let a = m.translate(&input, &GenerationConfig::new()).unwrap();
        assert_eq!(a.target_text, pairs[0].target);
        assert!(a.corruption.is_none());
        a.check_invariants().unwrap();
        let b = m.translate(&input, &GenerationConfig::new()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(m.translate_calls(), 2);
    }

    #[test]
    fn armed_corruption_is_recorded() {
        let (m, pairs) = adapter(MockProfile::Separable);
        let input = serialize_for_model(&pairs[1].doc, DEFAULT_INSTRUCTION);
        m.arm(&input, CorruptionSpec::new(CorruptionKind::HallucinateDrug, 7));
        let r = m.translate(&input, &GenerationConfig::new()).unwrap();
        let rec = r.corruption.clone().unwrap();
        assert_eq!(rec.kind, CorruptionKind::HallucinateDrug);
        r.check_invariants().unwrap();
        m.disarm(&input);
        assert!(m.translate(&input, &GenerationConfig::new()).unwrap().corruption.is_none());
    }

    #[test]
    fn unknown_input_falls_back() {
        let (m, _) = adapter(MockProfile::Separable);
        let r = m.translate("instr\n\nアスピリンを投与。", &GenerationConfig::new()).unwrap();
        assert!(r.target_text.contains("aspirin"));
        assert_eq!(r.generation_config_echo["mock_fallback"], true);
        assert_eq!(m.translate("", &GenerationConfig::new()), Err(AdapterError::EmptyInput));
    }

    #[test]
    fn embeddings_are_deterministic() {
        let (m, _) = adapter(MockProfile::Noisy);
        assert_eq!(m.embed_source("頭痛 text").unwrap(), m.embed_source("頭痛 text").unwrap());
        assert_eq!(m.embed_source(""), Err(AdapterError::EmptyInput));
        assert!(m.embed_source("a b").unwrap().iter().all(|v| v.len() == DEFAULT_DIM && v.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn separable_profile_geometry() {
        let lex = Arc::new(Lexicon::builtin());
        let m = MockAdapter::new(lex.clone(), MockProfile::Separable, 42);
        let corpus = synthesize_corpus(&lex, 80, 25, 1);
        let pooled: Vec<(bool, Vec<f64>)> = corpus
            .iter()
            .map(|c| {
                let e = m.embed_source(&serialize_for_model(&c.doc, DEFAULT_INSTRUCTION)).unwrap();
                (c.label == CorpusLabel::Icsr, pool_embedding(&e).unwrap())
            })
            .collect();
        let icsr: Vec<&Vec<f64>> = pooled.iter().filter(|p| p.0).map(|p| &p.1).collect();
        let centroid: Vec<f64> =
            (0..DEFAULT_DIM).map(|d| icsr.iter().map(|v| v[d]).sum::<f64>() / icsr.len() as f64).collect();
        let dist = |v: &Vec<f64>| v.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let r = icsr.iter().map(|v| dist(v)).fold(0.0, f64::max);
        for (is_icsr, v) in &pooled {
            if !is_icsr {
                assert!(dist(v) > 3.0 * r, "{} vs radius {r}", dist(v));
            }
        }
    }
}
