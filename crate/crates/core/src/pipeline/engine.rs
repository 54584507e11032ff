//! A configured pipeline: lexicon, adapter, cache and resolved threshold.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::{process_case, GuardrailReport, PipelineSettings};
use crate::config::{AdapterConfig, ConfigError, PipelineConfig, ThresholdSpec};
use crate::guardrail::dluq::{build_cache, calibrate_threshold, DluqError, EmbeddingCache};
use crate::icsr::IcsrDocument;
use crate::lexicon::{Lexicon, LexiconError};
use crate::model::{synthesize_pairs, AdapterError, Concurrency, FixturePair, HttpAdapter, MockAdapter, ModelAdapter};

/// Cache size used when no cache file is configured.
pub const DEFAULT_SYNTHETIC_CACHE: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("cache: {0}")]
    Cache(#[from] DluqError),
    #[error("adapter: {0}")]
    Adapter(#[from] AdapterError),
    #[error("cache dimension {cache} does not match adapter dimension {adapter}")]
    DimensionMismatch { cache: usize, adapter: usize },
    #[error("{path}:{line}: {message}")]
    Jsonl { path: String, line: usize, message: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EngineError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| EngineError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EngineError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EngineError::Jsonl {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Shared adapter and, for the mock, a typed handle to it.
pub type AdapterHandles = (Arc<dyn ModelAdapter>, Option<Arc<MockAdapter>>);

/// The configured adapter, plus a handle to it when it is the mock.
pub fn build_adapter(
    config: &PipelineConfig,
    lexicon: &Arc<Lexicon>,
) -> Result<AdapterHandles, EngineError> {
    Ok(match &config.adapter {
        AdapterConfig::Mock { profile, pairs_path } => {
            let mut m = MockAdapter::new(lexicon.clone(), *profile, config.seed)
                .with_instruction(config.instruction.clone())
                .with_languages(&config.source_language, &config.target_language);
            if let Some(p) = pairs_path {
                let pairs: Vec<FixturePair> = read_jsonl(p)?;
                m = m.with_pairs(&pairs);
            }
            let m = Arc::new(m);
            (m.clone(), Some(m))
        }
        AdapterConfig::Http(h) => (Arc::new(HttpAdapter::connect(h.clone())?), None),
    })
}

pub fn load_lexicon(config: &PipelineConfig) -> Result<Arc<Lexicon>, EngineError> {
    Ok(Arc::new(match &config.lexicon_path {
        Some(p) => Lexicon::load_tsv(p)?,
        None => Lexicon::builtin(),
    }))
}

pub struct Engine {
    pub config: PipelineConfig,
    pub settings: PipelineSettings,
    pub lexicon: Arc<Lexicon>,
    pub cache: Arc<EmbeddingCache>,
    adapter: Arc<dyn ModelAdapter>,
    mock: Option<Arc<MockAdapter>>,
}

impl Engine {
    /// Validates `config` and assembles every component. An HTTP adapter is
    /// health-checked here, so call this outside any async runtime.
    pub fn from_config(config: PipelineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let lexicon = load_lexicon(&config)?;
        let (adapter, mock) = build_adapter(&config, &lexicon)?;
        let cache = match &config.cache_path {
            Some(p) => EmbeddingCache::load(p)?,
            None => {
                let docs: Vec<IcsrDocument> = synthesize_pairs(&lexicon, DEFAULT_SYNTHETIC_CACHE, config.seed)
                    .into_iter()
                    .map(|p| p.doc)
                    .collect();
                build_cache(&docs, adapter.as_ref(), &config.instruction, "synthetic")?
            }
        };
        if cache.dimension() != adapter.embedding_dim() {
            return Err(EngineError::DimensionMismatch {
                cache: cache.dimension(),
                adapter: adapter.embedding_dim(),
            });
        }
        let threshold = match config.dluq_threshold {
            ThresholdSpec::Fixed(x) => x,
            ThresholdSpec::Calibrated { fpr } => calibrate_threshold(&cache.leave_one_out_scores(config.k)?, fpr)?,
        };
        Ok(Self {
            settings: config.settings(threshold),
            config,
            lexicon,
            cache: Arc::new(cache),
            adapter,
            mock,
        })
    }

    pub fn adapter(&self) -> &dyn ModelAdapter {
        self.adapter.as_ref()
    }

    /// The mock adapter, when one is configured.
    pub fn mock(&self) -> Option<&MockAdapter> {
        self.mock.as_deref()
    }

    pub fn dluq_threshold(&self) -> f64 {
        self.settings.dluq_threshold
    }

    pub fn process(&self, doc: &IcsrDocument) -> GuardrailReport {
        process_case(doc, &self.settings, self.adapter.as_ref(), &self.lexicon, &self.cache)
    }

    /// Processes `docs` on up to `jobs` workers; reports come back in input
    /// order. A serial adapter forces a single worker.
    pub fn process_batch(&self, docs: &[IcsrDocument], jobs: usize) -> Vec<GuardrailReport> {
        let jobs = match self.adapter.concurrency() {
            Concurrency::Serial => 1,
            Concurrency::Concurrent => jobs.max(1),
        };
        if jobs == 1 {
            return docs.iter().map(|d| self.process(d)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("worker pool");
        pool.install(|| docs.par_iter().map(|d| self.process(d)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_corpus, MockProfile};
    use crate::pipeline::Routing;
    use std::io::Write;

    #[test]
    fn batch_order_and_short_circuit() {
        let lex = Lexicon::builtin();
        let corpus = synthesize_corpus(&lex, 12, 6, 4);
        let dir = tempfile::tempdir().unwrap();
        let pairs_path = dir.path().join("pairs.jsonl");
        let mut f = File::create(&pairs_path).unwrap();
        for p in synthesize_pairs(&lex, 12, 4) {
            writeln!(f, "{}", serde_json::to_string(&p).unwrap()).unwrap();
        }
        let config = PipelineConfig {
            adapter: AdapterConfig::Mock {
                profile: MockProfile::Separable,
                pairs_path: Some(pairs_path),
            },
            ..PipelineConfig::default()
        };
        let engine = Engine::from_config(config).unwrap();
        let docs: Vec<IcsrDocument> = corpus.iter().map(|c| c.doc.clone()).collect();
        let serial = engine.process_batch(&docs, 1);
        let calls = engine.mock().unwrap().translate_calls();
        let parallel = engine.process_batch(&docs, 4);
        assert_eq!(serial, parallel);
        let ids: Vec<&str> = serial.iter().map(|r| r.case_id.as_str()).collect();
        assert_eq!(ids, docs.iter().map(|d| d.case_id.as_str()).collect::<Vec<_>>());
        let rejected = serial.iter().filter(|r| r.routing == Routing::Reject).count();
        assert_eq!(rejected, 6);
        assert!(serial[..12].iter().all(|r| r.routing == Routing::AutoPass));
        assert_eq!(engine.mock().unwrap().translate_calls() - calls, 12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pvgc");
        let mut cache = EmbeddingCache::new(3, "t").unwrap();
        cache.push("a", &[0.0, 1.0, 2.0]).unwrap();
        cache.save(&path).unwrap();
        let config = PipelineConfig {
            cache_path: Some(path),
            dluq_threshold: ThresholdSpec::Fixed(1.0),
            ..PipelineConfig::default()
        };
        assert!(matches!(Engine::from_config(config), Err(EngineError::DimensionMismatch { .. })));
    }
}
