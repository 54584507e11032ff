//! The guardrail flow: document-level gate, translation, term mismatch,
//! token-level uncertainty, then routing.

mod agreement;
mod assess;
mod engine;
mod render;
mod review;
mod store;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::guardrail::dluq::{pool_embedding, score_document, DluqScore, DluqVerdict, EmbeddingCache};
use crate::guardrail::mismatch::{check_generic_trade, run_mismatch, GenericTradeCheck, MismatchReport, SideText};
use crate::guardrail::tluq::{annotate, BandThresholds, PercentileMode, TluqAnnotation};
use crate::icsr::{serialize_for_model, IcsrDocument, DEFAULT_INSTRUCTION};
use crate::lexicon::Lexicon;
use crate::model::{CorruptionRecord, GenerationConfig, ModelAdapter};

pub use agreement::{compute_agreement, AgreementError, AgreementResult, RubricKey};
pub use engine::{build_adapter, load_lexicon, read_jsonl, Engine, EngineError, DEFAULT_SYNTHETIC_CACHE};
pub use assess::{run_assessment_suite, AssessError, AssessmentOptions, AssessmentSummary, CatchRate, MissrateHistogram};
pub use render::{render_annotated_html, render_panel, render_panels, RenderError, CSS};
pub use review::{
    AdjudicationRecord, BinaryCategory, LikertQuestion, QueueItem, ReviewCase, ReviewError, ReviewStatus,
    ReviewerAssessment, Timestamp,
};
pub use store::{ReviewStore, StoreError};

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    AutoPass,
    Review,
    Reject,
}

impl Routing {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AutoPass => "auto_pass",
            Self::Review => "review",
            Self::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardrailReport {
    pub schema_version: u32,
    pub case_id: String,
    pub pipeline_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dluq: Option<DluqScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<MismatchReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generic_trade: Option<GenericTradeCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tluq: Option<TluqAnnotation>,
    pub routing: Routing,
    pub routing_reasons: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_text: Option<String>,
    /// Injector ground truth when the adapter applied a corruption.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionRecord>,
    /// Stage durations in milliseconds, when timing is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<BTreeMap<String, f64>>,
    /// Fields written by newer versions, kept on round trips.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl GuardrailReport {
    fn new(case_id: &str) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            case_id: case_id.to_string(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            dluq: None,
            mismatch: None,
            generic_trade: None,
            tluq: None,
            routing: Routing::AutoPass,
            routing_reasons: Vec::new(),
            target_text: None,
            corruption: None,
            timing: None,
            extra: BTreeMap::new(),
        }
    }

    /// Checks the routing invariants against the populated stages.
    pub fn check_routing(&self, tluq_review_threshold: Option<f64>) -> Result<(), String> {
        match self.routing {
            Routing::Reject => {
                let flagged = self.dluq.as_ref().is_some_and(|d| d.verdict == DluqVerdict::Flag);
                if !flagged || self.mismatch.is_some() || self.tluq.is_some() {
                    return Err("reject requires a DL-UQ flag and no later stages".into());
                }
            }
            Routing::Review => {
                let tripped = self.mismatch.as_ref().is_some_and(|m| m.tripped);
                let entropic = match (tluq_review_threshold, &self.tluq) {
                    (Some(t), Some(a)) => a.case_entropy > t,
                    _ => false,
                };
                let inconsistent = self.generic_trade.as_ref().is_some_and(|g| g.any_inconsistent());
                let errored = self.routing_reasons.iter().any(|r| r.starts_with("stage_error:"));
                if !(tripped || entropic || inconsistent || errored) {
                    return Err("review without a triggering guardrail".into());
                }
            }
            Routing::AutoPass => {
                if !self.routing_reasons.is_empty() || self.mismatch.as_ref().is_some_and(|m| m.tripped) {
                    return Err("auto_pass with a tripped guardrail".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }
}

/// Serializes with sorted keys and floats rounded to 9 significant digits.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("value serializes");
    round_floats(&mut v);
    serde_json::to_string(&v).expect("value serializes")
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
            if let Some(r) = serde_json::Number::from_f64(rounded) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Resolved settings for [`process_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub k: usize,
    pub dluq_threshold: f64,
    pub instruction: String,
    pub target_language: String,
    pub tluq_mode: PercentileMode,
    pub tluq_global_thresholds: Option<BandThresholds>,
    pub tluq_review_threshold: Option<f64>,
    pub generation: GenerationConfig,
    pub record_timing: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            k: 5,
            dluq_threshold: f64::INFINITY,
            instruction: DEFAULT_INSTRUCTION.to_string(),
            target_language: "en".into(),
            tluq_mode: PercentileMode::PerDocument,
            tluq_global_thresholds: None,
            tluq_review_threshold: None,
            generation: GenerationConfig::new(),
            record_timing: false,
        }
    }
}

struct Clock {
    on: bool,
    stages: BTreeMap<String, f64>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        if self.on {
            self.stages.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        }
        out
    }
}

/// Runs every guardrail in order. Stage failures route the case to review
/// with a `stage_error:<stage>` reason; nothing is dropped.
pub fn process_case(
    doc: &IcsrDocument,
    settings: &PipelineSettings,
    adapter: &dyn ModelAdapter,
    lexicon: &Lexicon,
    cache: &EmbeddingCache,
) -> GuardrailReport {
    let mut report = GuardrailReport::new(&doc.case_id);
    let mut clock = Clock {
        on: settings.record_timing,
        stages: BTreeMap::new(),
    };
    let input = serialize_for_model(doc, &settings.instruction);

    let dluq = clock.time("dluq", || {
        let tokens = adapter.embed_source(&input).map_err(|e| e.to_string())?;
        let pooled = pool_embedding(&tokens).map_err(|e| e.to_string())?;
        score_document(&pooled, cache, settings.k, settings.dluq_threshold).map_err(|e| e.to_string())
    });
    match dluq {
        Ok(score) => {
            let flagged = score.verdict == DluqVerdict::Flag;
            report.dluq = Some(score);
            if flagged {
                report.routing = Routing::Reject;
                report.routing_reasons.push("dluq:flag".into());
                return finish(report, clock);
            }
        }
        Err(e) => stage_error(&mut report, "dluq", &e),
    }

    let generation = match clock.time("translate", || adapter.translate(&input, &settings.generation)) {
        Ok(g) => g,
        Err(e) => {
            stage_error(&mut report, "translate", &e.to_string());
            return finish(report, clock);
        }
    };
    report.corruption = generation.corruption.clone();
    let target = generation.target_text.clone();
    report.target_text = Some(target.clone());

    let mismatch = clock.time("mismatch", || {
        let src = SideText::new(&doc.narrative, &doc.language);
        let tgt = SideText::new(&target, &settings.target_language);
        run_mismatch(src, tgt, lexicon).and_then(|m| Ok((m, check_generic_trade(tgt, lexicon)?)))
    });
    match mismatch {
        Ok((m, g)) => {
            report.routing_reasons.extend(m.reasons().into_iter().map(String::from));
            if g.any_inconsistent() {
                report.routing_reasons.push("generic_trade:inconsistent".into());
            }
            report.mismatch = Some(m);
            report.generic_trade = Some(g);
        }
        Err(e) => stage_error(&mut report, "mismatch", &e.to_string()),
    }

    let global = match settings.tluq_mode {
        PercentileMode::Global => settings.tluq_global_thresholds.as_ref(),
        PercentileMode::PerDocument => None,
    };
    match clock.time("tluq", || annotate(&generation.tokens, global)) {
        Ok(a) => {
            if settings.tluq_review_threshold.is_some_and(|t| a.case_entropy > t) {
                report.routing_reasons.push("tluq:high_entropy".into());
            }
            report.tluq = Some(a);
        }
        Err(e) => stage_error(&mut report, "tluq", &e.to_string()),
    }

    if !report.routing_reasons.is_empty() {
        report.routing = Routing::Review;
    }
    finish(report, clock)
}

fn stage_error(report: &mut GuardrailReport, stage: &str, message: &str) {
    report.routing_reasons.push(format!("stage_error:{stage}"));
    report.extra.insert(format!("{stage}_error"), Value::String(message.to_string()));
    report.routing = Routing::Review;
}

fn finish(mut report: GuardrailReport, clock: Clock) -> GuardrailReport {
    if clock.on {
        report.timing = Some(clock.stages);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::guardrail::dluq::build_cache;
    use crate::model::{synthesize_corpus, synthesize_pairs, CorpusLabel, CorruptionKind, CorruptionSpec, MockAdapter, MockProfile};

    struct Fixture {
        lex: Arc<Lexicon>,
        mock: MockAdapter,
        cache: EmbeddingCache,
        pairs: Vec<crate::model::FixturePair>,
    }

    fn fixture() -> Fixture {
        let lex = Arc::new(Lexicon::builtin());
        let train = synthesize_pairs(&lex, 60, 100);
        let pairs = synthesize_pairs(&lex, 10, 1);
        let mock = MockAdapter::new(lex.clone(), MockProfile::Separable, 3).with_pairs(&pairs);
        let docs: Vec<IcsrDocument> = train.iter().map(|p| p.doc.clone()).collect();
        let cache = build_cache(&docs, &mock, DEFAULT_INSTRUCTION, "train").unwrap();
        Fixture { lex, mock, cache, pairs }
    }

    fn settings() -> PipelineSettings {
        PipelineSettings {
            dluq_threshold: 0.3,
            ..PipelineSettings::default()
        }
    }

    #[test]
    fn faithful_pair_auto_passes() {
        let f = fixture();
        let r = process_case(&f.pairs[0].doc, &settings(), &f.mock, &f.lex, &f.cache);
        assert_eq!(r.routing, Routing::AutoPass, "{:?}", r.routing_reasons);
        assert!(r.mismatch.is_some() && r.tluq.is_some());
        r.check_routing(None).unwrap();
    }

    #[test]
    fn extraneous_doc_is_rejected_without_translation() {
        let f = fixture();
        let ext = synthesize_corpus(&f.lex, 0, 4, 9);
        for item in ext {
            assert!(matches!(item.label, CorpusLabel::Extraneous(_)));
            let before = f.mock.translate_calls();
            let r = process_case(&item.doc, &settings(), &f.mock, &f.lex, &f.cache);
            assert_eq!(r.routing, Routing::Reject);
            assert_eq!(r.routing_reasons, vec!["dluq:flag"]);
            assert!(r.mismatch.is_none() && r.tluq.is_none());
            assert_eq!(f.mock.translate_calls(), before);
            r.check_routing(None).unwrap();
        }
    }

    #[test]
    fn hallucination_routes_to_review() {
        let f = fixture();
        let input = serialize_for_model(&f.pairs[2].doc, DEFAULT_INSTRUCTION);
        f.mock.arm(&input, CorruptionSpec::new(CorruptionKind::HallucinateDrug, 7));
        let r = process_case(&f.pairs[2].doc, &settings(), &f.mock, &f.lex, &f.cache);
        assert_eq!(r.routing, Routing::Review);
        assert!(r.routing_reasons.contains(&"mismatch:unmatched_target_drug".to_string()));
        let injected = &r.corruption.as_ref().unwrap().canonical_ids[0];
        assert!(r.mismatch.as_ref().unwrap().unmatched_target_drug_ids.contains(injected));
        r.check_routing(None).unwrap();
    }

    #[test]
    fn stage_errors_route_to_review() {
        let f = fixture();
        let mut doc = f.pairs[0].doc.clone();
        doc.language = "xx".into();
        let r = process_case(&doc, &settings(), &f.mock, &f.lex, &f.cache);
        assert_eq!(r.routing, Routing::Review);
        assert!(r.routing_reasons.contains(&"stage_error:mismatch".to_string()));
        let bad_k = PipelineSettings {
            k: 1000,
            ..settings()
        };
        let r = process_case(&f.pairs[0].doc, &bad_k, &f.mock, &f.lex, &f.cache);
        assert!(r.routing_reasons.contains(&"stage_error:dluq".to_string()));
        assert!(r.tluq.is_some());
    }

    #[test]
    fn reports_are_byte_identical_and_forward_compatible() {
        let f = fixture();
        let a = process_case(&f.pairs[1].doc, &settings(), &f.mock, &f.lex, &f.cache).to_canonical_json();
        let b = process_case(&f.pairs[1].doc, &settings(), &f.mock, &f.lex, &f.cache).to_canonical_json();
        assert_eq!(a, b);
        let mut v: Value = serde_json::from_str(&a).unwrap();
        v["future_field"] = serde_json::json!({"x": 1});
        let parsed: GuardrailReport = serde_json::from_value(v).unwrap();
        assert_eq!(parsed.extra["future_field"]["x"], 1);
        assert!(canonical_json(&parsed).contains("future_field"));
    }

    #[test]
    fn canonical_json_rounds_and_sorts() {
        let v = serde_json::json!({"b": 0.1 + 0.2, "a": [1.0 / 3.0]});
        assert_eq!(canonical_json(&v), r#"{"a":[0.333333333],"b":0.3}"#);
    }

    #[test]
    fn timing_is_opt_in() {
        let f = fixture();
        let r = process_case(&f.pairs[0].doc, &settings(), &f.mock, &f.lex, &f.cache);
        assert!(r.timing.is_none());
        let timed = PipelineSettings {
            record_timing: true,
            ..settings()
        };
        let r = process_case(&f.pairs[0].doc, &timed, &f.mock, &f.lex, &f.cache);
        assert_eq!(r.timing.unwrap().len(), 4);
    }
}
