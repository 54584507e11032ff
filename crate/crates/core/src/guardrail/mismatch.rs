//! Hard guardrail: drug and adverse-event terms present on one side of a
//! translation but not the other.
//!
//! Both texts are term-matched independently, the found ids are expanded
//! over generic/brand links, and an id found on one side is unmatched when it
//! does not appear in the expanded set of the other side. Comparison is on
//! sets, so three source mentions of a drug are satisfied by one target
//! mention. Any unmatched id trips the guardrail.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::lexicon::{canonical_set, Lexicon, LexiconError, TermKind, TermMatch};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MismatchError {
    #[error("unmatched ids {0:?} are not a subset of the found ids")]
    PreconditionViolation(Vec<String>),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

/// One side of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct SideText<'a> {
    pub text: &'a str,
    pub language: &'a str,
}

impl<'a> SideText<'a> {
    pub fn new(text: &'a str, language: &'a str) -> Self {
        Self { text, language }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanLabel {
    Matched,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledMatch {
    #[serde(flatten)]
    pub term: TermMatch,
    pub label: SpanLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub matched_drug_ids: BTreeSet<String>,
    pub unmatched_source_drug_ids: BTreeSet<String>,
    pub unmatched_target_drug_ids: BTreeSet<String>,
    pub matched_ae_ids: BTreeSet<String>,
    pub unmatched_source_ae_ids: BTreeSet<String>,
    pub unmatched_target_ae_ids: BTreeSet<String>,
    pub source_spans: Vec<LabeledMatch>,
    pub target_spans: Vec<LabeledMatch>,
    pub tripped: bool,
    pub missrate_source_drugs: Option<f64>,
    pub missrate_target_drugs: Option<f64>,
    pub missrate_source_aes: Option<f64>,
    pub missrate_target_aes: Option<f64>,
}

/// Routing hint carried by a tripped report; the pipeline acts on it.
pub const RECOMMEND_ADJUDICATION: &str = "further_adjudication";

impl MismatchReport {
    pub fn recommendation(&self) -> Option<&'static str> {
        self.tripped.then_some(RECOMMEND_ADJUDICATION)
    }

    /// Stable reason codes for every non-empty unmatched set.
    pub fn reasons(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.unmatched_source_drug_ids.is_empty() {
            out.push("mismatch:unmatched_source_drug");
        }
        if !self.unmatched_target_drug_ids.is_empty() {
            out.push("mismatch:unmatched_target_drug");
        }
        if !self.unmatched_source_ae_ids.is_empty() {
            out.push("mismatch:unmatched_source_ae");
        }
        if !self.unmatched_target_ae_ids.is_empty() {
            out.push("mismatch:unmatched_target_ae");
        }
        out
    }
}

/// `|unmatched| / |found|`, or `None` when nothing was found on that side.
pub fn missrate(found: &BTreeSet<String>, unmatched: &BTreeSet<String>) -> Result<Option<f64>, MismatchError> {
    let stray: Vec<String> = unmatched.difference(found).cloned().collect();
    if !stray.is_empty() {
        return Err(MismatchError::PreconditionViolation(stray));
    }
    if found.is_empty() {
        return Ok(None);
    }
    Ok(Some(unmatched.len() as f64 / found.len() as f64))
}

struct KindOutcome {
    found_source: BTreeSet<String>,
    found_target: BTreeSet<String>,
    unmatched_source: BTreeSet<String>,
    unmatched_target: BTreeSet<String>,
    source_matches: Vec<TermMatch>,
    target_matches: Vec<TermMatch>,
}

fn compare_kind(source: SideText<'_>, target: SideText<'_>, lexicon: &Lexicon, kind: TermKind) -> Result<KindOutcome, LexiconError> {
    let source_matches = lexicon.find_terms(source.text, source.language, Some(kind))?;
    let target_matches = lexicon.find_terms(target.text, target.language, Some(kind))?;
    let found_source = canonical_set(&source_matches, kind);
    let found_target = canonical_set(&target_matches, kind);
    let expanded_source = lexicon.expand_links(&found_source)?;
    let expanded_target = lexicon.expand_links(&found_target)?;
    Ok(KindOutcome {
        unmatched_source: found_source.difference(&expanded_target).cloned().collect(),
        unmatched_target: found_target.difference(&expanded_source).cloned().collect(),
        found_source,
        found_target,
        source_matches,
        target_matches,
    })
}

fn label(matches: Vec<TermMatch>, unmatched: &BTreeSet<String>) -> impl Iterator<Item = LabeledMatch> + '_ {
    matches.into_iter().map(move |term| LabeledMatch {
        label: if unmatched.contains(&term.canonical_id) {
            SpanLabel::Unmatched
        } else {
            SpanLabel::Matched
        },
        term,
    })
}

pub fn run_mismatch(source: SideText<'_>, target: SideText<'_>, lexicon: &Lexicon) -> Result<MismatchReport, MismatchError> {
    let drugs = compare_kind(source, target, lexicon, TermKind::Drug)?;
    let aes = compare_kind(source, target, lexicon, TermKind::AdverseEvent)?;

    let matched = |k: &KindOutcome| -> BTreeSet<String> {
        k.found_source
            .union(&k.found_target)
            .filter(|id| !k.unmatched_source.contains(*id) && !k.unmatched_target.contains(*id))
            .cloned()
            .collect()
    };

    let mut source_spans: Vec<LabeledMatch> = label(drugs.source_matches.clone(), &drugs.unmatched_source)
        .chain(label(aes.source_matches.clone(), &aes.unmatched_source))
        .collect();
    let mut target_spans: Vec<LabeledMatch> = label(drugs.target_matches.clone(), &drugs.unmatched_target)
        .chain(label(aes.target_matches.clone(), &aes.unmatched_target))
        .collect();
    source_spans.sort_by_key(|m| (m.term.span, m.term.kind));
    target_spans.sort_by_key(|m| (m.term.span, m.term.kind));

    let tripped = [&drugs.unmatched_source, &drugs.unmatched_target, &aes.unmatched_source, &aes.unmatched_target]
        .iter()
        .any(|s| !s.is_empty());

    Ok(MismatchReport {
        matched_drug_ids: matched(&drugs),
        matched_ae_ids: matched(&aes),
        missrate_source_drugs: missrate(&drugs.found_source, &drugs.unmatched_source)?,
        missrate_target_drugs: missrate(&drugs.found_target, &drugs.unmatched_target)?,
        missrate_source_aes: missrate(&aes.found_source, &aes.unmatched_source)?,
        missrate_target_aes: missrate(&aes.found_target, &aes.unmatched_target)?,
        unmatched_source_drug_ids: drugs.unmatched_source,
        unmatched_target_drug_ids: drugs.unmatched_target,
        unmatched_source_ae_ids: aes.unmatched_source,
        unmatched_target_ae_ids: aes.unmatched_target,
        source_spans,
        target_spans,
        tripped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMethod {
    MismatchGuardrail,
    ParentheticalCheck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenericTradePair {
    pub first_id: String,
    pub second_id: String,
    pub span: (usize, usize),
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenericTradeCheck {
    pub pairs_checked: Vec<GenericTradePair>,
    pub method: CheckMethod,
}

impl GenericTradeCheck {
    pub fn any_inconsistent(&self) -> bool {
        self.pairs_checked.iter().any(|p| !p.consistent)
    }
}

/// Looks for `NAME1 (NAME2)` where both names are drug terms and checks that
/// the two are linked (or identical).
pub fn check_generic_trade(target: SideText<'_>, lexicon: &Lexicon) -> Result<GenericTradeCheck, MismatchError> {
    let drugs = lexicon.find_terms(target.text, target.language, Some(TermKind::Drug))?;
    let mut pairs = Vec::new();
    for w in drugs.windows(2) {
        let (outer, inner) = (&w[0], &w[1]);
        let between = &target.text[outer.span.1..inner.span.0];
        let after = target.text[inner.span.1..].trim_start();
        if between.trim() == "(" && after.starts_with(')') {
            let close = target.text.len() - after.len() + 1;
            pairs.push(GenericTradePair {
                consistent: outer.canonical_id == inner.canonical_id
                    || lexicon.linked(&outer.canonical_id, &inner.canonical_id)?,
                first_id: outer.canonical_id.clone(),
                second_id: inner.canonical_id.clone(),
                span: (outer.span.0, close),
            });
        }
    }
    Ok(GenericTradeCheck {
        pairs_checked: pairs,
        method: CheckMethod::ParentheticalCheck,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn run(src: &str, tgt: &str) -> MismatchReport {
        run_mismatch(SideText::new(src, "ja"), SideText::new(tgt, "en"), &Lexicon::builtin()).unwrap()
    }

    #[test]
    fn cross_lingual_identity_matches() {
        let r = run("ワルファリン投与後に頭痛が発現した。", "Headache developed after warfarin.");
        assert!(!r.tripped);
        assert_eq!(r.matched_drug_ids, ids(&["DRG-G002"]));
        assert_eq!(r.matched_ae_ids, ids(&["AE-001"]));
        assert_eq!(r.missrate_source_drugs, Some(0.0));
        assert_eq!(r.missrate_target_aes, Some(0.0));
        assert!(r.recommendation().is_none());
    }

    #[test]
    fn hallucinated_target_drug_trips() {
        let r = run("ワルファリン投与後に頭痛。", "Headache after warfarin and aspirin.");
        assert!(r.tripped);
        assert_eq!(r.unmatched_target_drug_ids, ids(&["DRG-G003"]));
        assert!(r.unmatched_source_drug_ids.is_empty());
        assert_eq!(r.missrate_target_drugs, Some(0.5));
        assert_eq!(r.reasons(), vec!["mismatch:unmatched_target_drug"]);
        assert_eq!(r.recommendation(), Some(RECOMMEND_ADJUDICATION));
        let unmatched: Vec<_> = r.target_spans.iter().filter(|s| s.label == SpanLabel::Unmatched).collect();
        assert_eq!(unmatched.len(), 1);
        assert_eq!(unmatched[0].term.matched_surface, "aspirin");
    }

    #[test]
    fn empty_texts() {
        let r = run("", "");
        assert!(!r.tripped);
        assert!(r.matched_drug_ids.is_empty() && r.matched_ae_ids.is_empty());
        assert_eq!(r.missrate_source_drugs, None);
        assert_eq!(r.missrate_target_drugs, None);
        assert_eq!(r.missrate_source_aes, None);
        assert_eq!(r.missrate_target_aes, None);
    }

    #[test]
    fn generic_in_source_brand_in_target_does_not_trip() {
        let r = run("アセトアミノフェンを服用。", "The patient took Calonal.");
        assert!(!r.tripped);
        assert_eq!(r.matched_drug_ids, ids(&["DRG-G001", "DRG-T002"]));
    }

    #[test]
    fn dropped_ae_counts_on_source_side() {
        let r = run("頭痛と悪心が発現。", "Headache occurred.");
        assert_eq!(r.unmatched_source_ae_ids, ids(&["AE-002"]));
        assert_eq!(r.missrate_source_aes, Some(0.5));
        assert_eq!(r.missrate_target_aes, Some(0.0));
    }

    #[test]
    fn misspelling_next_to_correct_spelling_is_invisible() {
        let r = run("ワルファリンを投与。", "Warfarin was given; warfarn was continued.");
        assert!(!r.tripped);
    }

    #[test]
    fn missrate_definition() {
        assert_eq!(missrate(&ids(&["A", "B"]), &ids(&["B"])), Ok(Some(0.5)));
        assert_eq!(missrate(&ids(&["A", "B"]), &ids(&[])), Ok(Some(0.0)));
        assert_eq!(missrate(&ids(&["A"]), &ids(&["A"])), Ok(Some(1.0)));
        assert_eq!(missrate(&ids(&[]), &ids(&[])), Ok(None));
        assert!(matches!(missrate(&ids(&["A"]), &ids(&["C"])), Err(MismatchError::PreconditionViolation(_))));
    }

    #[test]
    fn parenthetical_pairs() {
        let lex = Lexicon::builtin();
        let check = |t: &str| check_generic_trade(SideText::new(t, "en"), &lex).unwrap();
        let ok = check("Tylenol (acetaminophen) was given.");
        assert_eq!(ok.method, CheckMethod::ParentheticalCheck);
        assert_eq!(ok.pairs_checked.len(), 1);
        assert!(ok.pairs_checked[0].consistent);
        assert_eq!(ok.pairs_checked[0].span, (0, 23));
        let bad = check("Tylenol (warfarin) was given.");
        assert!(!bad.pairs_checked[0].consistent);
        assert!(bad.any_inconsistent());
        assert!(check("Tylenol and warfarin, no brackets.").pairs_checked.is_empty());
        assert!(check("Tylenol (for pain)").pairs_checked.is_empty());
        // brand-to-brand through the shared generic
        assert!(check("Calonal ( Tylenol )").pairs_checked[0].consistent);
    }

    fn side_text(ja: bool) -> impl Strategy<Value = String> {
        let lex = Lexicon::builtin();
        let lang = if ja { "ja" } else { "en" };
        let mut pool: Vec<String> = lex
            .entries()
            .iter()
            .flat_map(|e| e.surfaces_in(lang).map(String::from).collect::<Vec<_>>())
            .collect();
        pool.extend([" and ", " was given. ", "、", "を投与。", " "].map(String::from));
        proptest::collection::vec(proptest::sample::select(pool), 0..8).prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn swapping_sides_swaps_unmatched_sets(src in side_text(true), tgt in side_text(false)) {
            let lex = Lexicon::builtin();
            let a = run_mismatch(SideText::new(&src, "ja"), SideText::new(&tgt, "en"), &lex).unwrap();
            let b = run_mismatch(SideText::new(&tgt, "en"), SideText::new(&src, "ja"), &lex).unwrap();
            prop_assert_eq!(&a.unmatched_source_drug_ids, &b.unmatched_target_drug_ids);
            prop_assert_eq!(&a.unmatched_target_drug_ids, &b.unmatched_source_drug_ids);
            prop_assert_eq!(&a.unmatched_source_ae_ids, &b.unmatched_target_ae_ids);
            prop_assert_eq!(&a.unmatched_target_ae_ids, &b.unmatched_source_ae_ids);
            prop_assert_eq!(a.tripped, b.tripped);
            prop_assert!(a.matched_drug_ids.is_disjoint(&a.unmatched_source_drug_ids));
            prop_assert!(a.matched_drug_ids.is_disjoint(&a.unmatched_target_drug_ids));
            prop_assert_eq!(a.tripped, !a.reasons().is_empty());
        }

        #[test]
        fn identical_texts_never_trip(t in side_text(false)) {
            let lex = Lexicon::builtin();
            let r = run_mismatch(SideText::new(&t, "en"), SideText::new(&t, "en"), &lex).unwrap();
            prop_assert!(!r.tripped);
        }
    }
}
