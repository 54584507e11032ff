//! Drug and adverse-event vocabularies with multilingual surface forms.
//!
//! A [`Lexicon`] holds one [`TermEntry`] per concept. Cross-lingual identity is
//! carried by the canonical id: a single entry owns both its Japanese and its
//! English surface forms, so a match in the source and a match in the target
//! compare equal by id. Drug entries may link to each other (generic and brand
//! names); adverse-event entries never do.
//!
//! Matching is exact on normalized text with leftmost-longest precedence.
//! Languages written with spaces additionally require matches to sit on word
//! boundaries, so `"paracetamols"` does not match `"paracetamol"`.

mod matcher;
mod normalize;
mod tsv;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use normalize::{normalize, NORMALIZATION_VERSION};
pub(crate) use normalize::NormalizedView;

use matcher::Trie;

/// The synthetic vocabulary bundled with the crate.
pub const BUILTIN_LEXICON_TSV: &str = include_str!("../../fixtures/lexicon.tsv");

/// Languages written without spaces between words; matched by substring.
pub const DEFAULT_UNSPACED_LANGUAGES: &[&str] = &["ja", "zh", "th", "lo", "km", "my"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Drug,
    AdverseEvent,
}

impl TermKind {
    pub const ALL: [TermKind; 2] = [TermKind::Drug, TermKind::AdverseEvent];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Drug => "drug",
            Self::AdverseEvent => "adverse_event",
        }
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TermKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drug" => Ok(Self::Drug),
            "adverse_event" | "ae" => Ok(Self::AdverseEvent),
            other => Err(format!("unknown term kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceForm {
    pub text: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermEntry {
    pub canonical_id: String,
    pub kind: TermKind,
    pub surface_forms: Vec<SurfaceForm>,
    #[serde(default)]
    pub links: Vec<String>,
}

impl TermEntry {
    pub fn surfaces_in<'a>(&'a self, language: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.surface_forms
            .iter()
            .filter(move |s| s.language == language)
            .map(|s| s.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermMatch {
    pub canonical_id: String,
    pub kind: TermKind,
    pub span: (usize, usize),
    pub matched_surface: String,
    pub language: String,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate canonical id {0}")]
    DuplicateId(String),
    #[error("entry {0} has no surface forms")]
    NoSurfaceForms(String),
    #[error("entry {id} has a surface form that is empty after normalization")]
    EmptySurface { id: String },
    #[error("{kind} surface {surface:?} ({language}) is shared by {first} and {second}")]
    DuplicateSurface {
        kind: TermKind,
        surface: String,
        language: String,
        first: String,
        second: String,
    },
    #[error("link {from} -> {to} has no reverse link")]
    AsymmetricLink { from: String, to: String },
    #[error("link {from} -> {to} points at an unknown entry")]
    DanglingLink { from: String, to: String },
    #[error("adverse event {0} must not carry links")]
    AdverseEventLinks(String),
    #[error("unknown canonical id {0}")]
    UnknownId(String),
    #[error("language {0:?} is not covered by this lexicon")]
    UnknownLanguage(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// Immutable vocabulary plus the matchers built from it.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<TermEntry>,
    normalization_version: String,
    index: HashMap<String, usize>,
    tries: HashMap<String, Trie>,
    unspaced: BTreeSet<String>,
    closed_languages: bool,
}

impl Lexicon {
    /// Builds a lexicon, validating id uniqueness, surface uniqueness per
    /// kind and language, and link symmetry.
    pub fn new(entries: Vec<TermEntry>) -> Result<Self, LexiconError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.canonical_id.clone(), i).is_some() {
                return Err(LexiconError::DuplicateId(e.canonical_id.clone()));
            }
        }
        let mut seen: HashMap<(TermKind, String, String), &str> = HashMap::new();
        for e in &entries {
            if e.surface_forms.is_empty() {
                return Err(LexiconError::NoSurfaceForms(e.canonical_id.clone()));
            }
            if e.kind == TermKind::AdverseEvent && !e.links.is_empty() {
                return Err(LexiconError::AdverseEventLinks(e.canonical_id.clone()));
            }
            for sf in &e.surface_forms {
                let norm = normalize(&sf.text);
                if norm.is_empty() {
                    return Err(LexiconError::EmptySurface {
                        id: e.canonical_id.clone(),
                    });
                }
                let key = (e.kind, sf.language.clone(), norm.clone());
                if let Some(first) = seen.get(&key) {
                    if *first != e.canonical_id {
                        return Err(LexiconError::DuplicateSurface {
                            kind: e.kind,
                            surface: norm,
                            language: sf.language.clone(),
                            first: first.to_string(),
                            second: e.canonical_id.clone(),
                        });
                    }
                }
                seen.insert(key, &e.canonical_id);
            }
            for link in &e.links {
                let Some(&j) = index.get(link) else {
                    return Err(LexiconError::DanglingLink {
                        from: e.canonical_id.clone(),
                        to: link.clone(),
                    });
                };
                if !entries[j].links.contains(&e.canonical_id) {
                    return Err(LexiconError::AsymmetricLink {
                        from: e.canonical_id.clone(),
                        to: link.clone(),
                    });
                }
            }
        }

        let mut tries: HashMap<String, Trie> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            for sf in &e.surface_forms {
                tries
                    .entry(sf.language.clone())
                    .or_default()
                    .insert(&normalize(&sf.text), i, e.kind);
            }
        }

        Ok(Self {
            entries,
            normalization_version: NORMALIZATION_VERSION.to_string(),
            index,
            tries,
            unspaced: DEFAULT_UNSPACED_LANGUAGES.iter().map(|s| s.to_string()).collect(),
            closed_languages: true,
        })
    }

    pub fn from_tsv(text: &str) -> Result<Self, LexiconError> {
        Self::new(tsv::parse(text)?)
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_tsv(&text)
    }

    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_LEXICON_TSV).expect("bundled lexicon is valid")
    }

    pub fn to_tsv(&self) -> String {
        tsv::render(&self.entries)
    }

    /// Overrides whether a language is matched on word boundaries.
    pub fn with_word_boundaries(mut self, language: &str, enabled: bool) -> Self {
        if enabled {
            self.unspaced.remove(language);
        } else {
            self.unspaced.insert(language.to_string());
        }
        self
    }

    /// An open lexicon returns no matches for unknown languages instead of
    /// failing.
    pub fn with_open_languages(mut self) -> Self {
        self.closed_languages = false;
        self
    }

    pub fn entries(&self) -> &[TermEntry] {
        &self.entries
    }

    pub fn normalization_version(&self) -> &str {
        &self.normalization_version
    }

    pub fn get(&self, canonical_id: &str) -> Option<&TermEntry> {
        self.index.get(canonical_id).map(|&i| &self.entries[i])
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.tries.keys().map(String::as_str).collect()
    }

    pub fn uses_word_boundaries(&self, language: &str) -> bool {
        !self.unspaced.contains(language)
    }

    pub fn entries_of_kind(&self, kind: TermKind) -> impl Iterator<Item = &TermEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// All non-overlapping matches in `text`, sorted by start offset. Spans
    /// are byte offsets into `text` itself, not into its normalized form.
    pub fn find_terms(
        &self,
        text: &str,
        language: &str,
        kind_filter: Option<TermKind>,
    ) -> Result<Vec<TermMatch>, LexiconError> {
        let Some(trie) = self.tries.get(language) else {
            if self.closed_languages {
                return Err(LexiconError::UnknownLanguage(language.to_string()));
            }
            return Ok(Vec::new());
        };
        let view = NormalizedView::new(text);
        let hits = trie.scan(&view.text, self.uses_word_boundaries(language), kind_filter);
        Ok(hits
            .into_iter()
            .map(|hit| {
                let entry = &self.entries[hit.entry];
                TermMatch {
                    canonical_id: entry.canonical_id.clone(),
                    kind: entry.kind,
                    span: view.original_span(hit.start, hit.end),
                    matched_surface: view.text[hit.start..hit.end].to_string(),
                    language: language.to_string(),
                }
            })
            .collect())
    }

    /// Closure of `ids` under link edges.
    pub fn expand_links(&self, ids: &BTreeSet<String>) -> Result<BTreeSet<String>, LexiconError> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<&str> = Vec::new();
        for id in ids {
            if !self.index.contains_key(id) {
                return Err(LexiconError::UnknownId(id.clone()));
            }
            stack.push(id);
        }
        while let Some(id) = stack.pop() {
            if out.insert(id.to_string()) {
                let entry = self.get(id).expect("indexed");
                stack.extend(entry.links.iter().map(String::as_str));
            }
        }
        Ok(out)
    }

    /// True when `a` and `b` are in the same link neighborhood.
    pub fn linked(&self, a: &str, b: &str) -> Result<bool, LexiconError> {
        Ok(self.expand_links(&BTreeSet::from([a.to_string()]))?.contains(b))
    }

    /// Canonical ids grouped by kind, for reporting.
    pub fn id_counts(&self) -> BTreeMap<TermKind, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.kind).or_insert(0) += 1;
        }
        out
    }
}

/// Deduplicated canonical ids of the given kind.
pub fn canonical_set(matches: &[TermMatch], kind: TermKind) -> BTreeSet<String> {
    matches
        .iter()
        .filter(|m| m.kind == kind)
        .map(|m| m.canonical_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, kind: TermKind, forms: &[(&str, &str)], links: &[&str]) -> TermEntry {
        TermEntry {
            canonical_id: id.into(),
            kind,
            surface_forms: forms
                .iter()
                .map(|(t, l)| SurfaceForm {
                    text: t.to_string(),
                    language: l.to_string(),
                })
                .collect(),
            links: links.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn small() -> Lexicon {
        Lexicon::new(vec![
            entry("acetaminophen", TermKind::Drug, &[("paracetamol", "en"), ("acetaminophen", "en"), ("アセトアミノフェン", "ja")], &["tylenol"]),
            entry("tylenol", TermKind::Drug, &[("Tylenol", "en"), ("タイレノール", "ja")], &["acetaminophen"]),
            entry("warfarin", TermKind::Drug, &[("warfarin", "en"), ("ワルファリン", "ja")], &[]),
            entry("warfarin-na", TermKind::Drug, &[("warfarin sodium", "en")], &[]),
            entry("headache", TermKind::AdverseEvent, &[("headache", "en"), ("頭痛", "ja")], &[]),
        ])
        .unwrap()
    }

    #[test]
    fn single_exact_match() {
        let m = small().find_terms("patient took paracetamol", "en", Some(TermKind::Drug)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].canonical_id, "acetaminophen");
        assert_eq!(m[0].span, (13, 24));
        assert_eq!(m[0].matched_surface, "paracetamol");
    }

    #[test]
    fn misspelled_or_inflected_forms_do_not_match() {
        let lex = small();
        assert!(lex.find_terms("paracetamols", "en", Some(TermKind::Drug)).unwrap().is_empty());
        assert!(lex.find_terms("paracetamo1", "en", None).unwrap().is_empty());
    }

    #[test]
    fn japanese_substring_match_byte_offsets() {
        let text = "アセトアミノフェン投与";
        // oracle: substring search over the raw text
        let start = text.find("アセトアミノフェン").unwrap();
        let end = start + "アセトアミノフェン".len();
        assert_eq!((start, end), (0, 27));
        assert_eq!(text[..end].chars().count(), 9);
        let m = small().find_terms(text, "ja", None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].span, (start, end));
    }

    #[test]
    fn longest_match_wins() {
        let m = small()
            .find_terms("given warfarin sodium daily; warfarin stopped", "en", Some(TermKind::Drug))
            .unwrap();
        let ids: Vec<_> = m.iter().map(|m| m.canonical_id.as_str()).collect();
        assert_eq!(ids, ["warfarin-na", "warfarin"]);
    }

    #[test]
    fn longer_candidate_failing_boundary_falls_back_to_shorter() {
        let m = small().find_terms("warfarin sodiumx", "en", Some(TermKind::Drug)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].canonical_id, "warfarin");
    }

    #[test]
    fn spans_point_into_unnormalized_text() {
        let text = "Took  ＴＹＬＥＮＯＬ.";
        let m = small().find_terms(text, "en", None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(&text[m[0].span.0..m[0].span.1], "ＴＹＬＥＮＯＬ");
        assert_eq!(m[0].matched_surface, "tylenol");
    }

    #[test]
    fn kind_filter_and_unknown_language() {
        let lex = small();
        let all = lex.find_terms("headache after tylenol", "en", None).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(canonical_set(&all, TermKind::Drug), BTreeSet::from(["tylenol".to_string()]));
        assert_eq!(
            lex.find_terms("x", "de", None),
            Err(LexiconError::UnknownLanguage("de".into()))
        );
        assert!(lex.with_open_languages().find_terms("x", "de", None).unwrap().is_empty());
    }

    #[test]
    fn word_boundary_policy_is_per_language() {
        let lex = small();
        assert!(lex.find_terms("xtylenolx", "en", None).unwrap().is_empty());
        let lex = lex.with_word_boundaries("en", false);
        assert_eq!(lex.find_terms("xtylenolx", "en", None).unwrap().len(), 1);
    }

    #[test]
    fn canonical_set_dedups_and_filters() {
        let lex = small();
        let m = lex.find_terms("tylenol and Tylenol with headache", "en", None).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(canonical_set(&m, TermKind::Drug).len(), 1);
        assert_eq!(canonical_set(&m, TermKind::AdverseEvent), BTreeSet::from(["headache".into()]));
        assert!(canonical_set(&[], TermKind::Drug).is_empty());
    }

    #[test]
    fn expand_links_closure() {
        let lex = small();
        let s = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(lex.expand_links(&s(&["acetaminophen"])).unwrap(), s(&["acetaminophen", "tylenol"]));
        assert_eq!(lex.expand_links(&s(&["warfarin"])).unwrap(), s(&["warfarin"]));
        assert_eq!(lex.expand_links(&s(&[])).unwrap(), s(&[]));
        assert_eq!(lex.expand_links(&s(&["nope"])), Err(LexiconError::UnknownId("nope".into())));
    }

    #[test]
    fn builtin_links_are_transitive() {
        let lex = Lexicon::builtin();
        // calonal and tylenol are both brands of acetaminophen
        let closure = lex.expand_links(&BTreeSet::from(["DRG-T002".to_string()])).unwrap();
        assert_eq!(
            closure,
            BTreeSet::from(["DRG-G001".to_string(), "DRG-T001".to_string(), "DRG-T002".to_string()])
        );
        assert!(lex.linked("DRG-T001", "DRG-T002").unwrap());
        assert!(!lex.linked("DRG-T001", "DRG-G002").unwrap());
    }

    #[test]
    fn validation_errors() {
        let dup = Lexicon::new(vec![
            entry("a", TermKind::Drug, &[("x", "en")], &[]),
            entry("a", TermKind::Drug, &[("y", "en")], &[]),
        ]);
        assert!(matches!(dup, Err(LexiconError::DuplicateId(_))));
        let shared = Lexicon::new(vec![
            entry("a", TermKind::Drug, &[("X", "en")], &[]),
            entry("b", TermKind::Drug, &[(" x", "en")], &[]),
        ]);
        assert!(matches!(shared, Err(LexiconError::DuplicateSurface { .. })));
        // same surface in different kinds is allowed
        assert!(Lexicon::new(vec![
            entry("a", TermKind::Drug, &[("x", "en")], &[]),
            entry("b", TermKind::AdverseEvent, &[("x", "en")], &[]),
        ])
        .is_ok());
        let asym = Lexicon::new(vec![
            entry("a", TermKind::Drug, &[("x", "en")], &["b"]),
            entry("b", TermKind::Drug, &[("y", "en")], &[]),
        ]);
        assert!(matches!(asym, Err(LexiconError::AsymmetricLink { .. })));
        let ae = Lexicon::new(vec![
            entry("a", TermKind::AdverseEvent, &[("x", "en")], &["b"]),
            entry("b", TermKind::AdverseEvent, &[("y", "en")], &["a"]),
        ]);
        assert!(matches!(ae, Err(LexiconError::AdverseEventLinks(_))));
        let empty = Lexicon::new(vec![entry("a", TermKind::Drug, &[("  ", "en")], &[])]);
        assert!(matches!(empty, Err(LexiconError::EmptySurface { .. })));
        let dangling = Lexicon::new(vec![entry("a", TermKind::Drug, &[("x", "en")], &["zz"])]);
        assert!(matches!(dangling, Err(LexiconError::DanglingLink { .. })));
    }

    #[test]
    fn every_builtin_surface_finds_exactly_its_entry() {
        let lex = Lexicon::builtin();
        for e in lex.entries() {
            for sf in &e.surface_forms {
                let m = lex.find_terms(&sf.text, &sf.language, Some(e.kind)).unwrap();
                assert_eq!(m.len(), 1, "{} ({})", sf.text, sf.language);
                assert_eq!(m[0].canonical_id, e.canonical_id);
                assert_eq!(m[0].span, (0, sf.text.len()));
            }
        }
    }

    fn fragments() -> impl Strategy<Value = String> {
        let lex = Lexicon::builtin();
        let mut pool: Vec<String> = lex
            .entries()
            .iter()
            .flat_map(|e| e.surface_forms.iter().map(|s| s.text.clone()))
            .collect();
        pool.extend(["の", "を", " ", "  ", ", ", "and", "Ｘ", "\t", "投与", "X"].map(String::from));
        proptest::collection::vec(proptest::sample::select(pool), 0..12).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn spans_sorted_disjoint_and_on_char_boundaries(text in fragments(), ja: bool) {
            let lex = Lexicon::builtin();
            let lang = if ja { "ja" } else { "en" };
            for kind in [None, Some(TermKind::Drug), Some(TermKind::AdverseEvent)] {
                let m = lex.find_terms(&text, lang, kind).unwrap();
                for w in m.windows(2) {
                    prop_assert!(w[0].span.1 <= w[1].span.0);
                }
                for t in &m {
                    prop_assert!(t.span.0 < t.span.1);
                    prop_assert!(text.is_char_boundary(t.span.0) && text.is_char_boundary(t.span.1));
                    prop_assert_eq!(normalize(&text[t.span.0..t.span.1]), t.matched_surface.clone());
                }
            }
        }

        #[test]
        fn matching_is_invariant_under_normalization(text in fragments(), ja: bool) {
            let lex = Lexicon::builtin();
            let lang = if ja { "ja" } else { "en" };
            for kind in TermKind::ALL {
                let raw = lex.find_terms(&text, lang, Some(kind)).unwrap();
                let norm = lex.find_terms(&normalize(&text), lang, Some(kind)).unwrap();
                prop_assert_eq!(canonical_set(&raw, kind), canonical_set(&norm, kind));
            }
        }

        #[test]
        fn expand_links_is_idempotent(picks in proptest::collection::vec(0usize..200, 0..6)) {
            let lex = Lexicon::builtin();
            let ids: BTreeSet<String> = picks
                .iter()
                .map(|i| lex.entries()[i % lex.entries().len()].canonical_id.clone())
                .collect();
            let once = lex.expand_links(&ids).unwrap();
            prop_assert!(once.is_superset(&ids));
            prop_assert_eq!(lex.expand_links(&once).unwrap(), once);
        }
    }
}
