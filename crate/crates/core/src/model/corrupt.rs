//! Seeded corruptions applied to a faithful translation.
//!
//! Every corruption returns a [`CorruptionRecord`] naming what was injected or
//! removed and where, so guardrail catch rates are computed against the
//! injector's own account.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexicon::{canonical_set, Lexicon, TermEntry, TermKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    HallucinateDrug,
    DropAe,
    MisspellDrugWithDuplicate,
    MisspellDrugOnly,
    SwapDate,
    NonsensePhrase,
}

impl CorruptionKind {
    pub const ALL: [Self; 6] = [
        Self::HallucinateDrug,
        Self::DropAe,
        Self::MisspellDrugWithDuplicate,
        Self::MisspellDrugOnly,
        Self::SwapDate,
        Self::NonsensePhrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HallucinateDrug => "hallucinate_drug",
            Self::DropAe => "drop_ae",
            Self::MisspellDrugWithDuplicate => "misspell_drug_with_duplicate",
            Self::MisspellDrugOnly => "misspell_drug_only",
            Self::SwapDate => "swap_date",
            Self::NonsensePhrase => "nonsense_phrase",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown corruption kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// `count` for drop_ae; `canonical_id` to force the drug of
    /// hallucinate_drug.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, seed: u64) -> Self {
        Self {
            kind,
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub kind: CorruptionKind,
    pub seed: u64,
    /// Injected drug for hallucinate_drug; dropped AEs for drop_ae; the drug
    /// whose name was misspelled for the misspell kinds.
    pub canonical_ids: Vec<String>,
    /// Byte spans of inserted text in the corrupted output.
    pub inserted_spans: Vec<(usize, usize)>,
    pub inserted_text: Option<String>,
    /// Surface strings cut from the translation.
    pub removed: Vec<String>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CorruptionError {
    #[error("{kind} not applicable: {reason}")]
    NotApplicable { kind: CorruptionKind, reason: String },
    #[error("invalid parameter {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Lexicon(#[from] crate::lexicon::LexiconError),
}

pub struct CorruptionContext<'a> {
    pub lexicon: &'a Lexicon,
    pub source_text: &'a str,
    pub source_language: &'a str,
    pub target_language: &'a str,
}

const MAX_ATTEMPTS: usize = 64;
const SYLLABLES: [&str; 12] = ["zor", "qua", "plim", "vex", "dro", "nak", "fu", "trel", "osk", "wib", "gam", "yul"];

/// Applies `spec` to `target`, which is a translation of `ctx.source_text`.
pub fn apply_corruption(
    target: &str,
    ctx: &CorruptionContext<'_>,
    spec: &CorruptionSpec,
) -> Result<(String, CorruptionRecord), CorruptionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut record = CorruptionRecord {
        kind: spec.kind,
        seed: spec.seed,
        canonical_ids: Vec::new(),
        inserted_spans: Vec::new(),
        inserted_text: None,
        removed: Vec::new(),
    };
    let not_applicable = |reason: &str| CorruptionError::NotApplicable {
        kind: spec.kind,
        reason: reason.to_string(),
    };
    let lex = ctx.lexicon;
    let out = match spec.kind {
        CorruptionKind::HallucinateDrug => {
            let candidates = foreign_drugs(target, ctx)?;
            let entry = match spec.params.get("canonical_id").and_then(|v| v.as_str()) {
                Some(id) => *candidates
                    .iter()
                    .find(|e| e.canonical_id == id)
                    .ok_or_else(|| CorruptionError::InvalidParam(format!("canonical_id {id} is linked to the source")))?,
                None => *candidates.choose(&mut rng).ok_or_else(|| not_applicable("every drug is linked to the source"))?,
            };
            let surfaces: Vec<&str> = entry.surfaces_in(ctx.target_language).collect();
            let surface = *surfaces.choose(&mut rng).ok_or_else(|| not_applicable("drug has no target-language surface"))?;
            let sentence = format!("The patient also received {surface}.");
            let (text, span) = insert_sentence(target, &sentence, &mut rng);
            let found = canonical_set(&lex.find_terms(&text, ctx.target_language, Some(TermKind::Drug))?, TermKind::Drug);
            if !found.contains(&entry.canonical_id) {
                return Err(not_applicable("injected surface did not survive matching"));
            }
            record.canonical_ids.push(entry.canonical_id.clone());
            record.inserted_spans.push(span);
            record.inserted_text = Some(sentence);
            text
        }
        CorruptionKind::DropAe => {
            let count = match spec.params.get("count") {
                None => 1,
                Some(v) => v
                    .as_u64()
                    .filter(|&c| c > 0)
                    .ok_or_else(|| CorruptionError::InvalidParam("count must be a positive integer".into()))?
                    as usize,
            };
            let matches = lex.find_terms(target, ctx.target_language, Some(TermKind::AdverseEvent))?;
            let ids: Vec<String> = canonical_set(&matches, TermKind::AdverseEvent).into_iter().collect();
            if ids.len() < count {
                return Err(not_applicable(&format!("translation mentions {} adverse events", ids.len())));
            }
            let mut dropped: Vec<String> = ids.choose_multiple(&mut rng, count).cloned().collect();
            dropped.sort();
            let mut text = target.to_string();
            for m in matches.iter().rev().filter(|m| dropped.contains(&m.canonical_id)) {
                record.removed.push(text[m.span.0..m.span.1].to_string());
                text.replace_range(m.span.0..m.span.1, "");
            }
            record.removed.reverse();
            let left = canonical_set(&lex.find_terms(&text, ctx.target_language, Some(TermKind::AdverseEvent))?, TermKind::AdverseEvent);
            if dropped.iter().any(|d| left.contains(d)) {
                return Err(not_applicable("removal re-created a dropped term"));
            }
            record.canonical_ids = dropped;
            text
        }
        CorruptionKind::MisspellDrugOnly | CorruptionKind::MisspellDrugWithDuplicate => {
            let entry = if spec.kind == CorruptionKind::MisspellDrugOnly {
                *foreign_drugs(target, ctx)?
                    .choose(&mut rng)
                    .ok_or_else(|| not_applicable("every drug is linked to the source"))?
            } else {
                let matches = lex.find_terms(target, ctx.target_language, Some(TermKind::Drug))?;
                let ids: Vec<String> = canonical_set(&matches, TermKind::Drug).into_iter().collect();
                let id = ids.choose(&mut rng).ok_or_else(|| not_applicable("translation mentions no drug"))?;
                lex.get(id).expect("matched ids exist")
            };
            let surfaces: Vec<&str> = entry.surfaces_in(ctx.target_language).collect();
            let surface = *surfaces.choose(&mut rng).ok_or_else(|| not_applicable("drug has no target-language surface"))?;
            let before = lex.find_terms(target, ctx.target_language, None)?;
            let mut result = None;
            for _ in 0..MAX_ATTEMPTS {
                let wrong = misspell(surface, &mut rng);
                let sentence = format!("The dose of {wrong} was continued.");
                let (text, span) = insert_sentence(target, &sentence, &mut rng);
                let after = lex.find_terms(&text, ctx.target_language, None)?;
                let same = after.len() == before.len()
                    && after.iter().zip(&before).all(|(a, b)| a.canonical_id == b.canonical_id);
                if wrong != surface && same {
                    result = Some((text, span, sentence));
                    break;
                }
            }
            let (text, span, sentence) = result.ok_or_else(|| not_applicable("no misspelling avoided the lexicon"))?;
            record.canonical_ids.push(entry.canonical_id.clone());
            record.inserted_spans.push(span);
            record.inserted_text = Some(sentence);
            text
        }
        CorruptionKind::SwapDate => {
            let dates = iso_dates(target);
            let distinct: BTreeSet<&str> = dates.iter().map(|&(s, e)| &target[s..e]).collect();
            if distinct.len() >= 2 {
                let distinct: Vec<&str> = distinct.into_iter().collect();
                let pick: Vec<&&str> = distinct.choose_multiple(&mut rng, 2).collect();
                let (a, b) = (*pick[0], *pick[1]);
                let mut text = String::with_capacity(target.len());
                let mut pos = 0;
                for &(s, e) in &dates {
                    text.push_str(&target[pos..s]);
                    let d = &target[s..e];
                    let new = if d == a { b } else if d == b { a } else { d };
                    if new != d {
                        record.inserted_spans.push((text.len(), text.len() + new.len()));
                    }
                    text.push_str(new);
                    pos = e;
                }
                text.push_str(&target[pos..]);
                record.removed = vec![a.to_string(), b.to_string()];
                text
            } else if let Some(&(s, e)) = dates.first() {
                let old = &target[s..e];
                let day: u32 = old[8..10].parse().unwrap_or(1);
                let shifted = (day + rng.random_range(1..=27) - 1) % 28 + 1;
                let new = format!("{}{:02}", &old[..8], shifted);
                let text = target.replace(old, &new);
                record.removed = vec![old.to_string()];
                record.inserted_text = Some(new);
                text
            } else {
                return Err(not_applicable("translation contains no ISO date"));
            }
        }
        CorruptionKind::NonsensePhrase => {
            let mut result = None;
            for _ in 0..MAX_ATTEMPTS {
                let words: Vec<String> = (0..rng.random_range(3..=5))
                    .map(|_| {
                        (0..rng.random_range(2..=3))
                            .map(|_| *SYLLABLES.choose(&mut rng).unwrap())
                            .collect::<String>()
                    })
                    .collect();
                let sentence = format!("{}.", capitalize(&words.join(" ")));
                if lex.find_terms(&sentence, ctx.target_language, None)?.is_empty() {
                    let (text, span) = insert_sentence(target, &sentence, &mut rng);
                    result = Some((text, span, sentence));
                    break;
                }
            }
            let (text, span, sentence) = result.ok_or_else(|| not_applicable("nonsense collided with the lexicon"))?;
            record.inserted_spans.push(span);
            record.inserted_text = Some(sentence);
            text
        }
    };
    Ok((out, record))
}

/// Drugs unrelated to anything in the source or already in the target.
fn foreign_drugs<'a>(target: &str, ctx: &CorruptionContext<'a>) -> Result<Vec<&'a TermEntry>, CorruptionError> {
    let lex = ctx.lexicon;
    let mut present = canonical_set(&lex.find_terms(ctx.source_text, ctx.source_language, Some(TermKind::Drug))?, TermKind::Drug);
    present.extend(canonical_set(&lex.find_terms(target, ctx.target_language, Some(TermKind::Drug))?, TermKind::Drug));
    let closure = lex.expand_links(&present)?;
    Ok(lex
        .entries_of_kind(TermKind::Drug)
        .filter(|e| !closure.contains(&e.canonical_id) && e.surfaces_in(ctx.target_language).next().is_some())
        .collect())
}

/// Inserts `sentence` at a seeded sentence boundary; returns the new text and
/// the sentence's byte span.
fn insert_sentence(target: &str, sentence: &str, rng: &mut ChaCha8Rng) -> (String, (usize, usize)) {
    let mut boundaries = vec![0];
    for (i, c) in target.char_indices() {
        if matches!(c, '.' | '。' | '!' | '?') {
            let mut j = i + c.len_utf8();
            while target[j..].starts_with(' ') {
                j += 1;
            }
            if boundaries.last() != Some(&j) {
                boundaries.push(j);
            }
        }
    }
    if boundaries.last() != Some(&target.len()) {
        boundaries.push(target.len());
    }
    let at = *boundaries.choose(rng).unwrap();
    let mut text = String::with_capacity(target.len() + sentence.len() + 2);
    text.push_str(&target[..at]);
    let mut start = text.len();
    if at > 0 && !target[..at].ends_with(' ') {
        text.push(' ');
        start += 1;
    }
    text.push_str(sentence);
    let end = text.len();
    if at < target.len() {
        text.push(' ');
    }
    text.push_str(&target[at..]);
    (text, (start, end))
}

fn misspell(word: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_alphabetic()).collect();
    if letters.len() < 2 {
        return format!("{word}e");
    }
    let mut out = chars.clone();
    let i = letters[rng.random_range(0..letters.len())];
    match rng.random_range(0..4) {
        0 if i + 1 < chars.len() && chars[i + 1].is_alphabetic() && chars[i] != chars[i + 1] => out.swap(i, i + 1),
        1 => {
            out.remove(i);
        }
        2 => out.insert(i, chars[i]),
        _ => {
            const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
            let v = *VOWELS.iter().filter(|&&v| v != chars[i]).collect::<Vec<_>>().choose(rng).unwrap();
            out[i] = *v;
        }
    }
    out.into_iter().collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn iso_dates(text: &str) -> Vec<(usize, usize)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 10 <= b.len() {
        let w = &b[i..i + 10];
        let shape = w.iter().enumerate().all(|(k, &c)| if k == 4 || k == 7 { c == b'-' } else { c.is_ascii_digit() });
        let isolated = (i == 0 || !b[i - 1].is_ascii_digit()) && (i + 10 == b.len() || !b[i + 10].is_ascii_digit());
        if shape && isolated {
            out.push((i, i + 10));
            i += 10;
        } else {
            i += 1;
        }
    }
    out
}
