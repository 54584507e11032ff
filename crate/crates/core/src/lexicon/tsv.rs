//! Tab-separated lexicon files.
//!
//! One row per surface form: `canonical_id, kind, language, surface_form,
//! links`. Rows sharing a canonical id are merged into one entry; links are
//! comma-separated and unioned across rows. Lines starting with `#` and blank
//! lines are skipped.

use std::collections::HashMap;

use super::{LexiconError, SurfaceForm, TermEntry, TermKind};

pub(super) fn parse(text: &str) -> Result<Vec<TermEntry>, LexiconError> {
    let mut entries: Vec<TermEntry> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&cols.len()) {
            return Err(LexiconError::Parse {
                line: line_no,
                message: format!("expected 4 or 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0].trim();
        if id.is_empty() {
            return Err(LexiconError::Parse {
                line: line_no,
                message: "empty canonical_id".into(),
            });
        }
        let kind: TermKind = cols[1].trim().parse().map_err(|message| LexiconError::Parse {
            line: line_no,
            message,
        })?;
        let language = cols[2].trim();
        if language.is_empty() {
            return Err(LexiconError::Parse {
                line: line_no,
                message: "empty language".into(),
            });
        }
        let links = cols
            .get(4)
            .map(|l| {
                l.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect::<Vec<_>>()
            })
            .unwrap_or_default();

        let idx = *by_id.entry(id.to_string()).or_insert_with(|| {
            entries.push(TermEntry {
                canonical_id: id.to_string(),
                kind,
                surface_forms: Vec::new(),
                links: Vec::new(),
            });
            entries.len() - 1
        });
        let entry = &mut entries[idx];
        if entry.kind != kind {
            return Err(LexiconError::Parse {
                line: line_no,
                message: format!("{id} declared as both {} and {kind}", entry.kind),
            });
        }
        entry.surface_forms.push(SurfaceForm {
            text: cols[3].to_string(),
            language: language.to_string(),
        });
        for link in links {
            if !entry.links.contains(&link) {
                entry.links.push(link);
            }
        }
    }
    Ok(entries)
}

pub(super) fn render(entries: &[TermEntry]) -> String {
    let mut out = String::from("# canonical_id\tkind\tlanguage\tsurface_form\tlinks\n");
    for e in entries {
        for (i, sf) in e.surface_forms.iter().enumerate() {
            let links = if i == 0 { e.links.join(",") } else { String::new() };
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.canonical_id, e.kind, sf.language, sf.text, links));
        }
    }
    out
}
