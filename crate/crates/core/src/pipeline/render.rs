//! Side-by-side HTML with term and entropy highlighting.

use std::fmt::Write;

use crate::guardrail::mismatch::{LabeledMatch, SpanLabel};
use crate::guardrail::tluq::{FlagLevel, FlaggedSpan};
use crate::lexicon::TermKind;

use super::GuardrailReport;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("{panel} span {start}..{end} is outside a text of {len} bytes or splits a character")]
    SpanOutOfBounds {
        panel: &'static str,
        start: usize,
        end: usize,
        len: usize,
    },
}

pub const CSS: &str = "\
.ae-matched{background:#1f77b4;color:#fff}
.ae-unmatched{background:#ffd700}
.drug-matched{background:#2ca02c;color:#fff}
.drug-unmatched{background:#d62728;color:#fff}
.tluq-l1{background:#fde0dd}
.tluq-l2{background:#fa9fb5}
.tluq-l3{background:#e7298a}
.panel{white-space:pre-wrap;font-family:sans-serif}
";

fn escape(out: &mut String, text: &str) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
}

fn term_class(m: &LabeledMatch) -> &'static str {
    match (m.term.kind, m.label) {
        (TermKind::AdverseEvent, SpanLabel::Matched) => "ae-matched",
        (TermKind::AdverseEvent, SpanLabel::Unmatched) => "ae-unmatched",
        (TermKind::Drug, SpanLabel::Matched) => "drug-matched",
        (TermKind::Drug, SpanLabel::Unmatched) => "drug-unmatched",
    }
}

fn level_class(level: FlagLevel) -> &'static str {
    match level {
        FlagLevel::L1 => "tluq-l1",
        FlagLevel::L2 => "tluq-l2",
        FlagLevel::L3 => "tluq-l3",
    }
}

fn check(panel: &'static str, text: &str, start: usize, end: usize) -> Result<(), RenderError> {
    if start > end || end > text.len() || !text.is_char_boundary(start) || !text.is_char_boundary(end) {
        return Err(RenderError::SpanOutOfBounds {
            panel,
            start,
            end,
            len: text.len(),
        });
    }
    Ok(())
}

/// Writes `text[start..end]` with entropy bands clipped to the range.
fn write_banded(out: &mut String, text: &str, start: usize, end: usize, bands: &[FlaggedSpan]) {
    let mut pos = start;
    for b in bands {
        let (s, e) = (b.start.max(start), b.end.min(end));
        if s >= e || s < pos {
            continue;
        }
        escape(out, &text[pos..s]);
        let _ = write!(out, "<span class=\"{}\" data-level=\"{}\">", level_class(b.level), b.level.as_str());
        escape(out, &text[s..e]);
        out.push_str("</span>");
        pos = e;
    }
    escape(out, &text[pos..end]);
}

/// One panel's inner HTML. Term spans are outermost; entropy bands are split
/// at term boundaries so the markup always nests.
pub fn render_panel(
    panel: &'static str,
    text: &str,
    terms: &[LabeledMatch],
    bands: &[FlaggedSpan],
) -> Result<String, RenderError> {
    let mut terms: Vec<&LabeledMatch> = terms.iter().collect();
    terms.sort_by_key(|m| m.term.span);
    for m in &terms {
        check(panel, text, m.term.span.0, m.term.span.1)?;
    }
    let mut bands = bands.to_vec();
    bands.sort_by_key(|b| (b.start, b.end));
    for b in &bands {
        check(panel, text, b.start, b.end)?;
    }
    let mut out = String::with_capacity(text.len() * 2);
    let mut pos = 0;
    for m in terms {
        let (s, e) = m.term.span;
        if s < pos {
            continue;
        }
        write_banded(&mut out, text, pos, s, &bands);
        let _ = write!(out, "<span class=\"{}\" data-canonical-id=\"", term_class(m));
        escape(&mut out, &m.term.canonical_id);
        out.push_str("\">");
        write_banded(&mut out, text, s, e, &bands);
        out.push_str("</span>");
        pos = e;
    }
    write_banded(&mut out, text, pos, text.len(), &bands);
    Ok(out)
}

/// Source and target panel fragments for embedding in another page.
pub fn render_panels(report: &GuardrailReport, source: &str, target: &str) -> Result<(String, String), RenderError> {
    let (src_terms, tgt_terms) = match &report.mismatch {
        Some(m) => (m.source_spans.as_slice(), m.target_spans.as_slice()),
        None => (&[][..], &[][..]),
    };
    let bands = report.tluq.as_ref().map_or(&[][..], |t| t.flagged_spans.as_slice());
    Ok((render_panel("source", source, src_terms, &[])?, render_panel("target", target, tgt_terms, bands)?))
}

/// A standalone HTML page with the two panels side by side.
pub fn render_annotated_html(report: &GuardrailReport, source: &str, target: &str) -> Result<String, RenderError> {
    let (src, tgt) = render_panels(report, source, target)?;
    let mut out = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>");
    escape(&mut out, &report.case_id);
    let _ = write!(
        out,
        "</title><style>{CSS}</style></head><body data-routing=\"{}\">\n\
         <section class=\"panel source\">{src}</section>\n\
         <section class=\"panel target\">{tgt}</section>\n</body></html>\n",
        report.routing.as_str()
    );
    Ok(out)
}
