use unicode_normalization::char::canonical_combining_class;
use unicode_normalization::UnicodeNormalization;

/// Identifies the normalization applied to surface forms and searched text.
pub const NORMALIZATION_VERSION: &str = "nfkc-lower-ws1";

fn fold(s: &str) -> String {
    let lowered: String = s.nfkc().collect::<String>().to_lowercase();
    lowered.nfkc().collect()
}

/// NFKC, lowercase, collapse internal whitespace runs to one space, trim.
pub fn normalize(text: &str) -> String {
    let folded = fold(text);
    let mut out = String::with_capacity(folded.len());
    for word in folded.split(char::is_whitespace).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

// A character opens a new chunk unless its compatibility decomposition
// begins with a combining mark or a conjoining Hangul vowel/trailer.
fn starts_chunk(c: char) -> bool {
    let first = std::iter::once(c).nfkd().next().unwrap_or(c);
    canonical_combining_class(first) == 0
        && !matches!(first, '\u{1160}'..='\u{11FF}' | '\u{D7B0}'..='\u{D7FF}')
}

/// Normalized text together with the original byte range each normalized
/// byte came from.
#[derive(Debug, Clone)]
pub(crate) struct NormalizedView {
    pub text: String,
    origin: Vec<(usize, usize)>,
}

impl NormalizedView {
    /// Normalizes chunk by chunk (a starter plus its combining marks) so that
    /// every output byte can be traced back to its source chunk.
    pub fn new(text: &str) -> Self {
        let mut out = String::with_capacity(text.len());
        let mut origin = Vec::with_capacity(text.len());
        let mut chunk_start = 0;
        let mut pending_space = false;

        let flush = |start: usize, end: usize, out: &mut String, origin: &mut Vec<(usize, usize)>, pending: &mut bool| {
            let piece = fold(&text[start..end]);
            for c in piece.chars() {
                if c.is_whitespace() {
                    *pending = true;
                    continue;
                }
                if *pending && !out.is_empty() {
                    out.push(' ');
                    origin.push((start, end));
                }
                *pending = false;
                let before = out.len();
                out.push(c);
                origin.extend(std::iter::repeat_n((start, end), out.len() - before));
            }
        };

        for (i, c) in text.char_indices() {
            if i > chunk_start && starts_chunk(c) {
                flush(chunk_start, i, &mut out, &mut origin, &mut pending_space);
                chunk_start = i;
            }
        }
        if chunk_start < text.len() {
            flush(chunk_start, text.len(), &mut out, &mut origin, &mut pending_space);
        }
        Self { text: out, origin }
    }

    /// Maps a byte range of the normalized text back onto the original text.
    pub fn original_span(&self, start: usize, end: usize) -> (usize, usize) {
        (self.origin[start].0, self.origin[end - 1].1)
    }
}
