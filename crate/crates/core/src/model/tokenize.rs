//! Deterministic tokenization used by the mock model and its vocabulary.

fn is_unspaced(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF   // kana
        | 0x3400..=0x4DBF // CJK extension A
        | 0x4E00..=0x9FFF // CJK unified
        | 0xAC00..=0xD7AF // hangul syllables
        | 0xF900..=0xFAFF
        | 0xFF66..=0xFF9F // halfwidth katakana
    ) || ('\u{0E00}'..='\u{0EFF}').contains(&c)
}

/// Source-side tokens as byte spans: one token per CJK character, per run of
/// other alphanumerics, and per remaining non-space character.
pub fn source_tokens(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut run: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let word_char = c.is_alphanumeric() && !is_unspaced(c);
        if word_char {
            run.get_or_insert(i);
            continue;
        }
        if let Some(s) = run.take() {
            out.push((s, i));
        }
        if !c.is_whitespace() {
            out.push((i, i + c.len_utf8()));
        }
    }
    if let Some(s) = run {
        out.push((s, text.len()));
    }
    out
}

/// Target-side tokens that tile the text: each starts at a word or CJK
/// character and carries its trailing whitespace. Leading whitespace belongs
/// to the first token.
pub fn target_tokens(text: &str) -> Vec<(usize, usize)> {
    let mut starts = vec![0];
    let mut prev: Option<char> = None;
    for (i, c) in text.char_indices() {
        if i > 0 && !c.is_whitespace() {
            let p = prev.unwrap_or(' ');
            let boundary = p.is_whitespace()
                || is_unspaced(c)
                || is_unspaced(p)
                || (c.is_alphanumeric() != p.is_alphanumeric());
            if boundary && starts.last() != Some(&i) {
                starts.push(i);
            }
        }
        prev = Some(c);
    }
    if text.is_empty() {
        return Vec::new();
    }
    // a first token made only of whitespace merges into the next one
    if starts.len() > 1 && text[..starts[1]].trim().is_empty() {
        starts.remove(1);
    }
    let mut spans: Vec<(usize, usize)> = starts.windows(2).map(|w| (w[0], w[1])).collect();
    spans.push((*starts.last().unwrap(), text.len()));
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str, spans: &[(usize, usize)]) -> Vec<String> {
        spans.iter().map(|&(a, b)| s[a..b].to_string()).collect()
    }

    #[test]
    fn source_tokens_split_cjk_by_char() {
        let s = "45歳の男性。Aspirin 100mg";
        assert_eq!(texts(s, &source_tokens(s)), vec!["45", "歳", "の", "男", "性", "。", "Aspirin", "100mg"]);
        assert!(source_tokens("   ").is_empty());
    }

    #[test]
    fn target_tokens_tile() {
        let s = "  The patient had rash, fever.";
        assert_eq!(texts(s, &target_tokens(s)), vec!["  The ", "patient ", "had ", "rash", ", ", "fever", "."]);
        assert!(target_tokens("").is_empty());
        assert_eq!(target_tokens("   "), vec![(0, 3)]);
    }

    proptest! {
        #[test]
        fn target_tokens_always_tile(s in "[a-z ,.頭痛]{0,30}") {
            let spans = target_tokens(&s);
            let mut pos = 0;
            for (a, b) in &spans {
                prop_assert_eq!(*a, pos);
                prop_assert!(b > a);
                pos = *b;
            }
            prop_assert_eq!(pos, s.len());
        }
    }
}
