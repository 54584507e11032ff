use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::lexicon::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Whitespace split after normalization.
    #[default]
    Plain,
    /// Punctuation and symbols split into their own tokens.
    Intl,
}

impl Tokenizer {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Intl => "intl",
        }
    }
}

impl FromStr for Tokenizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Self::Plain),
            "intl" => Ok(Self::Intl),
            other => Err(format!("unknown tokenizer {other:?}")),
        }
    }
}

pub fn tokenize(text: &str, tokenizer: Tokenizer) -> Vec<String> {
    let text = normalize(text);
    match tokenizer {
        Tokenizer::Plain => text.split_whitespace().map(String::from).collect(),
        Tokenizer::Intl => {
            let mut out = Vec::new();
            for word in text.split_whitespace() {
                let mut cur = String::new();
                for c in word.chars() {
                    if c.is_alphanumeric() {
                        cur.push(c);
                    } else {
                        if !cur.is_empty() {
                            out.push(std::mem::take(&mut cur));
                        }
                        out.push(c.to_string());
                    }
                }
                if !cur.is_empty() {
                    out.push(cur);
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add-one smoothing of the higher-order precisions.
    pub smoothing: bool,
    pub tokenizer: Tokenizer,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            smoothing: false,
            tokenizer: Tokenizer::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    pub score: f64,
    pub ngram_precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub tokenizer_tag: String,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub empty_hypothesis: bool,
}

#[derive(Default, Clone)]
struct Counts {
    matches: Vec<u64>,
    totals: Vec<u64>,
    hyp_len: usize,
    ref_len: usize,
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

fn segment_counts<S: AsRef<str>>(hyp: &[S], refs: &[Vec<S>], max_n: usize) -> Counts {
    let mut c = Counts {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        hyp_len: hyp.len(),
        // closest reference length, shorter on ties
        ref_len: refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(hyp.len()), r))
            .unwrap_or(0),
    };
    for n in 1..=max_n {
        let h = ngrams(hyp, n);
        let mut max_ref: HashMap<Vec<&str>, u64> = HashMap::new();
        for r in refs {
            for (g, k) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        c.totals[n - 1] = h.values().sum();
        c.matches[n - 1] = h.iter().map(|(g, &k)| k.min(*max_ref.get(g).unwrap_or(&0))).sum();
    }
    c
}

fn finish(c: &Counts, opts: &BleuOptions) -> BleuResult {
    let precisions: Vec<f64> = (0..opts.max_n)
        .map(|i| {
            let (m, t) = (c.matches[i] as f64, c.totals[i] as f64);
            if c.totals[i] == 0 {
                0.0
            } else if opts.smoothing && i > 0 {
                (m + 1.0) / (t + 1.0)
            } else {
                m / t
            }
        })
        .collect();
    let empty = c.hyp_len == 0;
    let brevity_penalty = if empty {
        0.0
    } else if c.hyp_len <= c.ref_len {
        (1.0 - c.ref_len as f64 / c.hyp_len as f64).exp()
    } else {
        1.0
    };
    let score = if empty || precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / opts.max_n as f64).exp()
    };
    BleuResult {
        score,
        ngram_precisions: precisions,
        brevity_penalty,
        tokenizer_tag: opts.tokenizer.tag().to_string(),
        hypothesis_length: c.hyp_len,
        reference_length: c.ref_len,
        empty_hypothesis: empty,
    }
}

/// Sentence BLEU over pre-tokenized text. An empty hypothesis scores 0 with
/// `empty_hypothesis` set.
pub fn bleu<S: AsRef<str>>(hypothesis: &[S], references: &[Vec<S>], opts: &BleuOptions) -> Result<BleuResult, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    if opts.max_n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(finish(&segment_counts(hypothesis, references, opts.max_n), opts))
}

/// Corpus BLEU: n-gram counts and lengths are pooled before the ratios.
pub fn corpus_bleu<S: AsRef<str>>(segments: &[(Vec<S>, Vec<Vec<S>>)], opts: &BleuOptions) -> Result<BleuResult, MetricsError> {
    if segments.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if opts.max_n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = Counts {
        matches: vec![0; opts.max_n],
        totals: vec![0; opts.max_n],
        ..Counts::default()
    };
    for (hyp, refs) in segments {
        if refs.is_empty() {
            return Err(MetricsError::EmptyReferences);
        }
        let c = segment_counts(hyp, refs, opts.max_n);
        for i in 0..opts.max_n {
            total.matches[i] += c.matches[i];
            total.totals[i] += c.totals[i];
        }
        total.hyp_len += c.hyp_len;
        total.ref_len += c.ref_len;
    }
    Ok(finish(&total, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s, Tokenizer::Plain)
    }

    #[test]
    fn bleu_examples() {
        let opts = BleuOptions::default();
        let s = toks("the patient developed a rash after dosing");
        assert_eq!(bleu(&s, std::slice::from_ref(&s), &opts).unwrap().score, 1.0);
        let r = bleu(&toks("the the the the"), &[toks("the cat")], &opts).unwrap();
        assert_relative_eq!(r.ngram_precisions[0], 0.25);
        assert_eq!(bleu(&toks("a b c d"), &[toks("w x y z")], &opts).unwrap().score, 0.0);
        assert_eq!(bleu(&toks("a"), &Vec::<Vec<String>>::new(), &opts), Err(MetricsError::EmptyReferences));
        let empty = bleu(&Vec::<String>::new(), &[toks("a")], &opts).unwrap();
        assert!(empty.empty_hypothesis && empty.score == 0.0);
    }

    #[test]
    fn brevity_uses_closest_reference() {
        let opts = BleuOptions {
            max_n: 1,
            ..BleuOptions::default()
        };
        let r = bleu(&toks("a b c"), &[toks("a b c d e f g"), toks("a b c d")], &opts).unwrap();
        assert_eq!(r.reference_length, 4);
        assert_relative_eq!(r.brevity_penalty, (1.0f64 - 4.0 / 3.0).exp());
    }

    #[test]
    fn tokenizers_differ_on_punctuation() {
        assert_eq!(tokenize("Rash, fever.", Tokenizer::Plain), vec!["rash,", "fever."]);
        assert_eq!(tokenize("Rash, fever.", Tokenizer::Intl), vec!["rash", ",", "fever", "."]);
        let opts = BleuOptions {
            tokenizer: Tokenizer::Intl,
            ..BleuOptions::default()
        };
        let h = tokenize("he had a rash, then fever.", Tokenizer::Intl);
        assert_eq!(bleu(&h, std::slice::from_ref(&h), &opts).unwrap().tokenizer_tag, "intl");
    }

    #[test]
    fn smoothing_rescues_missing_higher_orders() {
        let h = toks("a b x c d");
        let r = vec![toks("a b y c d")];
        assert_eq!(bleu(&h, &r, &BleuOptions::default()).unwrap().score, 0.0);
        let smoothed = BleuOptions {
            smoothing: true,
            ..BleuOptions::default()
        };
        assert!(bleu(&h, &r, &smoothed).unwrap().score > 0.0);
    }

    #[test]
    fn corpus_pools_counts() {
        let opts = BleuOptions {
            max_n: 1,
            ..BleuOptions::default()
        };
        let segs = vec![(toks("a b"), vec![toks("a b")]), (toks("c x"), vec![toks("c d")])];
        let r = corpus_bleu(&segs, &opts).unwrap();
        assert_relative_eq!(r.ngram_precisions[0], 0.75);
    }

    proptest! {
        #[test]
        fn reference_order_is_irrelevant(
            h in proptest::collection::vec(0u8..4, 0..10),
            refs in proptest::collection::vec(proptest::collection::vec(0u8..4, 0..10), 1..4),
        ) {
            let s = |v: &Vec<u8>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
            let h = s(&h);
            let refs: Vec<Vec<String>> = refs.iter().map(s).collect();
            let mut rev = refs.clone();
            rev.reverse();
            let opts = BleuOptions::default();
            prop_assert_eq!(bleu(&h, &refs, &opts).unwrap(), bleu(&h, &rev, &opts).unwrap());
        }
    }
}
