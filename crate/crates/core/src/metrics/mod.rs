//! Evaluation statistics: BLEU, word error rate, perplexity, weighted kappa,
//! AUROC and the Mann-Whitney U test.

mod bleu;
mod rank;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu, corpus_bleu, tokenize, BleuOptions, BleuResult, Tokenizer};
pub use rank::{auroc, mann_whitney_u, MannWhitney, MannWhitneyResult, EXACT_LIMIT};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty references")]
    EmptyReferences,
    #[error("empty reference")]
    EmptyReference,
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("rater table: {0}")]
    InvalidTable(String),
    #[error("expected weighted disagreement is zero")]
    DegenerateMarginals,
    #[error("both classes are required")]
    OneClassOnly,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value")]
    NonFinite,
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Unit-cost Levenshtein distance over the reference length.
pub fn word_error_rate<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// `exp(-mean ln p)` over the probabilities of the realized tokens.
pub fn per_token_perplexity(token_probs: &[f64]) -> Result<f64, MetricsError> {
    if token_probs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(&p) = token_probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(MetricsError::InvalidProbability(p));
    }
    let mean_nll = -token_probs.iter().map(|p| p.ln()).sum::<f64>() / token_probs.len() as f64;
    Ok(mean_nll.exp())
}

/// Square contingency table of two raters over ordered categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterTable {
    pub categories: Vec<String>,
    /// Rows are rater 1, columns rater 2.
    pub counts: Vec<Vec<u64>>,
}

impl RaterTable {
    pub fn new(categories: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let c = categories.len();
        if c < 2 {
            return Err(MetricsError::InvalidTable("at least two categories are required".into()));
        }
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(MetricsError::InvalidTable(format!("counts must be {c}x{c}")));
        }
        if counts.iter().flatten().sum::<u64>() == 0 {
            return Err(MetricsError::InvalidTable("table is empty".into()));
        }
        Ok(Self { categories, counts })
    }

    /// Table over categories `1..=c` from paired ratings.
    pub fn from_pairs(c: usize, pairs: &[(usize, usize)]) -> Result<Self, MetricsError> {
        let mut counts = vec![vec![0; c]; c];
        for &(a, b) in pairs {
            if a == 0 || b == 0 || a > c || b > c {
                return Err(MetricsError::InvalidTable(format!("rating pair ({a}, {b}) outside 1..={c}")));
            }
            counts[a - 1][b - 1] += 1;
        }
        Self::new((1..=c).map(|i| i.to_string()).collect(), counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transposed(&self) -> Self {
        let c = self.categories.len();
        Self {
            categories: self.categories.clone(),
            counts: (0..c).map(|j| (0..c).map(|i| self.counts[i][j]).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaWeights {
    #[default]
    Quadratic,
}

pub fn weighted_kappa(table: &RaterTable, weights: KappaWeights) -> Result<f64, MetricsError> {
    let KappaWeights::Quadratic = weights;
    let c = table.categories.len();
    let total = table.total() as f64;
    let o: Vec<Vec<f64>> = table
        .counts
        .iter()
        .map(|r| r.iter().map(|&x| x as f64 / total).collect())
        .collect();
    let row: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..c).map(|j| o.iter().map(|r| r[j]).sum()).collect();
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64 - j as f64) / (c as f64 - 1.0)).powi(2);
            observed += w * o[i][j];
            expected += w * row[i] * col[j];
        }
    }
    if expected <= f64::EPSILON {
        return Err(MetricsError::DegenerateMarginals);
    }
    Ok(1.0 - observed / expected)
}
