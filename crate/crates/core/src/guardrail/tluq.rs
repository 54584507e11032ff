//! Token-level soft guardrail.
//!
//! Each generated token carries a predictive distribution. Its entropy (in
//! nats) scores how unsure the model was; the most entropic tokens of a
//! document are highlighted in three bands, and the mean entropy gives a
//! case-level score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::{mann_whitney_u, MannWhitney, MetricsError};

pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

/// Band percentages, most selective first.
pub const BAND_PERCENTS: [(u32, FlagLevel); 3] = [(1, FlagLevel::L3), (5, FlagLevel::L2), (10, FlagLevel::L1)];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TluqError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {entropies} entropies, {spans} spans")]
    LengthMismatch { entropies: usize, spans: usize },
    #[error("stratum {0} has no observations")]
    EmptyStratum(String),
    #[error("n_trials must be positive")]
    InvalidTrials,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution_kind", rename_all = "snake_case")]
pub enum Distribution {
    Full { probabilities: Vec<f64> },
    Topk { topk: Vec<(String, f64)> },
}

impl Distribution {
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            Self::Full { probabilities } => probabilities.clone(),
            Self::Topk { topk } => topk.iter().map(|(_, p)| *p).collect(),
        }
    }

    pub fn is_truncated(&self) -> bool {
        matches!(self, Self::Topk { .. })
    }

    /// Top-k list rescaled to unit mass from raw (possibly partial) scores.
    pub fn topk_renormalized(topk: Vec<(String, f64)>) -> Result<Self, TluqError> {
        if topk.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(TluqError::InvalidDistribution("negative or non-finite mass".into()));
        }
        let total: f64 = topk.iter().map(|(_, p)| p).sum();
        if total <= 0.0 {
            return Err(TluqError::InvalidDistribution("top-k list has no mass".into()));
        }
        Ok(Self::Topk {
            topk: topk.into_iter().map(|(t, p)| (t, p / total)).collect(),
        })
    }

    pub fn validate(&self) -> Result<(), TluqError> {
        let p = self.probabilities();
        if p.is_empty() {
            return Err(TluqError::InvalidDistribution("no outcomes".into()));
        }
        if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(TluqError::InvalidDistribution(format!("mass {x} is negative or non-finite")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(TluqError::InvalidDistribution(format!("mass sums to {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token_text: String,
    pub byte_span: (usize, usize),
    #[serde(flatten)]
    pub distribution: Distribution,
}

/// Shannon entropy in nats.
pub fn token_entropy(distribution: &Distribution) -> Result<f64, TluqError> {
    distribution.validate()?;
    let h = -distribution
        .probabilities()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlagLevel {
    L1,
    L2,
    L3,
}

impl FlagLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::L1 => "L1",
            Self::L2 => "L2",
            Self::L3 => "L3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSpan {
    pub start: usize,
    pub end: usize,
    pub level: FlagLevel,
}

/// Entropy cut-offs for the three bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandThresholds {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl BandThresholds {
    /// Nearest-rank thresholds: the band for `pct` starts at the
    /// `ceil(pct * n / 100)`-th largest value.
    pub fn from_entropies(entropies: &[f64]) -> Result<Self, TluqError> {
        if entropies.is_empty() {
            return Err(TluqError::EmptyInput);
        }
        let mut desc = entropies.to_vec();
        desc.sort_by(|a, b| b.total_cmp(a));
        let n = desc.len();
        let at = |pct: usize| desc[(pct * n).div_ceil(100).max(1) - 1];
        Ok(Self {
            l1: at(10),
            l2: at(5),
            l3: at(1),
        })
    }

    pub fn level(&self, entropy: f64) -> Option<FlagLevel> {
        if entropy >= self.l3 {
            Some(FlagLevel::L3)
        } else if entropy >= self.l2 {
            Some(FlagLevel::L2)
        } else if entropy >= self.l1 {
            Some(FlagLevel::L1)
        } else {
            None
        }
    }
}

/// Per-document percentile flagging.
pub fn flag_spans(entropies: &[f64], spans: &[(usize, usize)]) -> Result<Vec<FlaggedSpan>, TluqError> {
    let thresholds = BandThresholds::from_entropies(entropies)?;
    flag_spans_with(entropies, spans, &thresholds)
}

/// Flagging against fixed thresholds, e.g. ones derived from a whole corpus.
pub fn flag_spans_with(
    entropies: &[f64],
    spans: &[(usize, usize)],
    thresholds: &BandThresholds,
) -> Result<Vec<FlaggedSpan>, TluqError> {
    if entropies.len() != spans.len() {
        return Err(TluqError::LengthMismatch {
            entropies: entropies.len(),
            spans: spans.len(),
        });
    }
    if entropies.is_empty() {
        return Err(TluqError::EmptyInput);
    }
    Ok(entropies
        .iter()
        .zip(spans)
        .filter_map(|(&h, &(start, end))| thresholds.level(h).map(|level| FlaggedSpan { start, end, level }))
        .collect())
}

/// Mean entropy and whether the input was empty.
pub fn case_entropy_score(entropies: &[f64]) -> (f64, bool) {
    if entropies.is_empty() {
        (0.0, true)
    } else {
        (entropies.iter().sum::<f64>() / entropies.len() as f64, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMode {
    #[default]
    PerDocument,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TluqAnnotation {
    pub token_entropies: Vec<f64>,
    pub case_entropy: f64,
    pub empty: bool,
    /// Entropies were computed on renormalized top-k lists.
    pub truncated: bool,
    pub flagged_spans: Vec<FlaggedSpan>,
}

/// Scores every token; `global` replaces the per-document thresholds.
pub fn annotate(tokens: &[TokenRecord], global: Option<&BandThresholds>) -> Result<TluqAnnotation, TluqError> {
    let token_entropies = tokens
        .iter()
        .map(|t| token_entropy(&t.distribution))
        .collect::<Result<Vec<_>, _>>()?;
    let (case_entropy, empty) = case_entropy_score(&token_entropies);
    let spans: Vec<_> = tokens.iter().map(|t| t.byte_span).collect();
    let flagged_spans = match (empty, global) {
        (true, _) => Vec::new(),
        (false, Some(t)) => flag_spans_with(&token_entropies, &spans, t)?,
        (false, None) => flag_spans(&token_entropies, &spans)?,
    };
    Ok(TluqAnnotation {
        truncated: tokens.iter().any(|t| t.distribution.is_truncated()),
        token_entropies,
        case_entropy,
        empty,
        flagged_spans,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumComparison {
    pub pair: (String, String),
    pub u_statistic: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub method: MannWhitney,
}

/// Pairwise two-sided Mann-Whitney tests with Bonferroni adjustment.
pub fn compare_strata(
    scores_by_stratum: &BTreeMap<String, Vec<f64>>,
    n_trials: usize,
) -> Result<Vec<StratumComparison>, TluqError> {
    if n_trials == 0 {
        return Err(TluqError::InvalidTrials);
    }
    if let Some((label, _)) = scores_by_stratum.iter().find(|(_, v)| v.is_empty()) {
        return Err(TluqError::EmptyStratum(label.clone()));
    }
    let labels: Vec<&String> = scores_by_stratum.keys().collect();
    let mut out = Vec::new();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            let r = mann_whitney_u(&scores_by_stratum[*a], &scores_by_stratum[*b])?;
            out.push(StratumComparison {
                pair: ((*a).clone(), (*b).clone()),
                u_statistic: r.u,
                raw_p: r.p_value,
                adjusted_p: bonferroni(r.p_value, n_trials),
                method: r.method,
            });
        }
    }
    Ok(out)
}

pub fn bonferroni(raw_p: f64, n_trials: usize) -> f64 {
    (raw_p * n_trials as f64).min(1.0)
}
