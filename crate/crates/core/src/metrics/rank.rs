use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Largest combined sample size that is tested by exact enumeration.
pub const EXACT_LIMIT: usize = 12;

/// Average ranks (1-based) with ties sharing their mean rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    let ranks = midranks(scores);
    let r_pos: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MannWhitney {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: MannWhitney,
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitneyResult, MetricsError> {
    if x.is_empty() || y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let ranks = midranks(&pooled);
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let u = ranks[..n1].iter().sum::<f64>() - offset;
    let mean = (n1 * n2) as f64 / 2.0;
    let observed = (u - mean).abs();

    if n <= EXACT_LIMIT {
        let (mut extreme, mut total) = (0u64, 0u64);
        for_each_subset(n, n1, &mut |subset| {
            let ui = subset.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
            total += 1;
            if (ui - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        });
        return Ok(MannWhitneyResult {
            u,
            p_value: extreme as f64 / total as f64,
            method: MannWhitney::Exact,
        });
    }

    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let nf = n as f64;
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((observed - 0.5).max(0.0)) / var.sqrt();
        statrs::function::erf::erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitneyResult {
        u,
        p_value,
        method: MannWhitney::Normal,
    })
}

fn for_each_subset(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..=n - (k - cur.len()) {
            cur.push(i);
            go(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::with_capacity(k), f);
}
