//! Inter-rater agreement over dual-reviewed cases.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::review::{BinaryCategory, LikertQuestion, ReviewCase};
use crate::metrics::{weighted_kappa, KappaWeights, MetricsError, RaterTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RubricKey {
    Likert(LikertQuestion),
    Binary(BinaryCategory),
}

impl fmt::Display for RubricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Likert(q) => q.fmt(f),
            Self::Binary(c) => c.fmt(f),
        }
    }
}

impl FromStr for RubricKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse()
            .map(Self::Likert)
            .or_else(|_| s.parse().map(Self::Binary))
            .map_err(|_| format!("unknown rubric key {s:?}"))
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub question: String,
    pub table: RaterTable,
    pub kappa: f64,
}

/// Builds the first-versus-second reviewer table for `key` and its
/// quadratically weighted kappa. Binary answers map to 1 = no, 2 = yes.
pub fn compute_agreement(cases: &[ReviewCase], key: RubricKey) -> Result<AgreementResult, AgreementError> {
    if cases.is_empty() {
        return Err(AgreementError::InsufficientData("no cases".into()));
    }
    let score = |a: &super::review::ReviewerAssessment| -> Option<usize> {
        match key {
            RubricKey::Likert(q) => a.likert.get(&q).map(|&v| usize::from(v)),
            RubricKey::Binary(c) => Some(usize::from(a.flag(c)) + 1),
        }
    };
    let pairs = cases
        .iter()
        .map(|c| match c.assessments.as_slice() {
            [a, b, ..] => score(a).zip(score(b)).ok_or_else(|| {
                AgreementError::InsufficientData(format!("case {} lacks an answer for {key}", c.case_id))
            }),
            _ => Err(AgreementError::InsufficientData(format!("case {} has fewer than two assessments", c.case_id))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = RaterTable::from_pairs(if matches!(key, RubricKey::Likert(_)) { 5 } else { 2 }, &pairs)?;
    if let RubricKey::Binary(_) = key {
        table.categories = vec!["no".into(), "yes".into()];
    }
    let kappa = weighted_kappa(&table, KappaWeights::Quadratic)?;
    Ok(AgreementResult {
        question: key.to_string(),
        table,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::super::review::tests::{assessment, case};
    use super::*;

    fn reviewed(id: &str, a: u8, b: u8) -> ReviewCase {
        let mut c = case();
        c.case_id = id.into();
        c.submit_assessment(assessment("a", a)).unwrap();
        c.submit_assessment(assessment("b", b)).unwrap();
        c
    }

    #[test]
    fn unanimous_fours_are_degenerate() {
        let cases = vec![reviewed("1", 4, 4), reviewed("2", 4, 4)];
        let err = compute_agreement(&cases, RubricKey::Likert(LikertQuestion::LlmTranslationClear)).unwrap_err();
        assert_eq!(err, AgreementError::Metrics(MetricsError::DegenerateMarginals));
    }

    #[test]
    fn disagreement_only_is_not_positive() {
        let mut x = reviewed("1", 4, 4);
        x.assessments[0].binary_flags.insert(BinaryCategory::WrongDosage, true);
        let mut y = reviewed("2", 4, 4);
        y.assessments[1].binary_flags.insert(BinaryCategory::WrongDosage, true);
        let r = compute_agreement(&[x, y], RubricKey::Binary(BinaryCategory::WrongDosage)).unwrap();
        assert_eq!(r.table.counts, vec![vec![0, 1], vec![1, 0]]);
        // Observed weighted disagreement 1, expected 1/2: kappa = 1 - 1/0.5.
        assert_eq!(r.kappa, -1.0);
    }

    #[test]
    fn likert_table_and_kappa() {
        let cases = vec![reviewed("1", 5, 5), reviewed("2", 4, 3), reviewed("3", 3, 3), reviewed("4", 1, 2)];
        let r = compute_agreement(&cases, "llm_information_correct".parse().unwrap()).unwrap();
        assert_eq!(r.table.total(), 4);
        assert_eq!(r.table.counts[3][2], 1);
        assert!(r.kappa > 0.5 && r.kappa < 1.0);
    }

    #[test]
    fn missing_assessments_are_insufficient() {
        let mut c = case();
        c.submit_assessment(assessment("a", 4)).unwrap();
        assert!(matches!(
            compute_agreement(&[c], RubricKey::Likert(LikertQuestion::LlmTranslationClear)),
            Err(AgreementError::InsufficientData(_))
        ));
        assert!(compute_agreement(&[], RubricKey::Binary(BinaryCategory::TtoIssues)).is_err());
    }
}
