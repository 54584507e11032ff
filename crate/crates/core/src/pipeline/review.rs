//! Dual-review workflow with adjudication of disagreements.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{GuardrailReport, Routing};

pub type Timestamp = DateTime<Utc>;

/// The six five-point questions of the reviewer rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikertQuestion {
    OriginalTranslationClear,
    LlmTranslationClear,
    LlmTranslationComplete,
    LlmInformationCorrect,
    LlmExtraneousInformation,
    LlmKeyInformationNotInSource,
}

const CLARITY: [&str; 5] = [
    "Completely easily understood and well written",
    "Mostly clear and easy to read",
    "Needs rereading to understand",
    "Difficult to understand",
    "Unintelligible",
];

const COMPLETENESS: [&str; 5] = [
    "Complete, not missing any relevant or auxiliary information",
    "Mostly clear and easy to read",
    "Needs rereading to understand",
    "Difficult to understand",
    "Unintelligible",
];

const CORRECTNESS: [&str; 5] = [
    "All translated text correct",
    "Some incorrectness, no impact to interpretation",
    "Inaccuracy that might impact interpretability",
    "Significant inaccuracies impacting interpretability",
    "All translation is inaccurate",
];

const EXTRANEOUS: [&str; 5] = [
    "No extra information in LLM text",
    "Little extra information, none impacting interpretation",
    "Some extra information that might affect the case interpretation",
    "Significant extra information but not all changes interpretation",
    "Significant extra information changing interpretation",
];

impl LikertQuestion {
    pub const ALL: [Self; 6] = [
        Self::OriginalTranslationClear,
        Self::LlmTranslationClear,
        Self::LlmTranslationComplete,
        Self::LlmInformationCorrect,
        Self::LlmExtraneousInformation,
        Self::LlmKeyInformationNotInSource,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OriginalTranslationClear => "original_translation_clear",
            Self::LlmTranslationClear => "llm_translation_clear",
            Self::LlmTranslationComplete => "llm_translation_complete",
            Self::LlmInformationCorrect => "llm_information_correct",
            Self::LlmExtraneousInformation => "llm_extraneous_information",
            Self::LlmKeyInformationNotInSource => "llm_key_information_not_in_source",
        }
    }

    pub fn prompt(self) -> &'static str {
        match self {
            Self::OriginalTranslationClear => "Is the original translation clear?",
            Self::LlmTranslationClear => "Is LLM translation clear?",
            Self::LlmTranslationComplete => "Is LLM translation complete?",
            Self::LlmInformationCorrect => "Is the information in the LLM translation correct?",
            Self::LlmExtraneousInformation => "Does the LLM translation contain extraneous information?",
            Self::LlmKeyInformationNotInSource => "Does the LLM translation contain key information not in the source?",
        }
    }

    /// Level descriptions, index 0 for score 5 down to index 4 for score 1.
    pub fn levels(self) -> &'static [&'static str; 5] {
        match self {
            Self::OriginalTranslationClear | Self::LlmTranslationClear => &CLARITY,
            Self::LlmTranslationComplete => &COMPLETENESS,
            Self::LlmInformationCorrect => &CORRECTNESS,
            Self::LlmExtraneousInformation | Self::LlmKeyInformationNotInSource => &EXTRANEOUS,
        }
    }

    pub fn describe(self, score: u8) -> Option<&'static str> {
        (1..=5).contains(&score).then(|| self.levels()[5 - score as usize])
    }
}

impl fmt::Display for LikertQuestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LikertQuestion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|q| q.as_str() == s).ok_or_else(|| format!("unknown Likert question {s:?}"))
    }
}

/// The eleven yes/no error categories of the reviewer rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryCategory {
    SourceContainsContradictions,
    LlmContainsContradictions,
    WrongDrugNameOrInformation,
    WrongDosage,
    WrongDatesTimes,
    IncorrectMissingAeWrongOutcome,
    RechallengeDechallengeErrors,
    TtoIssues,
    NonsensicalPhrases,
    OtherErrors,
    CaseClinicallyAccurate,
}

impl BinaryCategory {
    pub const ALL: [Self; 11] = [
        Self::SourceContainsContradictions,
        Self::LlmContainsContradictions,
        Self::WrongDrugNameOrInformation,
        Self::WrongDosage,
        Self::WrongDatesTimes,
        Self::IncorrectMissingAeWrongOutcome,
        Self::RechallengeDechallengeErrors,
        Self::TtoIssues,
        Self::NonsensicalPhrases,
        Self::OtherErrors,
        Self::CaseClinicallyAccurate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SourceContainsContradictions => "source_contains_contradictions",
            Self::LlmContainsContradictions => "llm_contains_contradictions",
            Self::WrongDrugNameOrInformation => "wrong_drug_name_or_information",
            Self::WrongDosage => "wrong_dosage",
            Self::WrongDatesTimes => "wrong_dates_times",
            Self::IncorrectMissingAeWrongOutcome => "incorrect_missing_ae_wrong_outcome",
            Self::RechallengeDechallengeErrors => "rechallenge_dechallenge_errors",
            Self::TtoIssues => "tto_issues",
            Self::NonsensicalPhrases => "nonsensical_phrases",
            Self::OtherErrors => "other_errors",
            Self::CaseClinicallyAccurate => "case_clinically_accurate",
        }
    }
}

impl fmt::Display for BinaryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BinaryCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|q| q.as_str() == s).ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerAssessment {
    pub reviewer_id: String,
    pub likert: BTreeMap<LikertQuestion, u8>,
    #[serde(default)]
    pub binary_flags: BTreeMap<BinaryCategory, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    #[serde(default = "Utc::now")]
    pub submitted_at: Timestamp,
}

impl ReviewerAssessment {
    pub fn validate(&self) -> Result<(), ReviewError> {
        if self.reviewer_id.trim().is_empty() {
            return Err(ReviewError::InvalidAssessment("reviewer_id is empty".into()));
        }
        if let Some(q) = LikertQuestion::ALL.iter().find(|q| !self.likert.contains_key(q)) {
            return Err(ReviewError::InvalidAssessment(format!("missing Likert answer for {q}")));
        }
        if let Some((q, v)) = self.likert.iter().find(|(_, v)| !(1..=5).contains(*v)) {
            return Err(ReviewError::InvalidAssessment(format!("{q} = {v} is outside 1..=5")));
        }
        Ok(())
    }

    /// Flag value with unanswered categories read as `false`.
    pub fn flag(&self, category: BinaryCategory) -> bool {
        self.binary_flags.get(&category).copied().unwrap_or(false)
    }

    /// Whether two assessments give the same answer on every rubric field.
    pub fn agrees_with(&self, other: &Self) -> bool {
        self.likert == other.likert && BinaryCategory::ALL.iter().all(|&c| self.flag(c) == other.flag(c))
    }
}

/// The adjudicator's verdict: the reviewer rubric plus a final
/// acceptability call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    #[serde(flatten)]
    pub rubric: ReviewerAssessment,
    pub clinically_acceptable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    InReview,
    Disagreement,
    Adjudicated,
    Closed,
}

impl ReviewStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::InReview => "in_review",
            Self::Disagreement => "disagreement",
            Self::Adjudicated => "adjudicated",
            Self::Closed => "closed",
        }
    }
}

impl FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::Pending, Self::InReview, Self::Disagreement, Self::Adjudicated, Self::Closed]
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown status {s:?}"))
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ReviewError {
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("reviewer {reviewer_id} already assessed case {case_id}")]
    DuplicateReviewer { case_id: String, reviewer_id: String },
    #[error("case {case_id} does not accept this action in status {status}")]
    CaseClosed { case_id: String, status: &'static str },
    #[error("invalid assessment: {0}")]
    InvalidAssessment(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewCase {
    pub case_id: String,
    pub source_text: String,
    pub target_text: String,
    pub report: GuardrailReport,
    pub assessments: Vec<ReviewerAssessment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication: Option<AdjudicationRecord>,
    pub status: ReviewStatus,
}

impl ReviewCase {
    pub fn new(report: GuardrailReport, source_text: impl Into<String>) -> Self {
        Self {
            case_id: report.case_id.clone(),
            source_text: source_text.into(),
            target_text: report.target_text.clone().unwrap_or_default(),
            report,
            assessments: Vec::new(),
            adjudication: None,
            status: ReviewStatus::Pending,
        }
    }

    fn closed(&self) -> ReviewError {
        ReviewError::CaseClosed {
            case_id: self.case_id.clone(),
            status: self.status.as_str(),
        }
    }

    /// Records one reviewer's assessment. The second assessment settles the
    /// status: agreement keeps the case in review and closable; any differing
    /// rubric field marks a disagreement for adjudication.
    pub fn submit_assessment(&mut self, assessment: ReviewerAssessment) -> Result<(), ReviewError> {
        assessment.validate()?;
        if self.assessments.iter().any(|a| a.reviewer_id == assessment.reviewer_id) {
            return Err(ReviewError::DuplicateReviewer {
                case_id: self.case_id.clone(),
                reviewer_id: assessment.reviewer_id,
            });
        }
        if self.assessments.len() >= 2 || !matches!(self.status, ReviewStatus::Pending | ReviewStatus::InReview) {
            return Err(self.closed());
        }
        self.assessments.push(assessment);
        self.status = match self.assessments.as_slice() {
            [a, b] if !a.agrees_with(b) => ReviewStatus::Disagreement,
            _ => ReviewStatus::InReview,
        };
        Ok(())
    }

    pub fn adjudicate(&mut self, record: AdjudicationRecord) -> Result<(), ReviewError> {
        record.rubric.validate()?;
        if self.status != ReviewStatus::Disagreement {
            return Err(self.closed());
        }
        self.adjudication = Some(record);
        self.status = ReviewStatus::Adjudicated;
        Ok(())
    }

    /// Closes an adjudicated case or one with two agreeing assessments.
    pub fn close(&mut self) -> Result<(), ReviewError> {
        let closable = match self.status {
            ReviewStatus::Adjudicated => true,
            ReviewStatus::InReview => self.assessments.len() == 2,
            _ => false,
        };
        if !closable {
            return Err(self.closed());
        }
        self.status = ReviewStatus::Closed;
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let disagree = matches!(self.assessments.as_slice(), [a, b] if !a.agrees_with(b));
        let in_disagreement = self.status == ReviewStatus::Disagreement;
        if self.assessments.len() > 2 {
            return Err("more than two assessments".into());
        }
        if in_disagreement && !disagree {
            return Err("disagreement status without differing assessments".into());
        }
        let settled = matches!(self.status, ReviewStatus::Adjudicated | ReviewStatus::Closed);
        if (self.adjudication.is_some() && !settled)
            || (self.status == ReviewStatus::Adjudicated && self.adjudication.is_none())
        {
            return Err("adjudication and status are inconsistent".into());
        }
        if disagree && self.adjudication.is_none() && !in_disagreement {
            return Err("differing assessments must await adjudication".into());
        }
        Ok(())
    }
}

/// Triage summary of a case, as listed by the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub case_id: String,
    pub status: ReviewStatus,
    pub routing: Routing,
    pub routing_reasons: Vec<String>,
    pub case_entropy: Option<f64>,
    pub unmatched_drugs: usize,
    pub unmatched_aes: usize,
    pub assessments: usize,
}

impl From<&ReviewCase> for QueueItem {
    fn from(c: &ReviewCase) -> Self {
        let m = c.report.mismatch.as_ref();
        Self {
            case_id: c.case_id.clone(),
            status: c.status,
            routing: c.report.routing,
            routing_reasons: c.report.routing_reasons.clone(),
            case_entropy: c.report.tluq.as_ref().map(|t| t.case_entropy),
            unmatched_drugs: m.map_or(0, |m| m.unmatched_source_drug_ids.len() + m.unmatched_target_drug_ids.len()),
            unmatched_aes: m.map_or(0, |m| m.unmatched_source_ae_ids.len() + m.unmatched_target_ae_ids.len()),
            assessments: c.assessments.len(),
        }
    }
}
