//! The three guardrails: a hard lexicon check and two uncertainty scores.

pub mod dluq;
pub mod mismatch;
pub mod tluq;
