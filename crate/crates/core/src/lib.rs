//! Guardrails around a translation model for pharmacovigilance case reports.
pub mod guardrail;
pub mod icsr;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod config;
pub mod pipeline;
