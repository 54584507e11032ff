//! Synthetic replicas of the guardrail assessment protocols.
//!
//! * DL-UQ: a cache of synthetic case reports, then held-out case reports
//!   and injected extraneous documents scored against it (AUROC).
//! * MISMATCH: seeded corruptions of faithful pairs, caught or not.
//! * Missrate histograms for faithful and corrupted translations.
//! * TL-UQ: case entropy across simulated reviewer strata, compared pairwise
//!   with Bonferroni-adjusted Mann-Whitney tests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::guardrail::dluq::{build_cache, calibrate_threshold, pool_embedding, score_document, DluqError};
use crate::guardrail::mismatch::{run_mismatch, MismatchReport, SideText};
use crate::guardrail::tluq::{annotate, compare_strata, StratumComparison};
use crate::icsr::{serialize_for_model, DEFAULT_INSTRUCTION};
use crate::lexicon::{canonical_set, Lexicon, TermKind};
use crate::metrics::auroc;
use crate::model::{
    apply_corruption, synthesize_corpus, synthesize_pairs, CorpusLabel, CorruptionContext, CorruptionKind,
    CorruptionRecord, CorruptionSpec, FixturePair, MockAdapter, MockProfile, ModelAdapter,
};

use super::review::BinaryCategory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentOptions {
    pub profile: MockProfile,
    pub seed: u64,
    pub n_cache: usize,
    pub n_in: usize,
    pub n_extraneous: usize,
    pub k: usize,
    pub n_corruptions: usize,
    pub n_strata_cases: usize,
    /// Lexicon to use instead of the built-in fixture.
    pub lexicon_path: Option<PathBuf>,
    /// Where to write `summary.json` and the CSV files.
    pub output_dir: Option<PathBuf>,
}

impl Default for AssessmentOptions {
    fn default() -> Self {
        Self {
            profile: MockProfile::Separable,
            seed: 0,
            n_cache: 200,
            n_in: 80,
            n_extraneous: 25,
            k: 5,
            n_corruptions: 1000,
            n_strata_cases: 240,
            lexicon_path: None,
            output_dir: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AssessError {
    #[error("fixture missing: {}", .0.display())]
    FixtureMissing(PathBuf),
    #[error("lexicon: {0}")]
    Lexicon(#[from] crate::lexicon::LexiconError),
    #[error("dluq: {0}")]
    Dluq(#[from] DluqError),
    #[error("{0}")]
    Stage(String),
    #[error("writing {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DluqScoreRow {
    pub doc_id: String,
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DluqAssessment {
    pub profile: MockProfile,
    pub n_cache: usize,
    pub n_in: usize,
    pub n_extraneous: usize,
    pub k: usize,
    pub auroc: f64,
    /// Leave-one-out cache threshold at a 5% false-positive rate.
    pub threshold_fpr_05: f64,
    pub flagged_in: usize,
    pub flagged_extraneous: usize,
    pub scores: Vec<DluqScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchRate {
    pub kind: CorruptionKind,
    pub attempted: usize,
    pub applied: usize,
    pub not_applicable: usize,
    pub tripped: usize,
    /// Tripped with the injector's ids in the expected unmatched set.
    pub caught: usize,
    pub catch_rate: f64,
    /// drop_ae only: cases whose source-side AE missrate equals the
    /// injector's count over the source AEs found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missrate_exact: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulCheck {
    pub n: usize,
    pub tripped: usize,
    pub nonzero_missrates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissrateHistogram {
    pub population: String,
    pub side: String,
    pub kind: String,
    /// Ten equal bins over [0, 1]; the last bin includes 1.0.
    pub bins: Vec<usize>,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub stratum: String,
    pub n: usize,
    pub mean_case_entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataResult {
    pub category: BinaryCategory,
    pub strata: Vec<StratumSummary>,
    pub comparisons: Vec<StratumComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSummary {
    pub seed: u64,
    pub dluq: DluqAssessment,
    pub catch_rates: Vec<CatchRate>,
    pub faithful: FaithfulCheck,
    pub missrate_histograms: Vec<MissrateHistogram>,
    pub strata: Vec<StrataResult>,
    pub bonferroni_trials: usize,
}

impl AssessmentSummary {
    pub fn catch_rate(&self, kind: CorruptionKind) -> Option<&CatchRate> {
        self.catch_rates.iter().find(|c| c.kind == kind)
    }
}

const STRATA_CATEGORIES: [BinaryCategory; 3] = [
    BinaryCategory::CaseClinicallyAccurate,
    BinaryCategory::WrongDrugNameOrInformation,
    BinaryCategory::IncorrectMissingAeWrongOutcome,
];
const STRATA_LEVELS: [&str; 3] = ["Yes", "Yes/No", "No"];
const BONFERRONI_TRIALS: usize = 9;
const REVIEWER_FLIP: f64 = 0.1;

fn stage<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> AssessError + '_ {
    move |e| AssessError::Stage(format!("{what}: {e}"))
}

pub fn run_assessment_suite(opts: &AssessmentOptions) -> Result<AssessmentSummary, AssessError> {
    let lexicon = match &opts.lexicon_path {
        Some(p) if !p.exists() => return Err(AssessError::FixtureMissing(p.clone())),
        Some(p) => Lexicon::load_tsv(p)?,
        None => Lexicon::builtin(),
    };
    let lexicon = Arc::new(lexicon);
    let dluq = assess_dluq(&lexicon, opts)?;
    let pairs = synthesize_pairs(&lexicon, opts.n_corruptions.max(opts.n_strata_cases), opts.seed ^ 0xc0de);
    let (catch_rates, faithful, missrate_histograms) = assess_mismatch(&lexicon, &pairs[..opts.n_corruptions], opts.seed)?;
    let strata = assess_strata(&lexicon, &pairs[..opts.n_strata_cases], opts)?;
    let summary = AssessmentSummary {
        seed: opts.seed,
        dluq,
        catch_rates,
        faithful,
        missrate_histograms,
        strata,
        bonferroni_trials: BONFERRONI_TRIALS,
    };
    if let Some(dir) = &opts.output_dir {
        write_outputs(&summary, dir)?;
    }
    Ok(summary)
}

fn assess_dluq(lexicon: &Arc<Lexicon>, opts: &AssessmentOptions) -> Result<DluqAssessment, AssessError> {
    let mock = MockAdapter::new(lexicon.clone(), opts.profile, opts.seed);
    let train: Vec<_> = synthesize_pairs(lexicon, opts.n_cache, opts.seed ^ 0xcac4e).into_iter().map(|p| p.doc).collect();
    let cache = build_cache(&train, &mock, DEFAULT_INSTRUCTION, "assessment-cache")?;
    let threshold = calibrate_threshold(&cache.leave_one_out_scores(opts.k)?, 0.05)?;
    let corpus = synthesize_corpus(lexicon, opts.n_in, opts.n_extraneous, opts.seed ^ 0x0e7a);
    let scores = corpus
        .par_iter()
        .map(|item| {
            let tokens = mock.embed_source(&serialize_for_model(&item.doc, DEFAULT_INSTRUCTION)).map_err(stage("embed"))?;
            let s = score_document(&pool_embedding(&tokens)?, &cache, opts.k, threshold)?;
            let label = match item.label {
                CorpusLabel::Icsr => "icsr".to_string(),
                CorpusLabel::Extraneous(c) => serde_json::to_value(c).unwrap().as_str().unwrap().to_string(),
            };
            Ok(DluqScoreRow {
                doc_id: item.doc.case_id.clone(),
                label,
                distance: s.distance,
            })
        })
        .collect::<Result<Vec<_>, AssessError>>()?;
    let labels: Vec<bool> = scores.iter().map(|r| r.label != "icsr").collect();
    let distances: Vec<f64> = scores.iter().map(|r| r.distance).collect();
    let flagged = |want: bool| scores.iter().zip(&labels).filter(|(r, &l)| l == want && r.distance > threshold).count();
    Ok(DluqAssessment {
        profile: opts.profile,
        n_cache: opts.n_cache,
        n_in: opts.n_in,
        n_extraneous: opts.n_extraneous,
        k: opts.k,
        auroc: auroc(&distances, &labels).map_err(stage("auroc"))?,
        threshold_fpr_05: threshold,
        flagged_in: flagged(false),
        flagged_extraneous: flagged(true),
        scores,
    })
}

struct Outcome {
    record: CorruptionRecord,
    report: MismatchReport,
    source_aes: usize,
}

fn mismatch_pair(lexicon: &Lexicon, pair: &FixturePair, target: &str) -> Result<MismatchReport, AssessError> {
    run_mismatch(SideText::new(&pair.doc.narrative, &pair.doc.language), SideText::new(target, "en"), lexicon)
        .map_err(stage("mismatch"))
}

fn caught(kind: CorruptionKind, o: &Outcome) -> bool {
    let all_in = |set: &BTreeSet<String>| o.record.canonical_ids.iter().all(|id| set.contains(id));
    match kind {
        CorruptionKind::HallucinateDrug => o.report.tripped && all_in(&o.report.unmatched_target_drug_ids),
        CorruptionKind::DropAe => o.report.tripped && all_in(&o.report.unmatched_source_ae_ids),
        _ => o.report.tripped,
    }
}

type MismatchAssessment = (Vec<CatchRate>, FaithfulCheck, Vec<MissrateHistogram>);

fn assess_mismatch(lexicon: &Lexicon, pairs: &[FixturePair], seed: u64) -> Result<MismatchAssessment, AssessError> {
    let faithful_reports = pairs
        .par_iter()
        .map(|p| mismatch_pair(lexicon, p, &p.target))
        .collect::<Result<Vec<_>, _>>()?;
    let missrates = |r: &MismatchReport| {
        [r.missrate_source_drugs, r.missrate_target_drugs, r.missrate_source_aes, r.missrate_target_aes]
    };
    let faithful = FaithfulCheck {
        n: pairs.len(),
        tripped: faithful_reports.iter().filter(|r| r.tripped).count(),
        nonzero_missrates: faithful_reports.iter().flat_map(missrates).flatten().filter(|&m| m != 0.0).count(),
    };

    let mut rates = Vec::new();
    let mut corrupted_reports = Vec::new();
    for (ki, kind) in CorruptionKind::ALL.into_iter().enumerate() {
        let outcomes = pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| {
                let spec = CorruptionSpec::new(kind, seed.wrapping_mul(1_000_003) ^ ((ki as u64) << 40) ^ i as u64);
                let ctx = CorruptionContext {
                    lexicon,
                    source_text: &pair.doc.narrative,
                    source_language: &pair.doc.language,
                    target_language: "en",
                };
                let Ok((target, record)) = apply_corruption(&pair.target, &ctx, &spec) else {
                    return Ok(None);
                };
                let report = mismatch_pair(lexicon, pair, &target)?;
                let found = lexicon
                    .find_terms(&pair.doc.narrative, &pair.doc.language, Some(TermKind::AdverseEvent))
                    .map_err(stage("lexicon"))?;
                Ok(Some(Outcome {
                    record,
                    report,
                    source_aes: canonical_set(&found, TermKind::AdverseEvent).len(),
                }))
            })
            .collect::<Result<Vec<Option<Outcome>>, AssessError>>()?;
        let applied: Vec<&Outcome> = outcomes.iter().flatten().collect();
        let n_caught = applied.iter().filter(|o| caught(kind, o)).count();
        let missrate_exact = (kind == CorruptionKind::DropAe).then(|| {
            applied
                .iter()
                .filter(|o| o.report.missrate_source_aes == Some(o.record.canonical_ids.len() as f64 / o.source_aes as f64))
                .count()
        });
        rates.push(CatchRate {
            kind,
            attempted: pairs.len(),
            applied: applied.len(),
            not_applicable: pairs.len() - applied.len(),
            tripped: applied.iter().filter(|o| o.report.tripped).count(),
            caught: n_caught,
            catch_rate: if applied.is_empty() { 0.0 } else { n_caught as f64 / applied.len() as f64 },
            missrate_exact,
        });
        corrupted_reports.extend(outcomes.into_iter().flatten().map(|o| o.report));
    }

    let mut histograms = Vec::new();
    for (population, reports) in [("faithful", &faithful_reports), ("corrupted", &corrupted_reports)] {
        for (j, (side, kind)) in [("source", "drug"), ("target", "drug"), ("source", "ae"), ("target", "ae")].into_iter().enumerate() {
            let mut h = MissrateHistogram {
                population: population.into(),
                side: side.into(),
                kind: kind.into(),
                bins: vec![0; 10],
                undefined: 0,
            };
            for r in reports.iter() {
                match missrates(r)[j] {
                    Some(m) => h.bins[((m * 10.0).floor() as usize).min(9)] += 1,
                    None => h.undefined += 1,
                }
            }
            histograms.push(h);
        }
    }
    Ok((rates, faithful, histograms))
}

/// Simulated dual review: each reviewer reports the injected truth with a
/// small chance of flipping it.
fn assess_strata(
    lexicon: &Arc<Lexicon>,
    pairs: &[FixturePair],
    opts: &AssessmentOptions,
) -> Result<Vec<StrataResult>, AssessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x57a7a);
    let mock = MockAdapter::new(lexicon.clone(), opts.profile, opts.seed).with_pairs(pairs);
    let mut plans = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let kind = match rng.random_range(0..10) {
            0..4 => None,
            4..7 => Some(CorruptionKind::HallucinateDrug),
            _ => Some(CorruptionKind::DropAe),
        };
        let input = serialize_for_model(&pair.doc, DEFAULT_INSTRUCTION);
        if let Some(kind) = kind {
            mock.arm(&input, CorruptionSpec::new(kind, opts.seed ^ (i as u64) << 8));
        }
        let votes: Vec<[bool; 2]> = (0..STRATA_CATEGORIES.len()).map(|_| [rng.random_bool(REVIEWER_FLIP), rng.random_bool(REVIEWER_FLIP)]).collect();
        plans.push((input, votes));
    }
    let rows = plans
        .par_iter()
        .map(|(input, votes)| {
            let g = mock.translate(input, &Default::default()).ok();
            let truth_kind = g.as_ref().and_then(|g| g.corruption.as_ref()).map(|c| c.kind);
            let entropy = match &g {
                Some(g) => annotate(&g.tokens, None).map_err(stage("tluq"))?.case_entropy,
                None => return Ok(None),
            };
            let levels: Vec<&str> = STRATA_CATEGORIES
                .iter()
                .zip(votes)
                .map(|(cat, flips)| {
                    let truth = match cat {
                        BinaryCategory::CaseClinicallyAccurate => truth_kind.is_none(),
                        BinaryCategory::WrongDrugNameOrInformation => truth_kind == Some(CorruptionKind::HallucinateDrug),
                        _ => truth_kind == Some(CorruptionKind::DropAe),
                    };
                    match (truth ^ flips[0], truth ^ flips[1]) {
                        (true, true) => STRATA_LEVELS[0],
                        (false, false) => STRATA_LEVELS[2],
                        _ => STRATA_LEVELS[1],
                    }
                })
                .collect();
            Ok(Some((entropy, levels)))
        })
        .collect::<Result<Vec<_>, AssessError>>()?;

    let mut out = Vec::new();
    for (ci, category) in STRATA_CATEGORIES.into_iter().enumerate() {
        let mut by: BTreeMap<String, Vec<f64>> = STRATA_LEVELS.iter().map(|l| (l.to_string(), Vec::new())).collect();
        for (entropy, levels) in rows.iter().flatten() {
            by.get_mut(levels[ci]).unwrap().push(*entropy);
        }
        let strata = STRATA_LEVELS
            .iter()
            .map(|l| {
                let v = &by[*l];
                StratumSummary {
                    stratum: l.to_string(),
                    n: v.len(),
                    mean_case_entropy: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
                }
            })
            .collect();
        by.retain(|_, v| !v.is_empty());
        let comparisons = compare_strata(&by, BONFERRONI_TRIALS).map_err(stage("strata"))?;
        out.push(StrataResult {
            category,
            strata,
            comparisons,
        });
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), AssessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| AssessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_outputs(summary: &AssessmentSummary, dir: &Path) -> Result<(), AssessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AssessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join("summary.json");
    std::fs::write(&path, super::canonical_json(summary) + "\n").map_err(io(&path))?;
    write_csv(&dir.join("dluq_scores.csv"), &summary.dluq.scores)?;
    write_csv(
        &dir.join("catch_rates.csv"),
        summary.catch_rates.iter().map(|c| {
            (c.kind.as_str(), c.attempted, c.applied, c.not_applicable, c.tripped, c.caught, c.catch_rate)
        }),
    )?;
    write_csv(
        &dir.join("missrate_histograms.csv"),
        summary.missrate_histograms.iter().flat_map(|h| {
            h.bins
                .iter()
                .enumerate()
                .map(move |(i, &n)| (&h.population, &h.side, &h.kind, i as f64 / 10.0, (i + 1) as f64 / 10.0, n))
        }),
    )?;
    write_csv(
        &dir.join("strata.csv"),
        summary.strata.iter().flat_map(|s| {
            s.comparisons.iter().map(move |c| {
                (s.category.as_str(), &c.pair.0, &c.pair.1, c.u_statistic, c.raw_p, c.adjusted_p)
            })
        }),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(profile: MockProfile) -> AssessmentOptions {
        AssessmentOptions {
            profile,
            n_corruptions: 100,
            n_strata_cases: 60,
            ..AssessmentOptions::default()
        }
    }

    #[test]
    fn separable_suite() {
        let dir = tempfile::tempdir().unwrap();
        let opts = AssessmentOptions {
            output_dir: Some(dir.path().to_path_buf()),
            ..small(MockProfile::Separable)
        };
        let s = run_assessment_suite(&opts).unwrap();
        assert_eq!(s.dluq.auroc, 1.0);
        assert_eq!(s.dluq.scores.len(), 105);
        let h = s.catch_rate(CorruptionKind::HallucinateDrug).unwrap();
        assert_eq!((h.applied, h.caught), (100, 100));
        assert_eq!(s.catch_rate(CorruptionKind::MisspellDrugOnly).unwrap().tripped, 0);
        assert_eq!(s.catch_rate(CorruptionKind::MisspellDrugWithDuplicate).unwrap().tripped, 0);
        let d = s.catch_rate(CorruptionKind::DropAe).unwrap();
        assert_eq!(d.missrate_exact, Some(d.applied));
        assert_eq!(s.faithful.tripped, 0);
        assert_eq!(s.faithful.nonzero_missrates, 0);
        assert_eq!(s.strata.len(), 3);
        for f in ["summary.json", "dluq_scores.csv", "catch_rates.csv", "missrate_histograms.csv", "strata.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let again = run_assessment_suite(&small(MockProfile::Separable)).unwrap();
        assert_eq!(super::super::canonical_json(&again), super::super::canonical_json(&s));
    }

    #[test]
    fn noisy_profile_still_ranks_well() {
        let s = run_assessment_suite(&small(MockProfile::Noisy)).unwrap();
        assert!(s.dluq.auroc >= 0.90 && s.dluq.auroc < 1.0, "auroc {}", s.dluq.auroc);
    }

    #[test]
    fn missing_lexicon_is_reported() {
        let opts = AssessmentOptions {
            lexicon_path: Some("/nonexistent/lexicon.tsv".into()),
            ..AssessmentOptions::default()
        };
        assert!(matches!(run_assessment_suite(&opts), Err(AssessError::FixtureMissing(p)) if p.ends_with("lexicon.tsv")));
    }
}
