//! Template-generated synthetic corpora.
//!
//! Case reports are Japanese narratives over the fixture lexicon, each paired
//! with a faithful English rendering. Extraneous documents cover four kinds
//! of text that should never reach the translator: encyclopedic prose, fake
//! reports about something other than a patient, off-domain Japanese, and
//! text in other languages.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenize::source_tokens;
use crate::icsr::{
    Age, AgeUnit, DateEntry, IcsrDocument, PatientInfo, ReporterInfo, Seriousness, Sex, DEFAULT_INSTRUCTION,
};
use crate::lexicon::{Lexicon, TermEntry, TermKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraneousCategory {
    Encyclopedic,
    FakeCaseReport,
    OffDomain,
    OtherLanguage,
}

impl ExtraneousCategory {
    pub const ALL: [Self; 4] = [Self::Encyclopedic, Self::FakeCaseReport, Self::OffDomain, Self::OtherLanguage];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", content = "category", rename_all = "snake_case")]
pub enum CorpusLabel {
    Icsr,
    Extraneous(ExtraneousCategory),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixturePair {
    pub doc: IcsrDocument,
    /// Faithful English rendering of the narrative.
    pub target: String,
    pub drug_ids: Vec<String>,
    pub ae_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub doc: IcsrDocument,
    pub label: CorpusLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

const NARRATIVES: [(&str, &str); 3] = [
    (
        "{age}歳{sex_ja}。{d1_ja}に{drugs_ja}の投与を開始した。{d2_ja}に{aes_ja}が発現した。{outcome_ja}",
        "A {age}-year-old {sex_en} patient. Administration of {drugs_en} was started on {d1_en}. On {d2_en}, {aes_en} occurred. {outcome_en}",
    ),
    (
        "患者は{age}歳の{sex_ja}である。{drugs_ja}を服用中、{d2_ja}に{aes_ja}を認めた。{d3_ja}に{drug1_ja}の投与を中止した。{outcome_ja}",
        "The patient is a {age}-year-old {sex_en}. While taking {drugs_en}, {aes_en} was observed on {d2_en}. {drug1_en} was discontinued on {d3_en}. {outcome_en}",
    ),
    (
        "{d1_ja}、{drugs_ja}投与後に{aes_ja}が出現し、入院した。{outcome_ja}",
        "On {d1_en}, {aes_en} appeared after administration of {drugs_en}, and the patient was hospitalized. {outcome_en}",
    ),
];

const OUTCOMES: [(&str, &str); 3] = [
    ("転帰は回復。", "The outcome was recovered."),
    ("転帰は軽快。", "The outcome was improving."),
    ("転帰は未回復。", "The outcome was not recovered."),
];

const FIELDS: [(&str, &str); 3] = [("報告種別", "自発報告"), ("報告者", "医師"), ("国", "日本")];

const DATE_GLYPHS: &str = "年月日歳男性女性と、。";

const ENCYCLOPEDIC: [&str; 3] = [
    "{place}は日本の{region}に位置する都市であり、人口は約{n}万人である。{year}年に市制を施行した。",
    "{place}山は標高{n}メートルの山で、{region}地方の最高峰として知られる。山頂付近には古い神社がある。",
    "{place}城は{year}年に築かれた平山城である。天守は戦後に復元され、現在は博物館として公開されている。",
];
const FAKE_REPORTS: [&str; 3] = [
    "{year}年{m}月{d}日、{machine}の点検中に{fault}が確認された。担当者は部品を交換し、運転を再開した。",
    "報告者によると、{machine}の使用中に{fault}が発生した。{year}年{m}月{d}日に回収し、工場で調査を行った。",
    "{machine}について{fault}の苦情が寄せられた。製造番号は{n}で、同型機の点検を指示した。",
];
const OFF_DOMAIN: [&str; 3] = [
    "{team}は{n}対{m}で勝利し、首位を守った。次の試合は{m}月{d}日に行われる。",
    "鍋に水を入れて沸騰させ、{food}を{n}分間煮込む。塩で味を調えて器に盛り付ける。",
    "今週末は{place}で花火大会が開かれる。会場周辺では交通規制が実施される予定だ。",
];
const OTHER_LANGUAGE: [(&str, &str); 4] = [
    ("de", "Der Zug nach {city} fährt um {n} Uhr ab. Bitte beachten Sie die Änderungen im Fahrplan."),
    ("ko", "오늘 서울의 날씨는 맑고 기온은 {n}도입니다. 주말에는 비가 올 예정입니다."),
    ("es", "El museo de {city} abre todos los días a las {n} de la mañana y cierra los lunes."),
    ("fr", "Le marché de {city} ouvre le samedi à {n} heures. On y trouve des fromages et du pain."),
];
const PLACES: [&str; 6] = ["札幌", "仙台", "金沢", "松本", "高松", "熊本"];
const REGIONS: [&str; 5] = ["北海道", "東北", "北陸", "四国", "九州"];
const MACHINES: [&str; 4] = ["洗濯機", "エレベーター", "自動車", "冷蔵庫"];
const FAULTS: [&str; 4] = ["異音", "漏水", "過熱", "振動"];
const TEAMS: [&str; 3] = ["東京ベアーズ", "大阪ドルフィンズ", "福岡ホークス"];
const FOODS: [&str; 3] = ["大根", "豚肉", "昆布"];
const CITIES: [&str; 4] = ["Berlin", "Madrid", "Lyon", "Hamburg"];

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut s = template.to_string();
    for (k, v) in vars {
        s = s.replace(&format!("{{{k}}}"), v);
    }
    s
}

fn surface<'a>(e: &'a TermEntry, lang: &'a str) -> Option<&'a str> {
    e.surfaces_in(lang).next()
}

fn bilingual(lexicon: &Lexicon, kind: TermKind) -> Vec<&TermEntry> {
    lexicon
        .entries_of_kind(kind)
        .filter(|e| surface(e, "ja").is_some() && surface(e, "en").is_some())
        .collect()
}

fn join_en(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

struct SynthDate {
    y: i32,
    m: u32,
    d: u32,
}

impl SynthDate {
    fn ja(&self) -> String {
        format!("{}年{}月{}日", self.y, self.m, self.d)
    }

    fn iso(&self) -> String {
        format!("{:04}-{:02}-{:02}", self.y, self.m, self.d)
    }
}

fn dates(rng: &mut ChaCha8Rng) -> [SynthDate; 3] {
    let y = rng.random_range(2019..=2024);
    let m = rng.random_range(1..=10);
    let d = rng.random_range(1..=28);
    let m2 = m + rng.random_range(0..=1);
    let d2 = rng.random_range(1..=28);
    [
        SynthDate { y, m, d },
        SynthDate { y, m: m2, d: d2 },
        SynthDate { y, m: m2 + 1, d: rng.random_range(1..=28) },
    ]
}

/// `n` faithful case reports with their English renderings.
pub fn synthesize_pairs(lexicon: &Lexicon, n: usize, seed: u64) -> Vec<FixturePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drugs = bilingual(lexicon, TermKind::Drug);
    let aes = bilingual(lexicon, TermKind::AdverseEvent);
    (0..n).map(|i| one_pair(&mut rng, &drugs, &aes, format!("SYN-{seed}-{i:05}"))).collect()
}

fn one_pair(rng: &mut ChaCha8Rng, drugs: &[&TermEntry], aes: &[&TermEntry], case_id: String) -> FixturePair {
    let n_drugs = rng.random_range(1..=2).min(drugs.len());
    let n_aes = rng.random_range(1..=3).min(aes.len());
    // drugs sharing a generic/brand link would make the pair ambiguous
    let mut chosen_drugs: Vec<&TermEntry> = Vec::new();
    let mut pool: Vec<&TermEntry> = drugs.to_vec();
    pool.shuffle(rng);
    for d in pool {
        if chosen_drugs.len() == n_drugs {
            break;
        }
        if chosen_drugs.iter().all(|c| !c.links.contains(&d.canonical_id) && !d.links.contains(&c.canonical_id)) {
            chosen_drugs.push(d);
        }
    }
    let chosen_aes: Vec<&TermEntry> = aes.choose_multiple(rng, n_aes).copied().collect();

    let drugs_ja: Vec<&str> = chosen_drugs.iter().filter_map(|e| surface(e, "ja")).collect();
    let drugs_en: Vec<&str> = chosen_drugs.iter().filter_map(|e| surface(e, "en")).collect();
    let aes_ja: Vec<&str> = chosen_aes.iter().filter_map(|e| surface(e, "ja")).collect();
    let aes_en: Vec<&str> = chosen_aes.iter().filter_map(|e| surface(e, "en")).collect();
    let age: u32 = rng.random_range(18..=89);
    let sex = if rng.random_bool(0.5) { Sex::Male } else { Sex::Female };
    let (sex_ja, sex_en) = match sex {
        Sex::Male => ("男性", "male"),
        _ => ("女性", "female"),
    };
    let [d1, d2, d3] = dates(rng);
    let variant = rng.random_range(0..NARRATIVES.len());
    let (outcome_ja, outcome_en) = *OUTCOMES.choose(rng).unwrap();
    let vars = [
        ("age", age.to_string()),
        ("sex_ja", sex_ja.to_string()),
        ("sex_en", sex_en.to_string()),
        ("d1_ja", d1.ja()),
        ("d2_ja", d2.ja()),
        ("d3_ja", d3.ja()),
        ("d1_en", d1.iso()),
        ("d2_en", d2.iso()),
        ("d3_en", d3.iso()),
        ("drugs_ja", drugs_ja.join("と")),
        ("drugs_en", join_en(&drugs_en)),
        ("drug1_ja", drugs_ja[0].to_string()),
        ("drug1_en", capitalize(drugs_en[0])),
        ("aes_ja", aes_ja.join("、")),
        ("aes_en", join_en(&aes_en)),
        ("outcome_ja", outcome_ja.to_string()),
        ("outcome_en", outcome_en.to_string()),
    ];
    let (ja, en) = NARRATIVES[variant];

    let mut doc = IcsrDocument::new(case_id, "ja");
    doc.narrative = fill(ja, &vars);
    doc.structured_fields = FIELDS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    doc.structured_fields.push(("年齢".into(), format!("{age}歳")));
    doc.structured_fields.push(("性別".into(), sex_ja.into()));
    doc.reporter = Some(ReporterInfo {
        name: None,
        organization: Some(format!("Clinic {}", rng.random_range(1..500))),
        country: Some("JP".into()),
    });
    doc.patient = Some(PatientInfo {
        age: Some(Age {
            value: f64::from(age),
            unit: AgeUnit::Years,
        }),
        sex: Some(sex),
    });
    doc.reactions = aes_ja.iter().map(|s| s.to_string()).collect();
    doc.suspect_products = drugs_ja.iter().map(|s| s.to_string()).collect();
    if variant == 2 {
        doc.seriousness = BTreeSet::from([Seriousness::Hospitalization]);
    }
    doc.dates = vec![
        DateEntry {
            role: "start".into(),
            value: d1.iso(),
        },
        DateEntry {
            role: "onset".into(),
            value: d2.iso(),
        },
    ];
    if variant == 1 {
        doc.dates.push(DateEntry {
            role: "stop".into(),
            value: d3.iso(),
        });
    }
    FixturePair {
        doc,
        target: fill(en, &vars),
        drug_ids: chosen_drugs.iter().map(|e| e.canonical_id.clone()).collect(),
        ae_ids: chosen_aes.iter().map(|e| e.canonical_id.clone()).collect(),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn extraneous(rng: &mut ChaCha8Rng, category: ExtraneousCategory, case_id: String) -> IcsrDocument {
    let n = rng.random_range(2..=90).to_string();
    let vars = [
        ("place", PLACES.choose(rng).unwrap().to_string()),
        ("region", REGIONS.choose(rng).unwrap().to_string()),
        ("machine", MACHINES.choose(rng).unwrap().to_string()),
        ("fault", FAULTS.choose(rng).unwrap().to_string()),
        ("team", TEAMS.choose(rng).unwrap().to_string()),
        ("food", FOODS.choose(rng).unwrap().to_string()),
        ("city", CITIES.choose(rng).unwrap().to_string()),
        ("year", rng.random_range(1600..=2024).to_string()),
        ("m", rng.random_range(1..=12).to_string()),
        ("d", rng.random_range(1..=28).to_string()),
        ("n", n),
    ];
    let (language, template) = match category {
        ExtraneousCategory::Encyclopedic => ("ja", *ENCYCLOPEDIC.choose(rng).unwrap()),
        ExtraneousCategory::FakeCaseReport => ("ja", *FAKE_REPORTS.choose(rng).unwrap()),
        ExtraneousCategory::OffDomain => ("ja", *OFF_DOMAIN.choose(rng).unwrap()),
        ExtraneousCategory::OtherLanguage => *OTHER_LANGUAGE.choose(rng).unwrap(),
    };
    let mut doc = IcsrDocument::new(case_id, language);
    doc.narrative = fill(template, &vars);
    doc
}

/// `n_icsr` case reports followed by `n_extraneous` extraneous documents whose
/// categories cycle through [`ExtraneousCategory::ALL`].
pub fn synthesize_corpus(lexicon: &Lexicon, n_icsr: usize, n_extraneous: usize, seed: u64) -> Vec<CorpusItem> {
    let mut out: Vec<CorpusItem> = synthesize_pairs(lexicon, n_icsr, seed)
        .into_iter()
        .map(|p| CorpusItem {
            doc: p.doc,
            label: CorpusLabel::Icsr,
            target: Some(p.target),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
    for i in 0..n_extraneous {
        let category = ExtraneousCategory::ALL[i % ExtraneousCategory::ALL.len()];
        out.push(CorpusItem {
            doc: extraneous(&mut rng, category, format!("EXT-{seed}-{i:04}")),
            label: CorpusLabel::Extraneous(category),
            target: None,
        });
    }
    out
}

/// Tokens that make up case-report inputs: template text, field names,
/// lexicon surface forms and the default instruction. Digit runs are always
/// in-vocabulary and are not listed.
pub fn fixture_vocabulary(lexicon: &Lexicon) -> HashSet<String> {
    let mut texts: Vec<String> = NARRATIVES.iter().map(|(ja, _)| ja.to_string()).collect();
    texts.extend(OUTCOMES.iter().map(|(ja, _)| ja.to_string()));
    texts.extend(FIELDS.iter().map(|(k, v)| format!("{k}: {v}; ")));
    texts.push("年齢: 性別: ".into());
    texts.push(DATE_GLYPHS.into());
    texts.push(DEFAULT_INSTRUCTION.into());
    for e in lexicon.entries() {
        texts.extend(e.surface_forms.iter().map(|s| s.text.clone()));
    }
    let mut vocab = HashSet::new();
    for t in texts {
        let t = strip_placeholders(&t);
        for (a, b) in source_tokens(&t) {
            vocab.insert(t[a..b].to_lowercase());
        }
    }
    vocab
}

fn strip_placeholders(t: &str) -> String {
    let mut out = String::with_capacity(t.len());
    let mut depth = 0;
    for c in t.chars() {
        match c {
            '{' => {
                depth += 1;
                out.push(' ');
            }
            '}' => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}
