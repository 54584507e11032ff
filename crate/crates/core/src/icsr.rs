//! Individual case safety report data model.
//!
//! An [`IcsrDocument`] carries the structured fields and the free-text
//! narrative of one case. It is ingested from JSON or from a flat XML subset
//! (`xml_lite`), checked for the four elements a valid report needs, and
//! rendered into the instruction-prefixed text the translation model consumes.

use std::collections::BTreeSet;
use std::fmt;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Default task instruction for Japanese to English narrative translation.
pub const DEFAULT_INSTRUCTION: &str =
    "Translate the following Japanese case report into English narrative text";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IcsrError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("missing required field: {0}")]
    MissingRequiredField(&'static str),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seriousness {
    Death,
    LifeThreatening,
    Hospitalization,
    Disability,
    CongenitalAnomaly,
}

impl Seriousness {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "death" => Self::Death,
            "life_threatening" => Self::LifeThreatening,
            "hospitalization" => Self::Hospitalization,
            "disability" => Self::Disability,
            "congenital_anomaly" => Self::CongenitalAnomaly,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReporterInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub organization: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
}

impl ReporterInfo {
    /// A reporter counts as identifiable when any of its fields is present.
    pub fn is_identifiable(&self) -> bool {
        [&self.name, &self.organization, &self.country]
            .iter()
            .any(|f| f.as_deref().is_some_and(|s| !s.trim().is_empty()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeUnit {
    Years,
    Months,
    Days,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Age {
    pub value: f64,
    pub unit: AgeUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatientInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<Age>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
}

impl PatientInfo {
    /// A patient counts as identifiable when age or sex is present.
    pub fn is_identifiable(&self) -> bool {
        self.age.is_some() || self.sex.is_some()
    }
}

/// Precision of a stored date. Partial dates are kept rather than rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatePrecision {
    Day,
    Month,
    Year,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateEntry {
    pub role: String,
    pub value: String,
}

impl DateEntry {
    pub fn precision(&self) -> DatePrecision {
        let v = self.value.trim();
        if chrono::NaiveDate::parse_from_str(v, "%Y-%m-%d").is_ok() {
            return DatePrecision::Day;
        }
        let parts: Vec<&str> = v.split('-').collect();
        let digits = |s: &str, n: usize| s.len() == n && s.bytes().all(|b| b.is_ascii_digit());
        match parts.as_slice() {
            [y, m] if digits(y, 4) && digits(m, 2) => {
                let month: u32 = m.parse().unwrap_or(0);
                if (1..=12).contains(&month) {
                    DatePrecision::Month
                } else {
                    DatePrecision::Invalid
                }
            }
            [y] if digits(y, 4) => DatePrecision::Year,
            _ => DatePrecision::Invalid,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.precision() != DatePrecision::Invalid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcsrDocument {
    pub case_id: String,
    pub language: String,
    #[serde(default)]
    pub narrative: String,
    #[serde(default)]
    pub structured_fields: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reporter: Option<ReporterInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient: Option<PatientInfo>,
    #[serde(default)]
    pub reactions: Vec<String>,
    #[serde(default)]
    pub suspect_products: Vec<String>,
    #[serde(default)]
    pub seriousness: BTreeSet<Seriousness>,
    #[serde(default)]
    pub dates: Vec<DateEntry>,
}

impl IcsrDocument {
    pub fn new(case_id: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            language: language.into(),
            narrative: String::new(),
            structured_fields: Vec::new(),
            reporter: None,
            patient: None,
            reactions: Vec::new(),
            suspect_products: Vec::new(),
            seriousness: BTreeSet::new(),
            dates: Vec::new(),
        }
    }

    /// Checks the construction invariants of the data model.
    pub fn validate_shape(&self) -> Result<(), IcsrError> {
        if self.case_id.trim().is_empty() {
            return Err(IcsrError::MissingRequiredField("case_id"));
        }
        if self.language.trim().is_empty() {
            return Err(IcsrError::MissingRequiredField("language"));
        }
        if self.narrative.is_empty() && self.structured_fields.is_empty() {
            return Err(IcsrError::InvalidDocument(
                "narrative may be empty only when structured fields are present".into(),
            ));
        }
        if let Some(reporter) = &self.reporter {
            if !reporter.is_identifiable() {
                return Err(IcsrError::InvalidDocument(
                    "reporter record present but empty".into(),
                ));
            }
        }
        if let Some(age) = self.patient.as_ref().and_then(|p| p.age) {
            if !age.value.is_finite() || age.value < 0.0 {
                return Err(IcsrError::InvalidDocument(format!(
                    "patient age {} is not a finite non-negative number",
                    age.value
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("document serializes");
        value
            .as_object_mut()
            .expect("document is an object")
            .insert("schema_version".into(), SCHEMA_VERSION.into());
        serde_json::to_string(&value).expect("value serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidityElement {
    Reporter,
    Patient,
    Reaction,
    SuspectProduct,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub valid: bool,
    pub missing_elements: BTreeSet<ValidityElement>,
}

/// Checks the four elements a report needs to be accepted as a valid case.
pub fn check_validity(doc: &IcsrDocument) -> ValidityVerdict {
    let mut missing = BTreeSet::new();
    if !doc.reporter.as_ref().is_some_and(ReporterInfo::is_identifiable) {
        missing.insert(ValidityElement::Reporter);
    }
    if !doc.patient.as_ref().is_some_and(PatientInfo::is_identifiable) {
        missing.insert(ValidityElement::Patient);
    }
    if !doc.reactions.iter().any(|r| !r.trim().is_empty()) {
        missing.insert(ValidityElement::Reaction);
    }
    if !doc.suspect_products.iter().any(|p| !p.trim().is_empty()) {
        missing.insert(ValidityElement::SuspectProduct);
    }
    ValidityVerdict {
        valid: missing.is_empty(),
        missing_elements: missing,
    }
}

fn is_delim(c: char) -> bool {
    c == ';' || c == ':'
}

// Doubles every character of a delimiter run (any mix of ';' and ':') that
// ends at a space or at the end of the item, so "; " and ": " inside names
// and values stay distinguishable from the separators.
fn escape_delims(s: &str, out: &mut String) {
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if is_delim(chars[i]) {
            let start = i;
            while i < chars.len() && is_delim(chars[i]) {
                i += 1;
            }
            let at_boundary = i == chars.len() || chars[i] == ' ';
            for &c in &chars[start..i] {
                out.push(c);
                if at_boundary {
                    out.push(c);
                }
            }
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
}

/// Renders the model input: instruction, one line of `name: value` pairs
/// joined by `"; "`, then the narrative. Fields with empty values are omitted.
pub fn serialize_for_model(doc: &IcsrDocument, instruction: &str) -> String {
    let mut out = String::with_capacity(instruction.len() + doc.narrative.len() + 64);
    out.push_str(instruction);
    out.push('\n');
    let mut first = true;
    for (name, value) in &doc.structured_fields {
        if value.trim().is_empty() {
            continue;
        }
        if !first {
            out.push_str("; ");
        }
        first = false;
        escape_delims(name, &mut out);
        out.push_str(": ");
        escape_delims(value, &mut out);
    }
    out.push('\n');
    out.push_str(&doc.narrative);
    out
}

/// `(instruction, fields, narrative)`.
pub type ModelInputParts = (String, Vec<(String, String)>, String);

/// Inverse of [`serialize_for_model`] for inputs without newlines in the
/// instruction or fields.
pub fn parse_model_input(text: &str) -> Option<ModelInputParts> {
    let (instruction, rest) = text.split_once('\n')?;
    let (field_line, narrative) = rest.split_once('\n')?;
    let mut fields = Vec::new();
    if !field_line.is_empty() {
        // items alternate name, value, name, value; separators alternate ':' and ';'
        let chars: Vec<char> = field_line.chars().collect();
        let mut items = vec![String::new()];
        let mut seps = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if !is_delim(chars[i]) {
                items.last_mut()?.push(chars[i]);
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && is_delim(chars[i]) {
                i += 1;
            }
            let run = &chars[start..i];
            let cur = items.last_mut()?;
            if i == chars.len() || chars[i] == ' ' {
                let (pairs, sep) = if run.len() % 2 == 1 {
                    (&run[..run.len() - 1], run.last().copied())
                } else {
                    (run, None)
                };
                cur.extend(pairs.iter().step_by(2));
                if let Some(sep) = sep {
                    if i == chars.len() {
                        return None;
                    }
                    i += 1;
                    seps.push(sep);
                    items.push(String::new());
                }
            } else {
                cur.extend(run.iter());
            }
        }
        if items.len() % 2 != 0 {
            return None;
        }
        for (k, sep) in seps.iter().enumerate() {
            if *sep != if k % 2 == 0 { ':' } else { ';' } {
                return None;
            }
        }
        let mut it = items.into_iter();
        while let (Some(name), Some(value)) = (it.next(), it.next()) {
            fields.push((name, value));
        }
    }
    Some((instruction.to_string(), fields, narrative.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    Json,
    XmlLite,
}

impl std::str::FromStr for DocumentFormat {
    type Err = IcsrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "xml_lite" | "xml" => Ok(Self::XmlLite),
            other => Err(IcsrError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DocumentFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Json => "json",
            Self::XmlLite => "xml_lite",
        })
    }
}

pub fn parse_document(bytes: &[u8], format: DocumentFormat) -> Result<IcsrDocument, IcsrError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| IcsrError::MalformedDocument(format!("invalid UTF-8: {e}")))?;
    let doc = match format {
        DocumentFormat::Json => parse_json(text)?,
        DocumentFormat::XmlLite => parse_xml_lite(text)?,
    };
    doc.validate_shape()?;
    Ok(doc)
}

fn parse_json(text: &str) -> Result<IcsrDocument, IcsrError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IcsrError::MalformedDocument(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| IcsrError::MalformedDocument("top level must be an object".into()))?;
    for key in ["case_id", "language"] {
        match obj.get(key) {
            None | Some(serde_json::Value::Null) => {
                return Err(IcsrError::MissingRequiredField(if key == "case_id" {
                    "case_id"
                } else {
                    "language"
                }))
            }
            _ => {}
        }
    }
    if let Some(v) = obj.get("schema_version") {
        if v.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(IcsrError::UnsupportedFormat(format!("schema_version {v}")));
        }
    }
    serde_json::from_value(value).map_err(|e| IcsrError::MalformedDocument(e.to_string()))
}

fn parse_xml_lite(text: &str) -> Result<IcsrDocument, IcsrError> {
    let mut reader = Reader::from_str(text);
    let mut doc = IcsrDocument::new("", "");
    let mut seen_root = false;
    let mut reporter = ReporterInfo::default();
    let mut patient = PatientInfo::default();
    // (element name, attributes) of the currently open child element
    let mut open: Option<(String, Vec<(String, String)>)> = None;
    let mut buf = String::new();

    let malformed = |e: &dyn fmt::Display| IcsrError::MalformedDocument(e.to_string());

    loop {
        match reader.read_event().map_err(|e| malformed(&e))? {
            Event::Start(start) => {
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                let mut attrs = Vec::new();
                for attr in start.attributes() {
                    let attr = attr.map_err(|e| malformed(&e))?;
                    let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
                    let val = attr.unescape_value().map_err(|e| malformed(&e))?.into_owned();
                    attrs.push((key, val));
                }
                if !seen_root {
                    if name != "icsr" {
                        return Err(IcsrError::MalformedDocument(format!(
                            "root element must be <icsr>, found <{name}>"
                        )));
                    }
                    if let Some((_, v)) = attrs.iter().find(|(k, _)| k == "schema_version") {
                        if v != &SCHEMA_VERSION.to_string() {
                            return Err(IcsrError::UnsupportedFormat(format!("schema_version {v}")));
                        }
                    }
                    seen_root = true;
                } else if open.is_some() {
                    return Err(IcsrError::MalformedDocument(format!(
                        "nested element <{name}> is not part of xml_lite"
                    )));
                } else {
                    open = Some((name, attrs));
                    buf.clear();
                }
            }
            Event::Empty(_) => {}
            Event::Text(t) => {
                if open.is_some() {
                    buf.push_str(&t.unescape().map_err(|e| malformed(&e))?);
                }
            }
            Event::CData(t) => {
                if open.is_some() {
                    buf.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(end) => {
                let name = String::from_utf8_lossy(end.name().as_ref()).into_owned();
                if name == "icsr" && open.is_none() {
                    break;
                }
                let (el, attrs) = open.take().ok_or_else(|| {
                    IcsrError::MalformedDocument(format!("unexpected </{name}>"))
                })?;
                let attr = |k: &str| attrs.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone());
                let value = std::mem::take(&mut buf);
                match el.as_str() {
                    "case_id" => doc.case_id = value.trim().to_string(),
                    "language" => doc.language = value.trim().to_string(),
                    "narrative" => doc.narrative = value,
                    "field" => {
                        let fname = attr("name").ok_or_else(|| {
                            IcsrError::MalformedDocument("<field> requires a name attribute".into())
                        })?;
                        doc.structured_fields.push((fname, value));
                    }
                    "reporter_name" => reporter.name = Some(value),
                    "reporter_organization" => reporter.organization = Some(value),
                    "reporter_country" => reporter.country = Some(value),
                    "patient_age" => {
                        let unit = match attr("unit").as_deref().unwrap_or("years") {
                            "years" => AgeUnit::Years,
                            "months" => AgeUnit::Months,
                            "days" => AgeUnit::Days,
                            other => {
                                return Err(IcsrError::MalformedDocument(format!(
                                    "unknown age unit {other}"
                                )))
                            }
                        };
                        let v: f64 = value.trim().parse().map_err(|_| {
                            IcsrError::MalformedDocument(format!("bad patient_age {value:?}"))
                        })?;
                        patient.age = Some(Age { value: v, unit });
                    }
                    "patient_sex" => {
                        patient.sex = Some(match value.trim() {
                            "male" => Sex::Male,
                            "female" => Sex::Female,
                            "unknown" => Sex::Unknown,
                            other => {
                                return Err(IcsrError::MalformedDocument(format!(
                                    "unknown sex {other}"
                                )))
                            }
                        })
                    }
                    "reaction" => doc.reactions.push(value),
                    "suspect_product" => doc.suspect_products.push(value),
                    "seriousness" => {
                        let s = Seriousness::parse(value.trim()).ok_or_else(|| {
                            IcsrError::MalformedDocument(format!("unknown seriousness {value:?}"))
                        })?;
                        doc.seriousness.insert(s);
                    }
                    "date" => doc.dates.push(DateEntry {
                        role: attr("role").unwrap_or_default(),
                        value: value.trim().to_string(),
                    }),
                    other => {
                        return Err(IcsrError::MalformedDocument(format!(
                            "unknown element <{other}>"
                        )))
                    }
                }
            }
            Event::Eof => {
                return Err(IcsrError::MalformedDocument("unexpected end of document".into()))
            }
            _ => {}
        }
    }
    if !seen_root {
        return Err(IcsrError::MalformedDocument("missing <icsr> root".into()));
    }
    if doc.case_id.is_empty() {
        return Err(IcsrError::MissingRequiredField("case_id"));
    }
    if doc.language.is_empty() {
        return Err(IcsrError::MissingRequiredField("language"));
    }
    if reporter != ReporterInfo::default() {
        doc.reporter = Some(reporter);
    }
    if patient != PatientInfo::default() {
        doc.patient = Some(patient);
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn complete_doc() -> IcsrDocument {
        let mut doc = IcsrDocument::new("C-1", "ja");
        doc.narrative = "N".into();
        doc.reporter = Some(ReporterInfo {
            country: Some("JP".into()),
            ..Default::default()
        });
        doc.patient = Some(PatientInfo {
            age: Some(Age {
                value: 54.0,
                unit: AgeUnit::Years,
            }),
            sex: Some(Sex::Female),
        });
        doc.reactions.push("頭痛".into());
        doc.suspect_products.push("ワルファリン".into());
        doc
    }

    #[test]
    fn complete_document_is_valid() {
        let v = check_validity(&complete_doc());
        assert!(v.valid);
        assert!(v.missing_elements.is_empty());
    }

    #[test]
    fn missing_patient_is_reported() {
        let mut doc = complete_doc();
        doc.patient = None;
        let v = check_validity(&doc);
        assert!(!v.valid);
        assert_eq!(v.missing_elements, BTreeSet::from([ValidityElement::Patient]));
    }

    #[test]
    fn empty_reactions_and_products() {
        let mut doc = complete_doc();
        doc.reactions.clear();
        doc.suspect_products = vec!["  ".into()];
        let v = check_validity(&doc);
        assert_eq!(
            v.missing_elements,
            BTreeSet::from([ValidityElement::Reaction, ValidityElement::SuspectProduct])
        );
    }

    #[test]
    fn patient_with_neither_age_nor_sex_is_not_identifiable() {
        let mut doc = complete_doc();
        doc.patient = Some(PatientInfo::default());
        assert!(check_validity(&doc).missing_elements.contains(&ValidityElement::Patient));
    }

    #[test]
    fn serialize_single_pair() {
        let mut doc = IcsrDocument::new("c", "ja");
        doc.structured_fields = vec![("country".into(), "JP".into())];
        doc.narrative = "N".into();
        assert_eq!(serialize_for_model(&doc, "I"), "I\ncountry: JP\nN");
    }

    #[test]
    fn serialize_two_pairs() {
        let mut doc = IcsrDocument::new("c", "ja");
        doc.structured_fields = vec![("a".into(), "1".into()), ("b".into(), "2".into())];
        assert!(serialize_for_model(&doc, "I").contains("a: 1; b: 2"));
    }

    #[test]
    fn serialize_no_fields() {
        let mut doc = IcsrDocument::new("c", "ja");
        doc.narrative = "N".into();
        assert_eq!(serialize_for_model(&doc, "I"), "I\n\nN");
    }

    #[test]
    fn serialize_omits_empty_values() {
        let mut doc = IcsrDocument::new("c", "ja");
        doc.structured_fields = vec![("a".into(), "".into()), ("b".into(), "2".into())];
        assert_eq!(serialize_for_model(&doc, "I"), "I\nb: 2\n");
    }

    #[test]
    fn delimiters_inside_values_are_doubled() {
        let mut doc = IcsrDocument::new("c", "ja");
        doc.structured_fields = vec![("note".into(), "a; b: c".into()), ("t".into(), "10:30".into())];
        let s = serialize_for_model(&doc, "I");
        assert_eq!(s, "I\nnote: a;; b:: c; t: 10:30\n");
        let (_, fields, _) = parse_model_input(&s).unwrap();
        assert_eq!(fields, doc.structured_fields);
    }

    #[test]
    fn trailing_delimiter_in_value_round_trips() {
        let mut doc = IcsrDocument::new("c", "ja");
        doc.structured_fields = vec![("x:".into(), "y;".into()), ("z".into(), "w".into())];
        let s = serialize_for_model(&doc, "I");
        let (_, fields, _) = parse_model_input(&s).unwrap();
        assert_eq!(fields, doc.structured_fields);
    }

    #[test]
    fn json_round_trip() {
        let mut doc = complete_doc();
        doc.structured_fields = vec![("country".into(), "JP".into())];
        doc.seriousness.insert(Seriousness::Hospitalization);
        doc.dates.push(DateEntry {
            role: "onset".into(),
            value: "2021-03".into(),
        });
        let parsed = parse_document(doc.to_json().as_bytes(), DocumentFormat::Json).unwrap();
        assert_eq!(parsed, doc);
        assert!(doc.to_json().contains("\"schema_version\":1"));
    }

    #[test]
    fn truncated_json_is_malformed() {
        let json = complete_doc().to_json();
        let err = parse_document(&json.as_bytes()[..json.len() / 2], DocumentFormat::Json);
        assert!(matches!(err, Err(IcsrError::MalformedDocument(_))));
    }

    #[test]
    fn json_missing_language() {
        let err = parse_document(br#"{"case_id":"x","narrative":"n"}"#, DocumentFormat::Json);
        assert_eq!(err, Err(IcsrError::MissingRequiredField("language")));
    }

    #[test]
    fn unknown_format_string() {
        assert!(matches!(
            "pdf".parse::<DocumentFormat>(),
            Err(IcsrError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn xml_lite_parses_flat_elements() {
        let xml = r#"<icsr schema_version="1">
            <case_id>C-9</case_id>
            <language>ja</language>
            <narrative>頭痛 &amp; 悪心</narrative>
            <field name="country">JP</field>
            <field name="seriousness">serious</field>
            <reporter_organization>Clinic</reporter_organization>
            <patient_age unit="months">7</patient_age>
            <patient_sex>male</patient_sex>
            <reaction>頭痛</reaction>
            <suspect_product>ワルファリン</suspect_product>
            <seriousness>hospitalization</seriousness>
            <date role="onset">2021</date>
        </icsr>"#;
        let doc = parse_document(xml.as_bytes(), DocumentFormat::XmlLite).unwrap();
        assert_eq!(doc.case_id, "C-9");
        assert_eq!(doc.narrative, "頭痛 & 悪心");
        assert_eq!(doc.structured_fields.len(), 2);
        assert_eq!(doc.structured_fields[1], ("seriousness".into(), "serious".into()));
        assert_eq!(doc.patient.as_ref().unwrap().age.unwrap().unit, AgeUnit::Months);
        assert_eq!(doc.dates[0].precision(), DatePrecision::Year);
        assert!(check_validity(&doc).valid);
    }

    #[test]
    fn xml_lite_errors() {
        let no_lang = "<icsr><case_id>a</case_id><narrative>n</narrative></icsr>";
        assert_eq!(
            parse_document(no_lang.as_bytes(), DocumentFormat::XmlLite),
            Err(IcsrError::MissingRequiredField("language"))
        );
        let bad_root = "<report><case_id>a</case_id></report>";
        assert!(matches!(
            parse_document(bad_root.as_bytes(), DocumentFormat::XmlLite),
            Err(IcsrError::MalformedDocument(_))
        ));
        let truncated = "<icsr><case_id>a</case_id><language>ja";
        assert!(matches!(
            parse_document(truncated.as_bytes(), DocumentFormat::XmlLite),
            Err(IcsrError::MalformedDocument(_))
        ));
    }

    #[test]
    fn partial_dates_keep_their_precision() {
        let d = |v: &str| DateEntry {
            role: "onset".into(),
            value: v.into(),
        };
        assert_eq!(d("2020-02-29").precision(), DatePrecision::Day);
        assert_eq!(d("2021-02-29").precision(), DatePrecision::Invalid);
        assert_eq!(d("2021-11").precision(), DatePrecision::Month);
        assert_eq!(d("2021-13").precision(), DatePrecision::Invalid);
        assert_eq!(d("2021").precision(), DatePrecision::Year);
        assert!(!d("March").is_valid());
    }

    fn item() -> impl Strategy<Value = String> {
        // names and values drawn over an alphabet rich in delimiter characters
        proptest::collection::vec(prop_oneof![Just(';'), Just(':'), Just(' '), Just('a'), Just('ß')], 1..10)
            .prop_map(|cs| cs.into_iter().collect::<String>())
            .prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn serialization_is_injective(
            instruction in "[A-Za-z ]{1,12}",
            fields in proptest::collection::vec((item(), item()), 0..5),
            narrative in "[^\\r]{0,20}",
        ) {
            let mut doc = IcsrDocument::new("c", "ja");
            doc.structured_fields = fields.clone();
            doc.narrative = narrative.clone();
            let text = serialize_for_model(&doc, &instruction);
            let (i, f, n) = parse_model_input(&text).expect("parses back");
            prop_assert_eq!(i, instruction);
            prop_assert_eq!(f, fields);
            prop_assert_eq!(n, narrative);
        }

        #[test]
        fn validity_is_deterministic(has_rep: bool, has_pat: bool, n_r in 0usize..3, n_p in 0usize..3) {
            let mut doc = IcsrDocument::new("c", "ja");
            doc.narrative = "n".into();
            if has_rep { doc.reporter = Some(ReporterInfo { name: Some("x".into()), ..Default::default() }); }
            if has_pat { doc.patient = Some(PatientInfo { age: None, sex: Some(Sex::Unknown) }); }
            doc.reactions = vec!["r".into(); n_r];
            doc.suspect_products = vec!["p".into(); n_p];
            let a = check_validity(&doc);
            prop_assert_eq!(&a, &check_validity(&doc));
            prop_assert_eq!(a.valid, a.missing_elements.is_empty());
            prop_assert_eq!(a.missing_elements.len(), [!has_rep, !has_pat, n_r == 0, n_p == 0].iter().filter(|b| **b).count());
        }
    }
}
