//! Categorical recodes: gender, age category, ethnicity, insurance,
//! provider type, and ICD-9-derived condition flags.
//!
//! The analysis fixes the *categories*; the raw-value vocabularies that feed
//! them are configuration, shipped as editable data files
//! (`ethnicity_map.txt`, `provider_map.txt`, `icd9_map.txt`) so the
//! assignments stay visible and overridable. Map parsers are strict — a
//! malformed line is an error, never a silently ignored row.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Patient gender as recorded in the patients table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
        }
    }

    /// Parse the raw `GENDER` field ("F"/"M", case-insensitive, trimmed).
    pub fn from_raw(raw: &str) -> Option<Gender> {
        match raw.trim().to_ascii_uppercase().as_str() {
            "F" | "FEMALE" => Some(Gender::Female),
            "M" | "MALE" => Some(Gender::Male),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// MeSH-aligned age category. Derived from age at first admission by
/// [`derive_age_category`]; ages below 13 are outside the supported range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeCategory {
    Adolescent,
    Adult,
    MiddleAged,
    Aged,
    Aged80Plus,
}

impl AgeCategory {
    pub const ALL: [AgeCategory; 5] = [
        AgeCategory::Adolescent,
        AgeCategory::Adult,
        AgeCategory::MiddleAged,
        AgeCategory::Aged,
        AgeCategory::Aged80Plus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgeCategory::Adolescent => "Adolescent",
            AgeCategory::Adult => "Adult",
            AgeCategory::MiddleAged => "MiddleAged",
            AgeCategory::Aged => "Aged",
            AgeCategory::Aged80Plus => "Aged80Plus",
        }
    }

    /// Human-facing label with the age range, as used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            AgeCategory::Adolescent => "Adolescent (13-18)",
            AgeCategory::Adult => "Adult (19-44)",
            AgeCategory::MiddleAged => "Middle Aged (45-64)",
            AgeCategory::Aged => "Aged (65-79)",
            AgeCategory::Aged80Plus => "Aged, 80 and over (>80)",
        }
    }
}

impl fmt::Display for AgeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Derive the age category from age in years.
///
/// De-identified ages above 120 are clamped to 90 first (MIMIC-III shifts
/// ages over 89 to ~300), so they land in [`AgeCategory::Aged80Plus`].
/// Boundaries: 13-18 Adolescent, 19-44 Adult, 45-64 Middle Aged, 65-79
/// Aged, 80+ Aged80Plus. Ages below 13 (including NaN or negative values
/// from corrupt dates) are an error.
pub fn derive_age_category(age_years: f64) -> Result<AgeCategory, IngestError> {
    let age = if age_years > 120.0 { 90.0 } else { age_years };
    if !(age >= 13.0) {
        return Err(IngestError::AgeBelowRange { age: age_years });
    }
    Ok(if age < 19.0 {
        AgeCategory::Adolescent
    } else if age < 45.0 {
        AgeCategory::Adult
    } else if age < 65.0 {
        AgeCategory::MiddleAged
    } else if age < 80.0 {
        AgeCategory::Aged
    } else {
        AgeCategory::Aged80Plus
    })
}

/// Consolidated ethnicity category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ethnicity {
    White,
    Asian,
    BlackAfricanAmerican,
    HispanicLatino,
    NativeAmericanAlaskanNative,
    Other,
    UnknownDeclined,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 7] = [
        Ethnicity::White,
        Ethnicity::Asian,
        Ethnicity::BlackAfricanAmerican,
        Ethnicity::HispanicLatino,
        Ethnicity::NativeAmericanAlaskanNative,
        Ethnicity::Other,
        Ethnicity::UnknownDeclined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ethnicity::White => "White",
            Ethnicity::Asian => "Asian",
            Ethnicity::BlackAfricanAmerican => "BlackAfricanAmerican",
            Ethnicity::HispanicLatino => "HispanicLatino",
            Ethnicity::NativeAmericanAlaskanNative => "NativeAmericanAlaskanNative",
            Ethnicity::Other => "Other",
            Ethnicity::UnknownDeclined => "UnknownDeclined",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ethnicity::White => "White",
            Ethnicity::Asian => "Asian",
            Ethnicity::BlackAfricanAmerican => "Black/African American",
            Ethnicity::HispanicLatino => "Hispanic/Latino",
            Ethnicity::NativeAmericanAlaskanNative => "Native American/Alaskan Native",
            Ethnicity::Other => "Other",
            Ethnicity::UnknownDeclined => "Unknown/Declined",
        }
    }
}

impl fmt::Display for Ethnicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Ethnicity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ethnicity::ALL
            .iter()
            .find(|e| e.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown ethnicity category {s:?}"))
    }
}

/// Insurance category. Medicare, Medicaid, and Government all consolidate
/// into [`Insurance::GovernmentRun`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Insurance {
    Private,
    GovernmentRun,
    SelfPay,
}

impl Insurance {
    pub const ALL: [Insurance; 3] = [Insurance::Private, Insurance::GovernmentRun, Insurance::SelfPay];

    pub fn as_str(self) -> &'static str {
        match self {
            Insurance::Private => "Private",
            Insurance::GovernmentRun => "GovernmentRun",
            Insurance::SelfPay => "SelfPay",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Insurance::Private => "Private",
            Insurance::GovernmentRun => "Government-run",
            Insurance::SelfPay => "Self Pay",
        }
    }
}

impl fmt::Display for Insurance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recategorize a raw admission-table insurance string.
///
/// The vocabulary is small and fixed, so unlike ethnicity there is no
/// configurable map: an unrecognized label is an error the caller records
/// (the patient is then excluded from insurance regressions only).
pub fn recategorize_insurance(raw: &str) -> Result<Insurance, IngestError> {
    match raw.trim().to_ascii_uppercase().as_str() {
        "MEDICARE" | "MEDICAID" | "GOVERNMENT" => Ok(Insurance::GovernmentRun),
        "PRIVATE" => Ok(Insurance::Private),
        "SELF PAY" => Ok(Insurance::SelfPay),
        _ => Err(IngestError::UnknownInsuranceLabel {
            label: raw.trim().to_string(),
        }),
    }
}

/// Provider type derived from the caregiver table's raw label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProviderType {
    Physicians,
    APP,
    Pharmacist,
    RegisteredDieticians,
    RegisteredNurses,
    RehabOTPT,
    RespiratoryTherapist,
    SocialWorkers,
    Unknown,
}

impl ProviderType {
    pub const ALL: [ProviderType; 9] = [
        ProviderType::Physicians,
        ProviderType::APP,
        ProviderType::Pharmacist,
        ProviderType::RegisteredDieticians,
        ProviderType::RegisteredNurses,
        ProviderType::RehabOTPT,
        ProviderType::RespiratoryTherapist,
        ProviderType::SocialWorkers,
        ProviderType::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderType::Physicians => "Physicians",
            ProviderType::APP => "APP",
            ProviderType::Pharmacist => "Pharmacist",
            ProviderType::RegisteredDieticians => "RegisteredDieticians",
            ProviderType::RegisteredNurses => "RegisteredNurses",
            ProviderType::RehabOTPT => "RehabOTPT",
            ProviderType::RespiratoryTherapist => "RespiratoryTherapist",
            ProviderType::SocialWorkers => "SocialWorkers",
            ProviderType::Unknown => "Unknown",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ProviderType::Physicians => "Physicians",
            ProviderType::APP => "Advanced Practice Providers",
            ProviderType::Pharmacist => "Pharmacists",
            ProviderType::RegisteredDieticians => "Registered Dieticians",
            ProviderType::RegisteredNurses => "Registered Nurses",
            ProviderType::RehabOTPT => "Rehabilitation (OT/PT)",
            ProviderType::RespiratoryTherapist => "Respiratory Therapists",
            ProviderType::SocialWorkers => "Social Workers",
            ProviderType::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for ProviderType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProviderType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProviderType::ALL
            .iter()
            .find(|p| p.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown provider type {s:?}"))
    }
}

/// Condition names in shipped-map order; these are the valid keys of
/// `icd9_map.txt` and the covariate names used by patient-level models.
pub const CONDITIONS: [&str; 11] = [
    "sickle_cell",
    "oud",
    "obesity",
    "hiv_symptomatic",
    "sud",
    "schizophrenia",
    "mood_disorder",
    "anxiety",
    "ptsd",
    "suicide_attempt",
    "suicidal_ideation",
];

/// Human-facing label for a condition flag, used in report tables.
pub fn condition_label(condition: &str) -> &str {
    match condition {
        "sickle_cell" => "Sickle Cell Disease",
        "oud" => "Opioid Use Disorder",
        "obesity" => "Obesity",
        "hiv_symptomatic" => "HIV (Symptomatic)",
        "sud" => "Substance Use Disorder",
        "schizophrenia" => "Schizophrenia",
        "mood_disorder" => "Mood Disorder",
        "anxiety" => "Anxiety",
        "ptsd" => "PTSD",
        "suicide_attempt" => "Suicide Attempt",
        "suicidal_ideation" => "Suicidal Ideation",
        other => other,
    }
}

/// One boolean per studied condition, derived from the patient's ICD-9
/// codes via the configured pattern map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiagnosisFlags {
    pub sickle_cell: bool,
    pub oud: bool,
    pub obesity: bool,
    pub hiv_symptomatic: bool,
    pub sud: bool,
    pub schizophrenia: bool,
    pub mood_disorder: bool,
    pub anxiety: bool,
    pub ptsd: bool,
    pub suicide_attempt: bool,
    pub suicidal_ideation: bool,
}

impl DiagnosisFlags {
    /// Look up a flag by condition name; `None` for unknown names.
    pub fn get(&self, condition: &str) -> Option<bool> {
        Some(match condition {
            "sickle_cell" => self.sickle_cell,
            "oud" => self.oud,
            "obesity" => self.obesity,
            "hiv_symptomatic" => self.hiv_symptomatic,
            "sud" => self.sud,
            "schizophrenia" => self.schizophrenia,
            "mood_disorder" => self.mood_disorder,
            "anxiety" => self.anxiety,
            "ptsd" => self.ptsd,
            "suicide_attempt" => self.suicide_attempt,
            "suicidal_ideation" => self.suicidal_ideation,
            _ => return None,
        })
    }

    /// Set a flag by condition name; returns false for unknown names.
    pub fn set(&mut self, condition: &str, value: bool) -> bool {
        let slot = match condition {
            "sickle_cell" => &mut self.sickle_cell,
            "oud" => &mut self.oud,
            "obesity" => &mut self.obesity,
            "hiv_symptomatic" => &mut self.hiv_symptomatic,
            "sud" => &mut self.sud,
            "schizophrenia" => &mut self.schizophrenia,
            "mood_disorder" => &mut self.mood_disorder,
            "anxiety" => &mut self.anxiety,
            "ptsd" => &mut self.ptsd,
            "suicide_attempt" => &mut self.suicide_attempt,
            "suicidal_ideation" => &mut self.suicidal_ideation,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// Iterate `(condition_name, value)` pairs in [`CONDITIONS`] order.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, bool)> + '_ {
        CONDITIONS
            .iter()
            .map(|name| (*name, self.get(name).expect("CONDITIONS names are valid")))
    }
}

/// Normalize an ICD-9 code the way MIMIC-III stores them: trimmed,
/// uppercased, dots removed ("282.60" and "28260" are the same code).
pub fn normalize_icd9(raw: &str) -> String {
    raw.trim()
        .chars()
        .filter(|c| *c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

/// A single code pattern from the ICD-9 map: exact code or prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
enum CodePattern {
    Exact(String),
    Prefix(String),
}

impl CodePattern {
    fn matches(&self, code: &str) -> bool {
        match self {
            CodePattern::Exact(c) => code == c,
            CodePattern::Prefix(p) => code.starts_with(p),
        }
    }
}

/// Include/exclude pattern sets for one condition. A code sets the flag
/// when it matches at least one include pattern and no exclude pattern.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ConditionPatterns {
    includes: Vec<CodePattern>,
    excludes: Vec<CodePattern>,
}

impl ConditionPatterns {
    fn matches(&self, code: &str) -> bool {
        self.includes.iter().any(|p| p.matches(code))
            && !self.excludes.iter().any(|p| p.matches(code))
    }
}

/// Condition → ICD-9 pattern map, parsed from `icd9_map.txt`-style text.
///
/// Line format: `condition=PATTERN|PATTERN|...` where a pattern is an exact
/// code (`042`), a prefix (`2826*`), or an exclusion (`!3051*`). Patterns
/// are normalized like codes (uppercase, dotless).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMap {
    conditions: Vec<(&'static str, ConditionPatterns)>,
}

impl CodeMap {
    /// Parse map text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, IngestError> {
        let mut conditions: Vec<(&'static str, ConditionPatterns)> = Vec::new();
        for (line_no, key, values) in map_entries(text, origin)? {
            let bad = |message: String| IngestError::BadMap {
                origin: origin.to_string(),
                line: line_no,
                message,
            };
            let name = CONDITIONS
                .iter()
                .find(|c| **c == key)
                .copied()
                .ok_or_else(|| bad(format!("unknown condition {key:?}")))?;
            if conditions.iter().any(|(n, _)| *n == name) {
                return Err(bad(format!("condition {name:?} listed twice")));
            }
            let mut patterns = ConditionPatterns::default();
            for value in &values {
                let (target, token) = match value.strip_prefix('!') {
                    Some(rest) => (&mut patterns.excludes, rest),
                    None => (&mut patterns.includes, value.as_str()),
                };
                let (stem, is_prefix) = match token.strip_suffix('*') {
                    Some(stem) => (stem, true),
                    None => (token, false),
                };
                let stem = normalize_icd9(stem);
                if stem.is_empty() || stem.contains('*') || stem.contains('!') {
                    return Err(bad(format!("malformed code pattern {value:?}")));
                }
                target.push(if is_prefix {
                    CodePattern::Prefix(stem)
                } else {
                    CodePattern::Exact(stem)
                });
            }
            if patterns.includes.is_empty() {
                return Err(bad(format!("condition {name:?} has no include patterns")));
            }
            conditions.push((name, patterns));
        }
        Ok(CodeMap { conditions })
    }

    /// The compiled-in default map.
    pub fn shipped() -> Self {
        Self::parse(crate::data::ICD9_MAP, "<shipped icd9 map>")
            .expect("shipped ICD-9 map is valid")
    }

    /// Parse a user-supplied map file.
    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Derive all condition flags for a patient's ICD-9 code list.
///
/// Codes are normalized before matching; blank codes are ignored. A flag is
/// true iff at least one code matches the condition's pattern set.
pub fn derive_diagnosis_flags<S: AsRef<str>>(codes: &[S], map: &CodeMap) -> DiagnosisFlags {
    let mut flags = DiagnosisFlags::default();
    for raw in codes {
        let code = normalize_icd9(raw.as_ref());
        if code.is_empty() {
            continue;
        }
        for (name, patterns) in &map.conditions {
            if patterns.matches(&code) {
                flags.set(name, true);
            }
        }
    }
    flags
}

/// Raw admission-table ethnicity string → category table, keyed on the
/// uppercased trimmed raw value. Anything not listed maps to
/// [`Ethnicity::UnknownDeclined`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthnicityMap {
    table: HashMap<String, Ethnicity>,
}

impl EthnicityMap {
    pub fn parse(text: &str, origin: &str) -> Result<Self, IngestError> {
        let mut table = HashMap::new();
        for (line_no, key, values) in map_entries(text, origin)? {
            let bad = |message: String| IngestError::BadMap {
                origin: origin.to_string(),
                line: line_no,
                message,
            };
            let category: Ethnicity = key.parse().map_err(bad)?;
            for value in values {
                let raw = value.to_ascii_uppercase();
                if table.insert(raw.clone(), category).is_some() {
                    return Err(bad(format!("raw value {raw:?} listed more than once")));
                }
            }
        }
        Ok(EthnicityMap { table })
    }

    pub fn shipped() -> Self {
        Self::parse(crate::data::ETHNICITY_MAP, "<shipped ethnicity map>")
            .expect("shipped ethnicity map is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Recategorize a raw ethnicity string (uppercased, trimmed lookup;
    /// unrecognized or blank → UnknownDeclined).
    pub fn categorize(&self, raw: &str) -> Ethnicity {
        self.table
            .get(&raw.trim().to_ascii_uppercase())
            .copied()
            .unwrap_or(Ethnicity::UnknownDeclined)
    }
}

/// Raw caregiver label → provider type table. Lookup is case-sensitive on
/// the trimmed label (the source vocabulary distinguishes "RN" from "rn"
/// only by listing both); anything not listed maps to
/// [`ProviderType::Unknown`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderMap {
    table: HashMap<String, ProviderType>,
}

impl ProviderMap {
    pub fn parse(text: &str, origin: &str) -> Result<Self, IngestError> {
        let mut table = HashMap::new();
        for (line_no, key, values) in map_entries(text, origin)? {
            let bad = |message: String| IngestError::BadMap {
                origin: origin.to_string(),
                line: line_no,
                message,
            };
            let provider_type: ProviderType = key.parse().map_err(bad)?;
            for value in values {
                if table.insert(value.clone(), provider_type).is_some() {
                    return Err(bad(format!("raw label {value:?} listed more than once")));
                }
            }
        }
        Ok(ProviderMap { table })
    }

    pub fn shipped() -> Self {
        Self::parse(crate::data::PROVIDER_MAP, "<shipped provider map>")
            .expect("shipped provider map is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Recategorize a raw caregiver label (trimmed, case-sensitive lookup;
    /// miss → Unknown).
    pub fn categorize(&self, raw_label: &str) -> ProviderType {
        self.table
            .get(raw_label.trim())
            .copied()
            .unwrap_or(ProviderType::Unknown)
    }

    /// All raw labels in the table (arbitrary order).
    pub fn raw_labels(&self) -> impl Iterator<Item = &str> {
        self.table.keys().map(String::as_str)
    }
}

/// Split `KEY=VALUE|VALUE|...` map text into entries, skipping blank and
/// `#`-comment lines. Returns `(line_number, key, values)` per entry.
fn map_entries(text: &str, origin: &str) -> Result<Vec<(usize, String, Vec<String>)>, IngestError> {
    let mut entries = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line_no = idx + 1;
        let Some((key, values)) = line.split_once('=') else {
            return Err(IngestError::BadMap {
                origin: origin.to_string(),
                line: line_no,
                message: "expected KEY=VALUE|VALUE|...".to_string(),
            });
        };
        let values: Vec<String> = values
            .split('|')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if values.is_empty() {
            return Err(IngestError::BadMap {
                origin: origin.to_string(),
                line: line_no,
                message: format!("key {:?} has no values", key.trim()),
            });
        }
        entries.push((line_no, key.trim().to_string(), values));
    }
    Ok(entries)
}
