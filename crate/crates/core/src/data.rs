//! Arm-level trial summaries.
//!
//! A [`StudySet`] holds `K >= 1` historical control arms (in file order), the
//! current control arm and the current treatment arm. Every arm of a set shares
//! one endpoint type. Sets are immutable once validated.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("invalid count in row {row}: {reason}")]
    InvalidCount { row: usize, reason: String },
    #[error("invalid value in row {row}: {reason}")]
    InvalidValue { row: usize, reason: String },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("missing {0} row")]
    MissingRole(&'static str),
    #[error("more than one {0} row")]
    DuplicateRole(&'static str),
    #[error("no historical (H) rows")]
    NoHistorical,
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("csv error: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Binary,
    Continuous,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Binary => f.write_str("binary"),
            Endpoint::Continuous => f.write_str("continuous"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" => Ok(Endpoint::Binary),
            "continuous" => Ok(Endpoint::Continuous),
            other => Err(DataError::UnknownEndpoint(other.to_string())),
        }
    }
}

/// Responders `y` out of `n` subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryArm {
    pub n: u64,
    pub y: u64,
}

impl BinaryArm {
    pub fn new(n: u64, y: u64) -> Result<Self, DataError> {
        if n < 1 || y > n {
            return Err(DataError::InvalidCount {
                row: 0,
                reason: format!("need n >= 1 and 0 <= y <= n, got n={n}, y={y}"),
            });
        }
        Ok(Self { n, y })
    }

    pub fn failures(&self) -> u64 {
        self.n - self.y
    }

    pub fn rate(&self) -> f64 {
        self.y as f64 / self.n as f64
    }
}

/// Mean and standard deviation of a continuous endpoint over `n` subjects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousArm {
    pub n: u64,
    pub mean: f64,
    pub sd: f64,
}

impl ContinuousArm {
    pub fn new(n: u64, mean: f64, sd: f64) -> Result<Self, DataError> {
        if n < 2 {
            return Err(DataError::InvalidCount {
                row: 0,
                reason: format!("continuous arms need n >= 2, got {n}"),
            });
        }
        if !(sd > 0.0 && sd.is_finite()) || !mean.is_finite() {
            return Err(DataError::InvalidValue {
                row: 0,
                reason: format!("need finite mean and sd > 0, got mean={mean}, sd={sd}"),
            });
        }
        Ok(Self { n, mean, sd })
    }

    /// Plug-in standard error `sd / sqrt(n)`.
    pub fn se(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "endpoint", rename_all = "lowercase")]
pub enum Arm {
    Binary(BinaryArm),
    Continuous(ContinuousArm),
}

impl Arm {
    pub fn endpoint(&self) -> Endpoint {
        match self {
            Arm::Binary(_) => Endpoint::Binary,
            Arm::Continuous(_) => Endpoint::Continuous,
        }
    }

    pub fn n(&self) -> u64 {
        match self {
            Arm::Binary(a) => a.n,
            Arm::Continuous(a) => a.n,
        }
    }

    pub fn as_binary(&self) -> Option<&BinaryArm> {
        match self {
            Arm::Binary(a) => Some(a),
            Arm::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&ContinuousArm> {
        match self {
            Arm::Continuous(a) => Some(a),
            Arm::Binary(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledArm {
    pub label: String,
    pub arm: Arm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySet {
    endpoint: Endpoint,
    historical: Vec<LabeledArm>,
    current_control: LabeledArm,
    current_treatment: LabeledArm,
}

impl StudySet {
    pub fn new(
        endpoint: Endpoint,
        historical: Vec<LabeledArm>,
        current_control: LabeledArm,
        current_treatment: LabeledArm,
    ) -> Result<Self, DataError> {
        if historical.is_empty() {
            return Err(DataError::NoHistorical);
        }
        let mut seen = HashSet::new();
        for h in &historical {
            if !seen.insert(h.label.as_str()) {
                return Err(DataError::DuplicateLabel(h.label.clone()));
            }
        }
        // The two current arms usually carry the same trial name; they only
        // have to differ from the historical labels.
        for cur in [&current_control, &current_treatment] {
            if seen.contains(cur.label.as_str()) {
                return Err(DataError::DuplicateLabel(cur.label.clone()));
            }
        }
        let all = historical
            .iter()
            .chain([&current_control, &current_treatment]);
        for (row, a) in all.enumerate() {
            if a.arm.endpoint() != endpoint {
                return Err(DataError::InvalidValue {
                    row: row + 1,
                    reason: format!("arm `{}` is not a {endpoint} arm", a.label),
                });
            }
        }
        Ok(Self {
            endpoint,
            historical,
            current_control,
            current_treatment,
        })
    }

    pub fn endpoint(&self) -> Endpoint {
        self.endpoint
    }

    /// Number of historical sources `K`.
    pub fn k(&self) -> usize {
        self.historical.len()
    }

    pub fn historical(&self) -> &[LabeledArm] {
        &self.historical
    }

    pub fn historical_labels(&self) -> Vec<String> {
        self.historical.iter().map(|h| h.label.clone()).collect()
    }

    pub fn current_control(&self) -> &LabeledArm {
        &self.current_control
    }

    pub fn current_treatment(&self) -> &LabeledArm {
        &self.current_treatment
    }

    pub fn n_cc(&self) -> u64 {
        self.current_control.arm.n()
    }

    pub fn total_historical_n(&self) -> u64 {
        self.historical.iter().map(|h| h.arm.n()).sum()
    }

    pub fn binary_historical(&self) -> Option<Vec<BinaryArm>> {
        self.historical
            .iter()
            .map(|h| h.arm.as_binary().copied())
            .collect()
    }

    pub fn continuous_historical(&self) -> Option<Vec<ContinuousArm>> {
        self.historical
            .iter()
            .map(|h| h.arm.as_continuous().copied())
            .collect()
    }

    /// Serialise to the CSV schema accepted by [`load_study_set`].
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.endpoint {
            Endpoint::Binary => out.push_str("role,label,n,y\n"),
            Endpoint::Continuous => out.push_str("role,label,n,mean,sd\n"),
        }
        let rows = self
            .historical
            .iter()
            .map(|h| ("H", h))
            .chain([("CC", &self.current_control), ("CT", &self.current_treatment)]);
        for (role, a) in rows {
            match a.arm {
                Arm::Binary(b) => out.push_str(&format!("{role},{},{},{}\n", a.label, b.n, b.y)),
                // `{}` on f64 prints the shortest round-tripping decimal.
                Arm::Continuous(c) => out.push_str(&format!(
                    "{role},{},{},{},{}\n",
                    a.label, c.n, c.mean, c.sd
                )),
            }
        }
        out
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, row: usize) -> Result<&'a str, DataError> {
    match rec.get(idx).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(DataError::MalformedRow {
            row,
            reason: format!("missing field `{name}`"),
        }),
    }
}

fn parse_count(s: &str, name: &str, row: usize) -> Result<u64, DataError> {
    s.parse::<u64>().map_err(|_| DataError::InvalidCount {
        row,
        reason: format!("`{name}` must be a non-negative integer, got `{s}`"),
    })
}

fn parse_real(s: &str, name: &str, row: usize) -> Result<f64, DataError> {
    s.parse::<f64>().map_err(|_| DataError::MalformedRow {
        row,
        reason: format!("`{name}` is not a number: `{s}`"),
    })
}

/// Parse and validate a study set from CSV text.
///
/// Binary files use the header `role,label,n,y`, continuous files
/// `role,label,n,mean,sd`. Roles are `H` (historical), `CC` and `CT`; exactly
/// one CC and one CT row are required. Row numbers in errors are 1-based data
/// rows (the header is row 0).
pub fn load_study_set(content: &str, endpoint: Endpoint) -> Result<StudySet, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());

    let expected: &[&str] = match endpoint {
        Endpoint::Binary => &["role", "label", "n", "y"],
        Endpoint::Continuous => &["role", "label", "n", "mean", "sd"],
    };
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?;
    let got: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if got.len() < expected.len() || got.iter().zip(expected).any(|(g, e)| g != e) {
        return Err(DataError::MalformedRow {
            row: 0,
            reason: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }

    let mut historical = Vec::new();
    let mut cc = None;
    let mut ct = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let role = field(&rec, 0, "role", row)?;
        let label = field(&rec, 1, "label", row)?.to_string();
        let n = parse_count(field(&rec, 2, "n", row)?, "n", row)?;
        let arm = match endpoint {
            Endpoint::Binary => {
                let y = parse_count(field(&rec, 3, "y", row)?, "y", row)?;
                if n < 1 || y > n {
                    return Err(DataError::InvalidCount {
                        row,
                        reason: format!("need n >= 1 and 0 <= y <= n, got n={n}, y={y}"),
                    });
                }
                Arm::Binary(BinaryArm { n, y })
            }
            Endpoint::Continuous => {
                let mean = parse_real(field(&rec, 3, "mean", row)?, "mean", row)?;
                let sd = parse_real(field(&rec, 4, "sd", row)?, "sd", row)?;
                let arm = ContinuousArm::new(n, mean, sd).map_err(|e| match e {
                    DataError::InvalidCount { reason, .. } => DataError::InvalidCount { row, reason },
                    DataError::InvalidValue { reason, .. } => DataError::InvalidValue { row, reason },
                    other => other,
                })?;
                Arm::Continuous(arm)
            }
        };
        let labeled = LabeledArm { label, arm };
        match role.to_ascii_uppercase().as_str() {
            "H" => historical.push(labeled),
            "CC" => {
                if cc.replace(labeled).is_some() {
                    return Err(DataError::DuplicateRole("CC"));
                }
            }
            "CT" => {
                if ct.replace(labeled).is_some() {
                    return Err(DataError::DuplicateRole("CT"));
                }
            }
            other => {
                return Err(DataError::MalformedRow {
                    row,
                    reason: format!("unknown role `{other}` (expected H, CC or CT)"),
                })
            }
        }
    }
    let cc = cc.ok_or(DataError::MissingRole("CC"))?;
    let ct = ct.ok_or(DataError::MissingRole("CT"))?;
    StudySet::new(endpoint, historical, cc, ct)
}

/// The two case-study datasets shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinDataset {
    /// Ankylosing spondylitis, ASAS20 response: 8 historical controls.
    AsBinary,
    /// ADCS ADAS-cog change at week 52: 5 historical controls.
    AdcsContinuous,
}

impl BuiltinDataset {
    pub const ALL: [BuiltinDataset; 2] = [BuiltinDataset::AsBinary, BuiltinDataset::AdcsContinuous];

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinDataset::AsBinary => "as_binary",
            BuiltinDataset::AdcsContinuous => "adcs_continuous",
        }
    }

    pub fn endpoint(&self) -> Endpoint {
        match self {
            BuiltinDataset::AsBinary => Endpoint::Binary,
            BuiltinDataset::AdcsContinuous => Endpoint::Continuous,
        }
    }

    pub fn csv(&self) -> &'static str {
        match self {
            BuiltinDataset::AsBinary => include_str!("../data/as_binary.csv"),
            BuiltinDataset::AdcsContinuous => include_str!("../data/adcs_continuous.csv"),
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            BuiltinDataset::AsBinary => {
                "ankylosing spondylitis phase II trial, binary ASAS20 response, 8 historical controls"
            }
            BuiltinDataset::AdcsContinuous => {
                "ADCS resveratrol trial ADC-037, change in ADAS-cog at week 52, 5 historical controls"
            }
        }
    }

    pub fn load(&self) -> StudySet {
        load_study_set(self.csv(), self.endpoint()).expect("bundled dataset is valid")
    }
}

impl FromStr for BuiltinDataset {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BuiltinDataset::ALL
            .into_iter()
            .find(|d| d.name() == s.trim())
            .ok_or_else(|| DataError::UnknownDataset(s.to_string()))
    }
}

pub fn builtin_dataset(name: &str) -> Result<StudySet, DataError> {
    Ok(name.parse::<BuiltinDataset>()?.load())
}
