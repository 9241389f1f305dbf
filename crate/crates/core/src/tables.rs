//! Stratified 2×2 data model and ingestion.
//!
//! Cells follow the usual layout: the first index is the outcome (1 =
//! responder), the second the arm (1 = treated). So `n10` counts control
//! responders and `n01` treated non-responders.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub stratum: String,
    pub arm: u32,
    pub outcome: bool,
}

impl SubjectRecord {
    pub fn new(stratum: impl Into<String>, arm: u32, outcome: bool) -> Self {
        SubjectRecord {
            stratum: stratum.into(),
            arm,
            outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumTable {
    pub label: String,
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl StratumTable {
    pub fn new(label: impl Into<String>, n11: u64, n10: u64, n01: u64, n00: u64) -> Self {
        StratumTable {
            label: label.into(),
            n11,
            n10,
            n01,
            n00,
        }
    }

    /// Treated arm size, `n_.1`.
    pub fn treated(&self) -> u64 {
        self.n11 + self.n01
    }

    /// Control arm size, `n_.0`.
    pub fn control(&self) -> u64 {
        self.n10 + self.n00
    }

    /// Responders in both arms, `n_1.`.
    pub fn responders(&self) -> u64 {
        self.n11 + self.n10
    }

    /// Non-responders in both arms, `n_0.`.
    pub fn non_responders(&self) -> u64 {
        self.n01 + self.n00
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    pub fn has_both_arms(&self) -> bool {
        self.treated() > 0 && self.control() > 0
    }

    pub fn treated_rate(&self) -> Option<f64> {
        let m = self.treated();
        (m > 0).then(|| self.n11 as f64 / m as f64)
    }

    pub fn control_rate(&self) -> Option<f64> {
        let m = self.control();
        (m > 0).then(|| self.n10 as f64 / m as f64)
    }

    /// The same stratum with treated and control relabelled.
    pub fn swap_arms(&self) -> StratumTable {
        StratumTable::new(self.label.clone(), self.n10, self.n11, self.n00, self.n01)
    }

    /// The same stratum with responders and non-responders relabelled.
    pub fn swap_outcomes(&self) -> StratumTable {
        StratumTable::new(self.label.clone(), self.n01, self.n00, self.n11, self.n10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedDataset {
    strata: Vec<StratumTable>,
    n: u64,
}

impl StratifiedDataset {
    /// Rejects an empty list, strata with no subjects and repeated labels.
    pub fn from_tables(strata: Vec<StratumTable>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = HashMap::with_capacity(strata.len());
        for t in &strata {
            if t.total() == 0 {
                return Err(Error::EmptyStratum(t.label.clone()));
            }
            if seen.insert(t.label.as_str(), ()).is_some() {
                return Err(Error::InvalidStratum {
                    label: t.label.clone(),
                    reason: "label appears more than once".into(),
                });
            }
        }
        let n = strata.iter().map(StratumTable::total).sum();
        Ok(StratifiedDataset { strata, n })
    }

    pub fn strata(&self) -> &[StratumTable] {
        &self.strata
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.strata.len()
    }

    pub fn treated_total(&self) -> u64 {
        self.strata.iter().map(StratumTable::treated).sum()
    }

    pub fn control_total(&self) -> u64 {
        self.strata.iter().map(StratumTable::control).sum()
    }

    pub fn dropped_strata(&self) -> usize {
        self.strata.iter().filter(|t| !t.has_both_arms()).count()
    }

    pub fn swap_arms(&self) -> StratifiedDataset {
        StratifiedDataset {
            strata: self.strata.iter().map(StratumTable::swap_arms).collect(),
            n: self.n,
        }
    }

    pub fn swap_outcomes(&self) -> StratifiedDataset {
        StratifiedDataset {
            strata: self.strata.iter().map(StratumTable::swap_outcomes).collect(),
            n: self.n,
        }
    }

    pub fn into_tables(self) -> Vec<StratumTable> {
        self.strata
    }
}

/// Tallies two-arm subject records into strata ordered by first appearance.
pub fn aggregate_subjects(records: &[SubjectRecord]) -> Result<StratifiedDataset> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut tables: Vec<StratumTable> = Vec::new();
    for r in records {
        if r.arm > 1 {
            return Err(Error::ArmOutOfRange { arm: r.arm, arms: 2 });
        }
        let i = *index.entry(r.stratum.as_str()).or_insert_with(|| {
            tables.push(StratumTable::new(r.stratum.clone(), 0, 0, 0, 0));
            tables.len() - 1
        });
        let t = &mut tables[i];
        match (r.outcome, r.arm) {
            (true, 1) => t.n11 += 1,
            (true, _) => t.n10 += 1,
            (false, 1) => t.n01 += 1,
            (false, _) => t.n00 += 1,
        }
    }
    StratifiedDataset::from_tables(tables)
}

/// Inverse of [`aggregate_subjects`]: one record per subject, stratum by stratum.
pub fn expand_records(dataset: &StratifiedDataset) -> Vec<SubjectRecord> {
    let mut out = Vec::with_capacity(dataset.n() as usize);
    for t in dataset.strata() {
        let cells = [(1, true, t.n11), (0, true, t.n10), (1, false, t.n01), (0, false, t.n00)];
        for (arm, outcome, count) in cells {
            for _ in 0..count {
                out.push(SubjectRecord::new(t.label.clone(), arm, outcome));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checks {
    pub zero_arm: bool,
    pub singleton_arm: bool,
    pub all_degenerate: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            zero_arm: true,
            singleton_arm: true,
            all_degenerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Warning {
    /// Stratum lacks one arm and is dropped by MH and PS weighting.
    ZeroArm {
        label: String,
    },
    /// One arm holds a single subject; small-sample corrections do not apply.
    SingletonArm {
        label: String,
    },
    AllStrataDegenerate,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::ZeroArm { label } => {
                write!(f, "stratum `{label}` has an empty arm and is dropped")
            }
            Warning::SingletonArm { label } => write!(
                f,
                "stratum `{label}` has a single-subject arm; variance correction is not applied"
            ),
            Warning::AllStrataDegenerate => {
                write!(f, "every stratum has an empty arm; no estimator is defined")
            }
        }
    }
}

pub fn validate(dataset: &StratifiedDataset, checks: Checks) -> Vec<Warning> {
    let mut out = Vec::new();
    for t in dataset.strata() {
        let (m1, m0) = (t.treated(), t.control());
        if checks.zero_arm && (m1 == 0 || m0 == 0) {
            out.push(Warning::ZeroArm { label: t.label.clone() });
        }
        if checks.singleton_arm && (m1 == 1 || m0 == 1) {
            out.push(Warning::SingletonArm { label: t.label.clone() });
        }
    }
    if checks.all_degenerate && dataset.strata().iter().all(|t| !t.has_both_arms()) {
        out.push(Warning::AllStrataDegenerate);
    }
    out
}

/// A stratum of a J-arm trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiArmStratumTable {
    pub label: String,
    pub responders: Vec<u64>,
    pub totals: Vec<u64>,
}

impl MultiArmStratumTable {
    pub fn new(label: impl Into<String>, responders: Vec<u64>, totals: Vec<u64>) -> Result<Self> {
        let label = label.into();
        if responders.len() != totals.len() {
            return Err(Error::InvalidStratum {
                label,
                reason: "responder and total vectors differ in length".into(),
            });
        }
        if totals.len() < 2 {
            return Err(Error::InvalidStratum {
                label,
                reason: "at least two arms are required".into(),
            });
        }
        if let Some(j) = (0..totals.len()).find(|&j| responders[j] > totals[j]) {
            return Err(Error::InvalidStratum {
                label,
                reason: format!("arm {j} has more responders than subjects"),
            });
        }
        Ok(MultiArmStratumTable {
            label,
            responders,
            totals,
        })
    }

    pub fn arms(&self) -> usize {
        self.totals.len()
    }

    pub fn total(&self) -> u64 {
        self.totals.iter().sum()
    }
}

impl From<&StratumTable> for MultiArmStratumTable {
    /// Arm 0 is control, arm 1 treated.
    fn from(t: &StratumTable) -> Self {
        MultiArmStratumTable {
            label: t.label.clone(),
            responders: vec![t.n10, t.n11],
            totals: vec![t.control(), t.treated()],
        }
    }
}

/// Tallies records for a `arms`-arm trial.
pub fn aggregate_multiarm(records: &[SubjectRecord], arms: u32) -> Result<Vec<MultiArmStratumTable>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    if arms < 2 {
        return Err(Error::InvalidArgument("at least two arms are required".into()));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<MultiArmStratumTable> = Vec::new();
    for r in records {
        if r.arm >= arms {
            return Err(Error::ArmOutOfRange { arm: r.arm, arms });
        }
        let i = *index.entry(r.stratum.as_str()).or_insert_with(|| {
            out.push(MultiArmStratumTable {
                label: r.stratum.clone(),
                responders: vec![0; arms as usize],
                totals: vec![0; arms as usize],
            });
            out.len() - 1
        });
        out[i].totals[r.arm as usize] += 1;
        out[i].responders[r.arm as usize] += u64::from(r.outcome);
    }
    Ok(out)
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(input)
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let got: Vec<String> = header.iter().map(str::to_ascii_lowercase).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot read `{raw}` as {name}"),
    })
}

fn rows<R: Read>(rdr: &mut csv::Reader<R>) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
    rdr.records().map(|r| {
        let rec = r.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        Ok((line, rec))
    })
}

/// Reads `stratum,arm,outcome` rows.
pub fn read_subjects_csv<R: Read>(input: R) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv_reader(input);
    check_header(&mut rdr, &["stratum", "arm", "outcome"])?;
    let mut out = Vec::new();
    for row in rows(&mut rdr) {
        let (line, rec) = row?;
        let stratum = rec.get(0).unwrap_or("").to_string();
        if stratum.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty stratum label".into(),
            });
        }
        let arm: u32 = field(&rec, 1, "an arm index", line)?;
        let outcome = match rec.get(2) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("outcome must be 0 or 1, found `{}`", other.unwrap_or("")),
                })
            }
        };
        out.push(SubjectRecord { stratum, arm, outcome });
    }
    Ok(out)
}

/// Reads `stratum,n11,n10,n01,n00` rows.
pub fn read_aggregated_csv<R: Read>(input: R) -> Result<StratifiedDataset> {
    let mut rdr = csv_reader(input);
    check_header(&mut rdr, &["stratum", "n11", "n10", "n01", "n00"])?;
    let mut tables = Vec::new();
    for row in rows(&mut rdr) {
        let (line, rec) = row?;
        let label = rec.get(0).unwrap_or("").to_string();
        let t = StratumTable::new(
            label,
            field(&rec, 1, "a count", line)?,
            field(&rec, 2, "a count", line)?,
            field(&rec, 3, "a count", line)?,
            field(&rec, 4, "a count", line)?,
        );
        if t.total() == 0 {
            return Err(Error::Parse {
                line,
                message: format!("stratum `{}` has no subjects", t.label),
            });
        }
        tables.push(t);
    }
    StratifiedDataset::from_tables(tables)
}

pub fn read_subjects_file(path: &Path) -> Result<Vec<SubjectRecord>> {
    read_subjects_csv(std::fs::File::open(path)?)
}

pub fn read_aggregated_file(path: &Path) -> Result<StratifiedDataset> {
    read_aggregated_csv(std::fs::File::open(path)?)
}

pub fn write_subjects_csv<W: std::io::Write>(records: &[SubjectRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["stratum", "arm", "outcome"]).map_err(io)?;
    for r in records {
        w.write_record([
            r.stratum.as_str(),
            &r.arm.to_string(),
            if r.outcome { "1" } else { "0" },
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregated_csv<W: std::io::Write>(dataset: &StratifiedDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["stratum", "n11", "n10", "n01", "n00"]).map_err(io)?;
    for t in dataset.strata() {
        w.write_record([
            t.label.clone(),
            t.n11.to_string(),
            t.n10.to_string(),
            t.n01.to_string(),
            t.n00.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Datasets shipped with the library, looked up by name.
pub fn embedded(name: &str) -> Option<StratifiedDataset> {
    match name.to_ascii_lowercase().as_str() {
        "calgb" => Some(calgb::dataset()),
        _ => None,
    }
}

/// The CALGB multi-institution trial: 156 patients in 21 institutions.
pub mod calgb {
    use super::*;

    /// Per institution: treated size, treated response rate, control size,
    /// control response rate. Rates are published to two decimals.
    pub const PUBLISHED: [(u64, f64, u64, f64); 21] = [
        (4, 0.75, 3, 0.33),
        (4, 0.75, 11, 0.73),
        (2, 1.00, 3, 0.67),
        (2, 1.00, 2, 1.00),
        (2, 1.00, 3, 0.00),
        (3, 0.33, 3, 0.67),
        (2, 1.00, 3, 0.67),
        (5, 0.20, 4, 1.00),
        (2, 1.00, 3, 0.67),
        (2, 0.00, 3, 0.67),
        (3, 1.00, 3, 1.00),
        (2, 1.00, 2, 0.00),
        (4, 0.25, 5, 0.20),
        (3, 0.67, 4, 0.50),
        (4, 0.50, 6, 0.67),
        (12, 0.33, 9, 0.33),
        (2, 0.50, 3, 0.67),
        (3, 1.00, 4, 0.25),
        (4, 0.25, 3, 0.67),
        (3, 0.00, 2, 0.00),
        (4, 0.50, 5, 0.20),
    ];

    /// Largest gap allowed between a rounded-back rate and the published one:
    /// half a unit in the second decimal.
    pub const RATE_TOLERANCE: f64 = 0.005 + 1e-12;

    fn count(size: u64, rate: f64, label: &str) -> Result<u64> {
        let c = (size as f64 * rate).round();
        if (c / size as f64 - rate).abs() > RATE_TOLERANCE || c < 0.0 || c > size as f64 {
            return Err(Error::InvalidStratum {
                label: label.to_string(),
                reason: format!("rate {rate} is not a whole count out of {size}"),
            });
        }
        Ok(c as u64)
    }

    /// Recovers cell counts from (size, rate) pairs.
    pub fn reconstruct(rows: &[(u64, f64, u64, f64)]) -> Result<StratifiedDataset> {
        let mut tables = Vec::with_capacity(rows.len());
        for (i, &(m1, p1, m0, p0)) in rows.iter().enumerate() {
            let label = format!("{}", i + 1);
            let n11 = count(m1, p1, &label)?;
            let n10 = count(m0, p0, &label)?;
            tables.push(StratumTable::new(label, n11, n10, m1 - n11, m0 - n10));
        }
        StratifiedDataset::from_tables(tables)
    }

    pub fn dataset() -> StratifiedDataset {
        reconstruct(&PUBLISHED).expect("published table reconstructs")
    }

    pub fn records() -> Vec<SubjectRecord> {
        expand_records(&dataset())
    }
}
