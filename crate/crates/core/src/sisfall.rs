//! SisFall corpus ingestion.
//!
//! Trial files hold one row of nine integer ADC counts per 200 Hz sample, in
//! the order ADXL345 x/y/z, ITG3200 x/y/z, MMA8451Q x/y/z. Files are named
//! `<ACT>_<SUBJ>_R<NN>.txt` and live in one folder per subject.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SAMPLE_RATE_HZ: f64 = 200.0;
pub const SAMPLE_PERIOD_S: f64 = 1.0 / SAMPLE_RATE_HZ;
pub const SAMPLE_PERIOD_MS: f64 = 5.0;

pub const FALL_CODES: usize = 15;
pub const ADL_CODES: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityKind {
    Fall,
    Adl,
}

/// One of the 34 SisFall activity codes (F01–F15, D01–D19).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivityCode {
    kind: ActivityKind,
    number: u8,
}

impl ActivityCode {
    pub fn new(kind: ActivityKind, number: u8) -> Result<Self> {
        let max = match kind {
            ActivityKind::Fall => FALL_CODES,
            ActivityKind::Adl => ADL_CODES,
        };
        if number == 0 || number as usize > max {
            return Err(invalid(format!("activity number {number} out of range for {kind:?}")));
        }
        Ok(Self { kind, number })
    }

    pub fn kind(self) -> ActivityKind {
        self.kind
    }

    pub fn number(self) -> u8 {
        self.number
    }

    pub fn is_fall(self) -> bool {
        self.kind == ActivityKind::Fall
    }

    pub fn all() -> impl Iterator<Item = ActivityCode> {
        Self::all_of(ActivityKind::Fall).chain(Self::all_of(ActivityKind::Adl))
    }

    pub fn all_of(kind: ActivityKind) -> impl Iterator<Item = ActivityCode> {
        let max = match kind {
            ActivityKind::Fall => FALL_CODES,
            ActivityKind::Adl => ADL_CODES,
        };
        (1..=max as u8).map(move |number| ActivityCode { kind, number })
    }

    /// Repetitions recorded per subject in the public distribution: the four
    /// long walking/jogging ADLs were recorded once, everything else five times.
    pub fn expected_repetitions(self) -> u8 {
        match (self.kind, self.number) {
            (ActivityKind::Adl, 1..=4) => 1,
            _ => 5,
        }
    }
}

impl fmt::Display for ActivityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.kind {
            ActivityKind::Fall => 'F',
            ActivityKind::Adl => 'D',
        };
        write!(f, "{prefix}{:02}", self.number)
    }
}

impl FromStr for ActivityCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.as_bytes().first() {
            Some(b'F') => ActivityKind::Fall,
            Some(b'D') => ActivityKind::Adl,
            _ => return Err(invalid(format!("bad activity code `{s}`"))),
        };
        if s.len() != 3 {
            return Err(invalid(format!("bad activity code `{s}`")));
        }
        let number: u8 = s[1..]
            .parse()
            .map_err(|_| invalid(format!("bad activity code `{s}`")))?;
        Self::new(kind, number)
    }
}

impl Serialize for ActivityCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActivityCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `SA01`–`SA23` (adults) or `SE01`–`SE15` (elderly).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SubjectId(String);

impl SubjectId {
    pub fn new(s: &str) -> Result<Self> {
        let bad = || invalid(format!("bad subject id `{s}`"));
        if s.len() != 4 || !s.starts_with('S') {
            return Err(bad());
        }
        let max = match &s[1..2] {
            "A" => 23,
            "E" => 15,
            _ => return Err(bad()),
        };
        let n: u8 = s[2..].parse().map_err(|_| bad())?;
        if n == 0 || n > max {
            return Err(bad());
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_elderly(&self) -> bool {
        self.0.starts_with("SE")
    }
}

impl TryFrom<String> for SubjectId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        SubjectId::new(&s)
    }
}

impl From<SubjectId> for String {
    fn from(s: SubjectId) -> String {
        s.0
    }
}

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TrialId {
    pub activity: ActivityCode,
    pub subject: SubjectId,
    pub repetition: u8,
}

impl TrialId {
    pub fn new(activity: ActivityCode, subject: SubjectId, repetition: u8) -> Result<Self> {
        if !(1..=5).contains(&repetition) {
            return Err(invalid(format!("repetition {repetition} outside 1..=5")));
        }
        Ok(Self {
            activity,
            subject,
            repetition,
        })
    }

    /// Parses `F01_SA01_R01` with or without a `.txt` suffix.
    pub fn from_filename(name: &str) -> Result<Self> {
        let stem = name.strip_suffix(".txt").unwrap_or(name);
        let parts: Vec<&str> = stem.split('_').collect();
        if parts.len() != 3 || !parts[2].starts_with('R') {
            return Err(invalid(format!("filename `{name}` does not match <ACT>_<SUBJ>_R<NN>")));
        }
        let repetition: u8 = parts[2][1..]
            .parse()
            .map_err(|_| invalid(format!("bad repetition in `{name}`")))?;
        Self::new(parts[0].parse()?, SubjectId::new(parts[1])?, repetition)
    }

    pub fn file_name(&self) -> String {
        format!("{self}.txt")
    }
}

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_R{:02}", self.activity, self.subject, self.repetition)
    }
}

impl FromStr for TrialId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_filename(s)
    }
}

impl TryFrom<String> for TrialId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrialId> for String {
    fn from(t: TrialId) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: SubjectId,
    pub age: f64,
    pub height_cm: f64,
    pub weight_kg: f64,
    /// F = 0.0, M = 1.0.
    pub gender: f64,
}

impl SubjectProfile {
    pub fn statics(&self) -> [f64; 4] {
        [self.age, self.height_cm, self.weight_kg, self.gender]
    }
}

/// Nine raw counts: ADXL345 x/y/z, ITG3200 x/y/z, MMA8451Q x/y/z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRecord(pub [i32; 9]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorScale {
    /// Full-scale range in g or deg/s.
    pub range: f64,
    pub resolution: u32,
}

impl SensorScale {
    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) {
            return Err(invalid(format!("sensor range {} must be > 0", self.range)));
        }
        if ![13, 14, 16].contains(&self.resolution) {
            return Err(invalid(format!("resolution {} not in {{13, 14, 16}}", self.resolution)));
        }
        Ok(())
    }

    pub fn count_bounds(&self) -> (i64, i64) {
        let half = 1i64 << (self.resolution - 1);
        (-half, half - 1)
    }

    pub fn lsb(&self) -> f64 {
        2.0 * self.range / (1u64 << self.resolution) as f64
    }

    pub fn to_physical(&self, counts: i32) -> Result<f64> {
        let (lo, hi) = self.count_bounds();
        let c = counts as i64;
        if c < lo || c > hi {
            return Err(Error::Range(format!(
                "count {counts} outside [{lo}, {hi}] for {}-bit sensor",
                self.resolution
            )));
        }
        Ok(self.lsb() * counts as f64)
    }

    /// Nearest count for a physical value, saturating at the ADC limits.
    pub fn to_counts(&self, value: f64) -> i32 {
        let (lo, hi) = self.count_bounds();
        ((value / self.lsb()).round() as i64).clamp(lo, hi) as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSpec {
    pub adxl345: SensorScale,
    pub itg3200: SensorScale,
    pub mma8451q: SensorScale,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            adxl345: SensorScale { range: 16.0, resolution: 13 },
            itg3200: SensorScale { range: 2000.0, resolution: 16 },
            mma8451q: SensorScale { range: 8.0, resolution: 14 },
        }
    }
}

impl CalibrationSpec {
    pub fn validate(&self) -> Result<()> {
        self.adxl345.validate()?;
        self.itg3200.validate()?;
        self.mma8451q.validate()
    }

    pub fn to_raw(&self, s: &CalibratedSample) -> RawRecord {
        let mut out = [0; 9];
        for k in 0..3 {
            out[k] = self.adxl345.to_counts(s.adxl345[k]);
            out[3 + k] = self.itg3200.to_counts(s.gyro_dps[k]);
            out[6 + k] = self.mma8451q.to_counts(s.mma8451q[k]);
        }
        RawRecord(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSample {
    /// g
    pub adxl345: [f64; 3],
    /// g
    pub mma8451q: [f64; 3],
    /// deg/s
    pub gyro_dps: [f64; 3],
    /// Seconds from trial start.
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Background,
    Fall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTrial {
    pub id: TrialId,
    pub samples: Vec<CalibratedSample>,
    pub labels: Vec<Label>,
}

impl AnnotatedTrial {
    pub fn fall_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|l| *l == Label::Fall).collect()
    }

    pub fn fall_span(&self) -> Option<(usize, usize)> {
        let first = self.labels.iter().position(|l| *l == Label::Fall)?;
        let last = self.labels.iter().rposition(|l| *l == Label::Fall)?;
        Some((first, last))
    }
}

/// Parses a trial file into raw records. Rows may carry surrounding
/// whitespace and a trailing `;` as in the public distribution.
pub fn parse_trial_file(bytes: &[u8], id: &TrialId) -> Result<Vec<RawRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("{id}: not valid UTF-8 ({e})"),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = line.trim().trim_end_matches(';').trim();
        if row.is_empty() {
            continue;
        }
        let mut rec = [0i32; 9];
        let mut n = 0;
        for field in row.split(',') {
            if n == 9 {
                n += 1;
                break;
            }
            rec[n] = field.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("{id}: non-integer field `{}`", field.trim()),
            })?;
            n += 1;
        }
        if n != 9 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("{id}: expected 9 fields"),
            });
        }
        out.push(RawRecord(rec));
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("{id}: empty trial file"),
        });
    }
    Ok(out)
}

pub fn calibrate(r: &RawRecord, spec: &CalibrationSpec, index: usize) -> Result<CalibratedSample> {
    let c = &r.0;
    let mut s = CalibratedSample {
        adxl345: [0.0; 3],
        mma8451q: [0.0; 3],
        gyro_dps: [0.0; 3],
        t: index as f64 * SAMPLE_PERIOD_S,
    };
    for k in 0..3 {
        s.adxl345[k] = spec.adxl345.to_physical(c[k])?;
        s.gyro_dps[k] = spec.itg3200.to_physical(c[3 + k])?;
        s.mma8451q[k] = spec.mma8451q.to_physical(c[6 + k])?;
    }
    Ok(s)
}

pub fn calibrate_trial(records: &[RawRecord], spec: &CalibrationSpec) -> Result<Vec<CalibratedSample>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| calibrate(r, spec, i))
        .collect()
}

/// Writes calibrated samples back to the text format (used by the synthetic corpus).
pub fn format_trial_file(samples: &[CalibratedSample], spec: &CalibrationSpec) -> String {
    let mut s = String::with_capacity(samples.len() * 48);
    for sample in samples {
        let RawRecord(c) = spec.to_raw(sample);
        let row: Vec<String> = c.iter().map(i32::to_string).collect();
        s.push_str(&row.join(","));
        s.push_str(";\n");
    }
    s
}

#[derive(Debug, Deserialize)]
struct SubjectRow {
    subject_id: String,
    age: f64,
    height_cm: f64,
    weight_kg: f64,
    gender: String,
}

pub fn parse_gender(s: &str) -> Result<f64> {
    match s.trim() {
        "F" | "f" => Ok(0.0),
        "M" | "m" => Ok(1.0),
        other => Err(invalid(format!("gender `{other}` is not F or M"))),
    }
}

pub fn load_subjects(path: &Path) -> Result<BTreeMap<SubjectId, SubjectProfile>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_subjects(file, path)
}

pub fn read_subjects<R: std::io::Read>(
    reader: R,
    path: &Path,
) -> Result<BTreeMap<SubjectId, SubjectProfile>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<SubjectRow>() {
        let row = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let id = SubjectId::new(&row.subject_id)?;
        if !(row.age > 0.0 && row.height_cm > 0.0 && row.weight_kg > 0.0) {
            return Err(invalid(format!("{id}: age, height and weight must be positive")));
        }
        let profile = SubjectProfile {
            subject_id: id.clone(),
            age: row.age,
            height_cm: row.height_cm,
            weight_kg: row.weight_kg,
            gender: parse_gender(&row.gender)?,
        };
        if out.insert(id.clone(), profile).is_some() {
            return Err(Error::Integrity(format!("duplicate subject_id {id}")));
        }
    }
    Ok(out)
}

pub fn write_subjects(path: &Path, profiles: &[SubjectProfile]) -> Result<()> {
    let mut s = String::from("subject_id,age,height_cm,weight_kg,gender\n");
    for p in profiles {
        let g = if p.gender >= 0.5 { "M" } else { "F" };
        s.push_str(&format!("{},{},{},{},{}\n", p.subject_id, p.age, p.height_cm, p.weight_kg, g));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn check_profiles<'a>(
    trials: impl IntoIterator<Item = &'a TrialId>,
    profiles: &BTreeMap<SubjectId, SubjectProfile>,
) -> Result<()> {
    for t in trials {
        if !profiles.contains_key(&t.subject) {
            return Err(Error::Integrity(format!("trial {t}: subject {} has no profile", t.subject)));
        }
    }
    Ok(())
}

/// FALL spans keyed by trial id, indices 0-based inclusive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationTable {
    spans: BTreeMap<TrialId, Vec<(usize, usize)>>,
}

#[derive(Debug, Deserialize)]
struct SpanRow {
    trial_id: String,
    start_index: usize,
    end_index: usize,
}

impl AnnotationTable {
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, path)
    }

    pub fn read<R: std::io::Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut table = Self::default();
        for row in rdr.deserialize::<SpanRow>() {
            let row = row.map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            table.insert(row.trial_id.parse()?, row.start_index, row.end_index)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, id: TrialId, start: usize, end: usize) -> Result<()> {
        if start > end {
            return Err(Error::Annotation(format!("{id}: span [{start}, {end}] is reversed")));
        }
        self.spans.entry(id).or_default().push((start, end));
        Ok(())
    }

    pub fn spans(&self, id: &TrialId) -> &[(usize, usize)] {
        self.spans.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn trial_ids(&self) -> impl Iterator<Item = &TrialId> {
        self.spans.keys()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::from("trial_id,start_index,end_index\n");
        for (id, spans) in &self.spans {
            for (a, b) in spans {
                s.push_str(&format!("{id},{a},{b}\n"));
            }
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Materializes per-sample labels from the normalized span table.
pub fn import_annotations(
    id: &TrialId,
    samples: Vec<CalibratedSample>,
    table: &AnnotationTable,
) -> Result<AnnotatedTrial> {
    let n = samples.len();
    let mut spans = table.spans(id).to_vec();
    if !spans.is_empty() && !id.activity.is_fall() {
        return Err(Error::Annotation(format!("{id}: FALL span on an ADL trial")));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        let (prev, next) = (w[0], w[1]);
        if next.0 <= prev.1 {
            return Err(Error::Annotation(format!(
                "{id}: overlapping spans [{}, {}] and [{}, {}]",
                prev.0, prev.1, next.0, next.1
            )));
        }
        if next.0 != prev.1 + 1 {
            return Err(Error::Annotation(format!("{id}: FALL labels are not one contiguous span")));
        }
    }
    let mut labels = vec![Label::Background; n];
    for (a, b) in spans {
        if b >= n {
            return Err(Error::Annotation(format!(
                "{id}: span [{a}, {b}] outside {n}-sample trial"
            )));
        }
        labels[a..=b].fill(Label::Fall);
    }
    Ok(AnnotatedTrial {
        id: id.clone(),
        samples,
        labels,
    })
}

pub fn load_trial(path: &Path, spec: &CalibrationSpec) -> Result<(TrialId, Vec<CalibratedSample>)> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| invalid(format!("{}: no file name", path.display())))?;
    let id = TrialId::from_filename(name)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_trial_file(&bytes, &id)?;
    Ok((id, calibrate_trial(&raw, spec)?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectCounts {
    pub adl: usize,
    pub fall: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub adl_trials: usize,
    pub fall_trials: usize,
    pub by_activity: BTreeMap<String, usize>,
    pub by_subject: BTreeMap<String, SubjectCounts>,
    /// Trials whose file exists and parses, sorted.
    pub trials: Vec<TrialId>,
    /// Expected repetitions absent for activities the subject performed at least once.
    pub missing: Vec<String>,
    /// Files that do not follow the naming pattern.
    pub extra: Vec<PathBuf>,
    /// Files that could not be read or parsed, with the reason.
    pub unreadable: Vec<(PathBuf, String)>,
    pub warnings: Vec<String>,
}

impl CorpusSummary {
    pub fn total(&self) -> usize {
        self.adl_trials + self.fall_trials
    }
}

fn list_dir(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Walks `root/<subject>/<trial>.txt`, parsing every trial file. Problems
/// with individual files are collected in the summary rather than returned.
pub fn verify_corpus(root: &Path, spec: &CalibrationSpec) -> Result<CorpusSummary> {
    let mut summary = CorpusSummary::default();
    let entries = list_dir(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        if entry.is_dir() {
            match list_dir(&entry) {
                Ok(inner) => files.extend(inner.into_iter().filter(|p| p.is_file())),
                Err(e) => summary.unreadable.push((entry.clone(), e.to_string())),
            }
        } else {
            summary.extra.push(entry);
        }
    }

    let parsed: Vec<(PathBuf, Option<std::result::Result<TrialId, String>>)> = files
        .par_iter()
        .map(|path| {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            match TrialId::from_filename(name) {
                Err(_) => (path.clone(), None),
                Ok(_) => {
                    let res = load_trial(path, spec).map(|(id, _)| id).map_err(|e| e.to_string());
                    (path.clone(), Some(res))
                }
            }
        })
        .collect();

    let mut seen: HashSet<TrialId> = HashSet::new();
    for (path, res) in parsed {
        match res {
            None => summary.extra.push(path),
            Some(Err(e)) => summary.unreadable.push((path, e)),
            Some(Ok(id)) => {
                if !seen.insert(id.clone()) {
                    summary.warnings.push(format!("duplicate trial {id}"));
                    continue;
                }
                let counts = summary.by_subject.entry(id.subject.to_string()).or_default();
                if id.activity.is_fall() {
                    summary.fall_trials += 1;
                    counts.fall += 1;
                } else {
                    summary.adl_trials += 1;
                    counts.adl += 1;
                }
                *summary.by_activity.entry(id.activity.to_string()).or_default() += 1;
                summary.trials.push(id);
            }
        }
    }
    summary.trials.sort();

    let mut performed: HashMap<(SubjectId, ActivityCode), Vec<u8>> = HashMap::new();
    for id in &summary.trials {
        performed
            .entry((id.subject.clone(), id.activity))
            .or_default()
            .push(id.repetition);
    }
    let mut missing = Vec::new();
    for ((subject, activity), reps) in &performed {
        for r in 1..=activity.expected_repetitions() {
            if !reps.contains(&r) {
                missing.push(format!("{activity}_{subject}_R{r:02}"));
            }
        }
    }
    missing.sort();
    summary.missing = missing;

    if summary.total() == 0 {
        summary.warnings.push(format!("no trials found under {}", root.display()));
    }
    if !summary.missing.is_empty() {
        summary
            .warnings
            .push(format!("{} expected repetitions missing", summary.missing.len()));
    }
    Ok(summary)
}
