//! Exam manifests, report label extraction, exclusion of unlabeled exams and
//! the temporal patient-level split.

pub mod pgm;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthgen::SyntheticExam;
use crate::types::{BiRads, DensityClass, ViewImage, ViewKind};

pub use pgm::{load_view, save_view, PgmError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("report mentions conflicting density classes {first} and {second}")]
    AmbiguousDensity {
        first: DensityClass,
        second: DensityClass,
    },
    #[error("exam {exam_id}: {source}")]
    Exam {
        exam_id: String,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("duplicate exam id {0}")]
    DuplicateExam(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("invalid split fractions {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error("split file: {0}")]
    SplitSyntax(String),
    #[error("unknown exam id {0}")]
    UnknownExam(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Pgm(#[from] PgmError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Finds the canonical density phrase in a report, case-insensitively.
pub fn parse_report(text: &str) -> Result<Option<DensityClass>, CorpusError> {
    let lower = text.to_lowercase();
    let mut found: Option<DensityClass> = None;
    for class in DensityClass::ALL {
        if lower.contains(class.phrase()) {
            match found {
                None => found = Some(class),
                Some(first) => {
                    return Err(CorpusError::AmbiguousDensity {
                        first,
                        second: class,
                    })
                }
            }
        }
    }
    Ok(found)
}

/// Reads the overall assessment from a `BI-RADS <n>` mention.
pub fn parse_birads(text: &str) -> Option<BiRads> {
    let lower = text.to_lowercase();
    let mut rest = lower.as_str();
    while let Some(pos) = rest.find("bi-rads") {
        rest = &rest[pos + "bi-rads".len()..];
        let digits = rest.trim_start_matches([' ', ':']);
        if let Some(d) = digits.chars().next().and_then(|c| c.to_digit(10)) {
            if let Ok(b) = BiRads::new(d as u8) {
                return Some(b);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewPaths {
    #[serde(rename = "L-CC")]
    pub left_cc: String,
    #[serde(rename = "R-CC")]
    pub right_cc: String,
    #[serde(rename = "L-MLO")]
    pub left_mlo: String,
    #[serde(rename = "R-MLO")]
    pub right_mlo: String,
}

impl ViewPaths {
    pub fn get(&self, view: ViewKind) -> &str {
        match view {
            ViewKind::LeftCc => &self.left_cc,
            ViewKind::RightCc => &self.right_cc,
            ViewKind::LeftMlo => &self.left_mlo,
            ViewKind::RightMlo => &self.right_mlo,
        }
    }

    /// Conventional layout `images/<exam>_<view>.pgm`.
    pub fn conventional(exam_id: &str) -> Self {
        let p = |v: ViewKind| format!("images/{exam_id}_{}.pgm", v.label());
        Self {
            left_cc: p(ViewKind::LeftCc),
            right_cc: p(ViewKind::RightCc),
            left_mlo: p(ViewKind::LeftMlo),
            right_mlo: p(ViewKind::RightMlo),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub exam_id: String,
    pub patient_id: String,
    pub date: NaiveDate,
    pub views: ViewPaths,
    pub report: String,
}

impl ExamRecord {
    pub fn from_exam(exam: &SyntheticExam) -> Self {
        Self {
            exam_id: exam.exam_id.clone(),
            patient_id: exam.patient_id.clone(),
            date: exam.date,
            views: ViewPaths::conventional(&exam.exam_id),
            report: exam.report.clone(),
        }
    }
}

/// Labels extracted from the report text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedLabels {
    pub density: Option<DensityClass>,
    pub birads: Option<BiRads>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<ExamRecord>,
    labels: BTreeMap<String, ExtractedLabels>,
}

impl Manifest {
    pub fn new(records: Vec<ExamRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.exam_id.as_str()) {
                return Err(CorpusError::DuplicateExam(r.exam_id.clone()));
            }
        }
        Ok(Self {
            records,
            labels: BTreeMap::new(),
        })
    }

    pub fn from_exams(exams: &[SyntheticExam]) -> Result<Self, CorpusError> {
        Self::new(exams.iter().map(ExamRecord::from_exam).collect())
    }

    pub fn records(&self) -> &[ExamRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, exam_id: &str) -> Option<&ExamRecord> {
        self.records.iter().find(|r| r.exam_id == exam_id)
    }

    /// Parses every report once and caches the result.
    pub fn extract_labels(&mut self) -> Result<(), CorpusError> {
        for r in &self.records {
            if self.labels.contains_key(&r.exam_id) {
                continue;
            }
            let density = parse_report(&r.report).map_err(|e| CorpusError::Exam {
                exam_id: r.exam_id.clone(),
                source: Box::new(e),
            })?;
            self.labels.insert(
                r.exam_id.clone(),
                ExtractedLabels {
                    density,
                    birads: parse_birads(&r.report),
                },
            );
        }
        Ok(())
    }

    pub fn labels(&self, exam_id: &str) -> Option<ExtractedLabels> {
        self.labels.get(exam_id).copied()
    }

    pub fn density(&self, exam_id: &str) -> Option<DensityClass> {
        self.labels(exam_id).and_then(|l| l.density)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::parse_jsonl(std::io::BufReader::new(file), path)
    }

    fn parse_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExamRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::ManifestSyntax {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(io_err(path))
    }

    /// Loads the four views of an exam relative to `root`.
    pub fn load_views(&self, root: &Path, exam_id: &str) -> Result<[ViewImage; 4], CorpusError> {
        let rec = self
            .record(exam_id)
            .ok_or_else(|| CorpusError::UnknownExam(exam_id.to_string()))?;
        let mut views = Vec::with_capacity(4);
        for v in ViewKind::ALL {
            let path: PathBuf = root.join(rec.views.get(v));
            views.push(load_view(&path, v)?);
        }
        Ok(views.try_into().expect("four views"))
    }
}

/// Drops exams whose report carries no density phrase. Labels are extracted
/// first if needed.
pub fn apply_exclusion(manifest: &Manifest) -> Result<(Manifest, usize), CorpusError> {
    let mut labeled = manifest.clone();
    labeled.extract_labels()?;
    let before = labeled.records.len();
    let Manifest { records, labels } = labeled;
    let records: Vec<ExamRecord> = records
        .into_iter()
        .filter(|r| labels.get(&r.exam_id).is_some_and(|l| l.density.is_some()))
        .collect();
    let kept: BTreeSet<&str> = records.iter().map(|r| r.exam_id.as_str()).collect();
    let labels = labels
        .iter()
        .filter(|(k, _)| kept.contains(k.as_str()))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    let excluded = before - records.len();
    Ok((Manifest { records, labels }, excluded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions(pub [f64; 3]);

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions([0.8, 0.1, 0.1])
    }
}

impl SplitFractions {
    /// Cumulative-floor partition sizes for `n` patients.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3], CorpusError> {
        let f = self.0;
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x))
            || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(CorpusError::InvalidFractions(f));
        }
        // Tolerance absorbs binary representation error of decimal fractions.
        let boundary = |cum: f64| ((cum * n as f64) + 1e-9).floor() as usize;
        let b1 = boundary(f[0]).min(n);
        let b2 = boundary(f[0] + f[1]).clamp(b1, n);
        Ok([b1, b2 - b1, n - b2])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestExam {
    pub patient_id: String,
    pub exam_id: String,
}

/// Patient-level partition. Test patients keep only their latest exam.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<TestExam>,
}

impl SplitAssignment {
    pub fn partition_of(&self, patient_id: &str) -> Option<Partition> {
        if self.train.iter().any(|p| p == patient_id) {
            Some(Partition::Train)
        } else if self.validation.iter().any(|p| p == patient_id) {
            Some(Partition::Validation)
        } else if self.test.iter().any(|t| t.patient_id == patient_id) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn patient_count(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Exam ids of a partition, sorted. Train and validation keep every exam
    /// of their patients.
    pub fn exam_ids(&self, manifest: &Manifest, partition: Partition) -> Vec<String> {
        let mut ids: Vec<String> = match partition {
            Partition::Test => self.test.iter().map(|t| t.exam_id.clone()).collect(),
            _ => {
                let patients: HashSet<&str> = match partition {
                    Partition::Train => self.train.iter().map(String::as_str).collect(),
                    _ => self.validation.iter().map(String::as_str).collect(),
                };
                manifest
                    .records()
                    .iter()
                    .filter(|r| patients.contains(r.patient_id.as_str()))
                    .map(|r| r.exam_id.clone())
                    .collect()
            }
        };
        ids.sort();
        ids
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(text).map_err(|e| CorpusError::SplitSyntax(e.to_string()))
    }
}

/// Sorts patients by the date of their latest exam (ties by patient id) and
/// cuts at cumulative floors of the fractions.
pub fn temporal_split(
    manifest: &Manifest,
    fractions: SplitFractions,
) -> Result<SplitAssignment, CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    // patient -> (latest date, exam id of the latest exam)
    let mut latest: BTreeMap<&str, (NaiveDate, &str)> = BTreeMap::new();
    for r in manifest.records() {
        let candidate = (r.date, r.exam_id.as_str());
        latest
            .entry(r.patient_id.as_str())
            .and_modify(|cur| {
                if candidate > *cur {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }
    let mut order: Vec<(&str, NaiveDate, &str)> =
        latest.into_iter().map(|(p, (d, e))| (p, d, e)).collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let [n_train, n_val, _] = fractions.sizes(order.len())?;
    let (train, rest) = order.split_at(n_train);
    let (validation, test) = rest.split_at(n_val);
    Ok(SplitAssignment {
        train: train.iter().map(|p| p.0.to_string()).collect(),
        validation: validation.iter().map(|p| p.0.to_string()).collect(),
        test: test
            .iter()
            .map(|p| TestExam {
                patient_id: p.0.to_string(),
                exam_id: p.2.to_string(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(exam: &str, patient: &str, date: &str, report: &str) -> ExamRecord {
        ExamRecord {
            exam_id: exam.into(),
            patient_id: patient.into(),
            date: date.parse().unwrap(),
            views: ViewPaths::conventional(exam),
            report: report.into(),
        }
    }

    #[test]
    fn parses_each_phrase() {
        assert_eq!(
            parse_report("...The breast tissue is heterogeneously dense...").unwrap(),
            Some(DensityClass::HeterogeneouslyDense)
        );
        assert_eq!(
            parse_report("BREASTS ARE ALMOST ENTIRELY FATTY.").unwrap(),
            Some(DensityClass::AlmostEntirelyFatty)
        );
        assert_eq!(parse_report("...unremarkable exam...").unwrap(), None);
    }

    #[test]
    fn conflicting_phrases_are_ambiguous() {
        let err = parse_report("extremely dense here, almost entirely fatty there").unwrap_err();
        match err {
            CorpusError::AmbiguousDensity { first, second } => {
                assert_eq!(first, DensityClass::AlmostEntirelyFatty);
                assert_eq!(second, DensityClass::ExtremelyDense);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn birads_extraction() {
        assert_eq!(
            parse_birads("IMPRESSION: BI-RADS 0 - incomplete"),
            BiRads::new(0).ok()
        );
        assert_eq!(parse_birads("bi-rads: 2"), BiRads::new(2).ok());
        assert_eq!(parse_birads("BI-RADS 4"), None);
        assert_eq!(parse_birads("no assessment"), None);
    }

    #[test]
    fn exclusion_counts() {
        let m = Manifest::new(vec![
            record("e1", "p1", "2010-01-01", "extremely dense"),
            record("e2", "p1", "2011-01-01", "nothing"),
            record("e3", "p2", "2011-01-01", "heterogeneously dense"),
        ])
        .unwrap();
        let (kept, excluded) = apply_exclusion(&m).unwrap();
        assert_eq!(excluded, 1);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept.density("e3"), Some(DensityClass::HeterogeneouslyDense));

        let all_missing = Manifest::new(vec![record("e1", "p1", "2010-01-01", "n/a")]).unwrap();
        let (kept, excluded) = apply_exclusion(&all_missing).unwrap();
        assert!(kept.is_empty());
        assert_eq!(excluded, 1);
    }

    #[test]
    fn duplicate_exam_ids_rejected() {
        let err = Manifest::new(vec![
            record("e1", "p1", "2010-01-01", ""),
            record("e1", "p2", "2010-01-01", ""),
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateExam(_)));
    }

    #[test]
    fn ten_patients_one_per_year() {
        let recs = (0..10)
            .map(|i| {
                record(
                    &format!("e{i}"),
                    &format!("p{i}"),
                    &format!("{}-06-01", 2010 + i),
                    "",
                )
            })
            .collect();
        let split =
            temporal_split(&Manifest::new(recs).unwrap(), SplitFractions::default()).unwrap();
        assert_eq!(
            split.train,
            (0..8).map(|i| format!("p{i}")).collect::<Vec<_>>()
        );
        assert_eq!(split.validation, vec!["p8"]);
        assert_eq!(split.test[0].patient_id, "p9");
    }

    #[test]
    fn test_patient_keeps_latest_exam() {
        let mut recs: Vec<ExamRecord> = (0..9)
            .map(|i| record(&format!("a{i}"), &format!("p{i}"), "2010-01-01", ""))
            .collect();
        recs.push(record("late1", "z", "2015-01-01", ""));
        recs.push(record("late3", "z", "2019-01-01", ""));
        recs.push(record("late2", "z", "2017-01-01", ""));
        let m = Manifest::new(recs).unwrap();
        let split = temporal_split(&m, SplitFractions::default()).unwrap();
        assert_eq!(
            split.test,
            vec![TestExam {
                patient_id: "z".into(),
                exam_id: "late3".into()
            }]
        );
        assert_eq!(split.exam_ids(&m, Partition::Test), vec!["late3"]);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        assert!(matches!(
            temporal_split(&Manifest::default(), SplitFractions::default()),
            Err(CorpusError::EmptyManifest)
        ));
    }

    #[test]
    fn floor_sizes() {
        let f = SplitFractions::default();
        for n in 0..500usize {
            let [a, b, c] = f.sizes(n).unwrap();
            assert_eq!(a, n * 8 / 10);
            assert_eq!(a + b, n * 9 / 10);
            assert_eq!(a + b + c, n);
        }
        assert!(SplitFractions([0.5, 0.5, 0.5]).sizes(3).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let m = Manifest::new(vec![record(
            "e1",
            "p1",
            "2010-01-31",
            "text with \"quotes\"",
        )])
        .unwrap();
        let text = m.to_jsonl();
        assert!(text.contains(r#""date":"2010-01-31""#));
        assert!(text.contains(r#""L-CC":"images/e1_L-CC.pgm""#));
        let back = Manifest::parse_jsonl(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn manifest_requires_all_views() {
        let line = r#"{"exam_id":"e","patient_id":"p","date":"2010-01-01","views":{"L-CC":"a","R-CC":"b","L-MLO":"c"},"report":""}"#;
        let err = Manifest::parse_jsonl(line.as_bytes(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, CorpusError::ManifestSyntax { line: 1, .. }));
    }
}
