//! Classification metrics and inter-rater agreement: top-k and superclass
//! accuracy, ROC curves and AUC, one-vs-rest macAUC, confusion matrices,
//! Cohen's kappa, and reader-ranking ingestion.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("misaligned inputs: {left} vs {right} entries")]
    Misaligned { left: usize, right: usize },
    #[error("k = {k} outside 1..={classes}")]
    KOutOfRange { k: usize, classes: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("probability vector of length {got}, expected {expected}")]
    ProbabilityLength { expected: usize, got: usize },
    #[error("undefined AUC: truth vector has a single class")]
    SingleClass,
    #[error("undefined AUC: class {0} never occurs in the ground truth")]
    AbsentClass(usize),
    #[error("degenerate agreement: chance agreement is 1")]
    DegenerateAgreement,
    #[error("degenerate agreement between raters {0} and {1}")]
    DegeneratePair(String, String),
    #[error("invalid ranking {0:?}: not a permutation of the classes")]
    InvalidRanking(Vec<usize>),
    #[error("rankings CSV: {0}")]
    RankingsCsv(String),
    #[error("ROC CSV: {0}")]
    RocCsv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_aligned(left: usize, right: usize) -> Result<(), EvalError> {
    if left != right {
        return Err(EvalError::Misaligned { left, right });
    }
    if left == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn check_probabilities(probs: &[Vec<f64>], truths: &[usize]) -> Result<usize, EvalError> {
    check_aligned(probs.len(), truths.len())?;
    let classes = probs[0].len();
    for p in probs {
        if p.len() != classes {
            return Err(EvalError::ProbabilityLength {
                expected: classes,
                got: p.len(),
            });
        }
    }
    for &t in truths {
        if t >= classes {
            return Err(EvalError::LabelOutOfRange { label: t, classes });
        }
    }
    Ok(classes)
}

/// Class indices from most to least probable; equal probabilities keep
/// the lower index first.
pub fn ranked_classes(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
    idx
}

pub fn top_k_accuracy(probs: &[Vec<f64>], truths: &[usize], k: usize) -> Result<f64, EvalError> {
    let classes = check_probabilities(probs, truths)?;
    if k == 0 || k > classes {
        return Err(EvalError::KOutOfRange { k, classes });
    }
    let correct = probs
        .iter()
        .zip(truths)
        .filter(|(p, &t)| ranked_classes(p)[..k].contains(&t))
        .count();
    Ok(correct as f64 / truths.len() as f64)
}

/// Dense (classes 2 and 3) versus not dense (0 and 1).
pub fn superclass_of(class: usize) -> usize {
    usize::from(class >= 2)
}

pub fn superclass_accuracy(probs: &[Vec<f64>], truths: &[usize]) -> Result<f64, EvalError> {
    check_probabilities(probs, truths)?;
    let correct = probs
        .iter()
        .zip(truths)
        .filter(|(p, &t)| superclass_of(ranked_classes(p)[0]) == superclass_of(t))
        .count();
    Ok(correct as f64 / truths.len() as f64)
}

pub fn collapse_superclass(labels: &[usize]) -> Result<Vec<usize>, EvalError> {
    labels
        .iter()
        .map(|&l| {
            if l < 4 {
                Ok(superclass_of(l))
            } else {
                Err(EvalError::LabelOutOfRange {
                    label: l,
                    classes: 4,
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From (0, 0) at threshold +∞ to (1, 1) at the lowest score.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweeps the threshold over the distinct scores (a sample is called
/// positive when its score is at least the threshold) and integrates the
/// curve with the trapezoid rule. Ties contribute half credit, so the area
/// equals the Mann-Whitney statistic.
pub fn roc_and_auc(scores: &[f64], truths: &[bool]) -> Result<RocCurve, EvalError> {
    check_aligned(scores.len(), truths.len())?;
    let positives = truths.iter().filter(|&&t| t).count() as u64;
    let negatives = truths.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one positive-negative pair.
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        });
    }
    let auc = doubled_area as f64 / (2.0 * p * n);
    Ok(RocCurve { points, auc })
}

/// One-vs-rest AUC per class, scoring each class by its own probability,
/// and their arithmetic mean.
pub fn mac_auc(probs: &[Vec<f64>], truths: &[usize]) -> Result<(Vec<f64>, f64), EvalError> {
    let curves = one_vs_rest_curves(probs, truths)?;
    let per_class: Vec<f64> = curves.iter().map(|c| c.auc).collect();
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((per_class, mean))
}

pub fn one_vs_rest_curves(
    probs: &[Vec<f64>],
    truths: &[usize],
) -> Result<Vec<RocCurve>, EvalError> {
    let classes = check_probabilities(probs, truths)?;
    (0..classes)
        .map(|c| {
            if !truths.contains(&c) {
                return Err(EvalError::AbsentClass(c));
            }
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let binary: Vec<bool> = truths.iter().map(|&t| t == c).collect();
            roc_and_auc(&scores, &binary)
        })
        .collect()
}

/// `matrix[truth][predicted]` with predictions taken as the top-ranked class.
pub fn confusion_matrix(
    probs: &[Vec<f64>],
    truths: &[usize],
) -> Result<Vec<Vec<usize>>, EvalError> {
    let classes = check_probabilities(probs, truths)?;
    let mut m = vec![vec![0usize; classes]; classes];
    for (p, &t) in probs.iter().zip(truths) {
        m[t][ranked_classes(p)[0]] += 1;
    }
    Ok(m)
}

fn six_significant<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_significant(*v, 6))
}

fn six_significant_vec<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| round_significant(*x, 6)))
}

/// Rounds to `digits` significant decimal digits.
pub fn round_significant(v: f64, digits: usize) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v)
        .parse()
        .expect("formatted float parses")
}

/// Headline metrics for one model on one labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts_per_class: Vec<usize>,
    #[serde(serialize_with = "six_significant")]
    pub top1: f64,
    #[serde(serialize_with = "six_significant")]
    pub top2: f64,
    #[serde(serialize_with = "six_significant")]
    pub top3: f64,
    #[serde(serialize_with = "six_significant")]
    pub superclass_accuracy: f64,
    #[serde(serialize_with = "six_significant_vec")]
    pub per_class_auc: Vec<f64>,
    #[serde(serialize_with = "six_significant")]
    pub mac_auc: f64,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn compute(probs: &[Vec<f64>], truths: &[usize]) -> Result<Self, EvalError> {
        let classes = check_probabilities(probs, truths)?;
        if classes < 3 {
            return Err(EvalError::KOutOfRange { k: 3, classes });
        }
        let mut counts_per_class = vec![0; classes];
        for &t in truths {
            counts_per_class[t] += 1;
        }
        let (per_class_auc, mac) = mac_auc(probs, truths)?;
        Ok(Self {
            counts_per_class,
            top1: top_k_accuracy(probs, truths, 1)?,
            top2: top_k_accuracy(probs, truths, 2)?,
            top3: top_k_accuracy(probs, truths, 3)?,
            superclass_accuracy: superclass_accuracy(probs, truths)?,
            per_class_auc,
            mac_auc: mac,
            confusion: confusion_matrix(probs, truths)?,
        })
    }

    /// Pretty JSON with fixed key order and six significant digits.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Unweighted Cohen's kappa, computed from integer counts.
pub fn cohen_kappa(a: &[usize], b: &[usize], classes: usize) -> Result<f64, EvalError> {
    check_aligned(a.len(), b.len())?;
    let mut ma = vec![0u128; classes];
    let mut mb = vec![0u128; classes];
    let mut agree = 0u128;
    for (&x, &y) in a.iter().zip(b) {
        for l in [x, y] {
            if l >= classes {
                return Err(EvalError::LabelOutOfRange { label: l, classes });
            }
        }
        ma[x] += 1;
        mb[y] += 1;
        agree += u128::from(x == y);
    }
    let n = a.len() as u128;
    let chance: u128 = ma.iter().zip(&mb).map(|(x, y)| x * y).sum();
    if chance == n * n {
        return Err(EvalError::DegenerateAgreement);
    }
    // (p_o - p_e) / (1 - p_e) scaled by n².
    let numerator = (n * agree) as f64 - chance as f64;
    Ok(numerator / (n * n - chance) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaMatrix {
    pub raters: Vec<String>,
    /// Symmetric, with 1.0 on the diagonal.
    pub values: Vec<Vec<f64>>,
}

impl KappaMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.raters.iter().position(|r| r == a)?;
        let j = self.raters.iter().position(|r| r == b)?;
        Some(self.values[i][j])
    }
}

/// Pairwise kappa for every unordered pair of raters, in the given order.
pub fn kappa_matrix(
    raters: &[(String, Vec<usize>)],
    classes: usize,
) -> Result<KappaMatrix, EvalError> {
    let k = raters.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v = cohen_kappa(&raters[i].1, &raters[j].1, classes).map_err(|e| match e {
                EvalError::DegenerateAgreement => {
                    EvalError::DegeneratePair(raters[i].0.clone(), raters[j].0.clone())
                }
                other => other,
            })?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(KappaMatrix {
        raters: raters.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}

/// One reader's ordering of the four density classes for one exam.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderRanking {
    pub reader_id: String,
    pub exam_id: String,
    /// Most to least likely.
    pub ranking: [usize; 4],
}

impl ReaderRanking {
    pub fn new(
        reader_id: impl Into<String>,
        exam_id: impl Into<String>,
        ranking: [usize; 4],
    ) -> Result<Self, EvalError> {
        let mut seen = [false; 4];
        for &c in &ranking {
            if c >= 4 || std::mem::replace(&mut seen[c], true) {
                return Err(EvalError::InvalidRanking(ranking.to_vec()));
            }
        }
        Ok(Self {
            reader_id: reader_id.into(),
            exam_id: exam_id.into(),
            ranking,
        })
    }

    pub fn top(&self) -> usize {
        self.ranking[0]
    }
}

#[derive(Serialize, Deserialize)]
struct RankingRow {
    reader_id: String,
    exam_id: String,
    rank1: usize,
    rank2: usize,
    rank3: usize,
    rank4: usize,
}

pub fn read_rankings_csv<R: Read>(reader: R) -> Result<Vec<ReaderRanking>, EvalError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let expected = ["reader_id", "exam_id", "rank1", "rank2", "rank3", "rank4"];
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::RankingsCsv(e.to_string()))?;
    if headers.iter().ne(expected) {
        return Err(EvalError::RankingsCsv(format!(
            "header must be {}",
            expected.join(",")
        )));
    }
    rdr.deserialize::<RankingRow>()
        .map(|row| {
            let r = row.map_err(|e| EvalError::RankingsCsv(e.to_string()))?;
            ReaderRanking::new(r.reader_id, r.exam_id, [r.rank1, r.rank2, r.rank3, r.rank4])
        })
        .collect()
}

pub fn write_rankings_csv<W: Write>(
    writer: W,
    rankings: &[ReaderRanking],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rankings {
        let [rank1, rank2, rank3, rank4] = r.ranking;
        w.serialize(RankingRow {
            reader_id: r.reader_id.clone(),
            exam_id: r.exam_id.clone(),
            rank1,
            rank2,
            rank3,
            rank4,
        })
        .map_err(|e| EvalError::RankingsCsv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean of one-hot vectors at each reader's top-ranked class.
pub fn average_one_hot(rankings: &[[usize; 4]]) -> Result<[f64; 4], EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = [0usize; 4];
    for r in rankings {
        let checked = ReaderRanking::new("", "", *r)?;
        counts[checked.top()] += 1;
    }
    Ok(counts.map(|c| c as f64 / rankings.len() as f64))
}

/// `threshold,fpr,tpr` rows, then `# auc=<value>`. Values are written in
/// shortest round-trip form, so reading the file back is lossless.
pub fn write_roc_csv<W: Write>(mut writer: W, curve: &RocCurve) -> Result<(), EvalError> {
    writeln!(writer, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(writer, "{:?},{:?},{:?}", p.threshold, p.fpr, p.tpr)?;
    }
    writeln!(writer, "# auc={:?}", curve.auc)?;
    Ok(())
}

pub fn read_roc_csv<R: Read>(mut reader: R) -> Result<RocCurve, EvalError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut lines = text.lines();
    if lines.next() != Some("threshold,fpr,tpr") {
        return Err(EvalError::RocCsv("missing header threshold,fpr,tpr".into()));
    }
    let parse = |s: &str, line: usize| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| EvalError::RocCsv(format!("line {line}: bad number {s:?}")))
    };
    let mut points = Vec::new();
    let mut auc = None;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if let Some(v) = line.strip_prefix("# auc=") {
            auc = Some(parse(v, lineno)?);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if auc.is_some() {
            return Err(EvalError::RocCsv(format!(
                "line {lineno}: data after auc trailer"
            )));
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [t, f, p] = fields[..] else {
            return Err(EvalError::RocCsv(format!(
                "line {lineno}: expected 3 fields"
            )));
        };
        points.push(RocPoint {
            threshold: parse(t, lineno)?,
            fpr: parse(f, lineno)?,
            tpr: parse(p, lineno)?,
        });
    }
    let auc = auc.ok_or_else(|| EvalError::RocCsv("missing # auc= trailer".into()))?;
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top2_includes_second_choice() {
        let p = vec![vec![0.1, 0.5, 0.3, 0.1]];
        assert_eq!(top_k_accuracy(&p, &[2], 2).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&p, &[2], 1).unwrap(), 0.0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(ranked_classes(&[0.25; 4]), vec![0, 1, 2, 3]);
        assert_eq!(ranked_classes(&[0.1, 0.4, 0.4, 0.1]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn top_k_errors() {
        assert!(matches!(top_k_accuracy(&[], &[], 1), Err(EvalError::Empty)));
        assert!(matches!(
            top_k_accuracy(&[vec![0.25; 4]], &[0], 5),
            Err(EvalError::KOutOfRange { k: 5, .. })
        ));
    }

    #[test]
    fn superclass_definition() {
        let argmax3 = vec![0.0, 0.0, 0.1, 0.9];
        let argmax1 = vec![0.0, 0.9, 0.1, 0.0];
        assert_eq!(superclass_accuracy(&[argmax3], &[2]).unwrap(), 1.0);
        assert_eq!(superclass_accuracy(&[argmax1], &[2]).unwrap(), 0.0);
    }

    #[test]
    fn collapse() {
        assert_eq!(
            collapse_superclass(&[0, 1, 2, 3]).unwrap(),
            vec![0, 0, 1, 1]
        );
        assert!(collapse_superclass(&[4]).is_err());
    }

    #[test]
    fn auc_pair_counting_example() {
        let c = roc_and_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(c.auc, 0.75);
        let first = c.points[0];
        let last = *c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(
            roc_and_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true])
                .unwrap()
                .auc,
            1.0
        );
        assert_eq!(
            roc_and_auc(&[0.5; 6], &[true, false, true, false, false, true])
                .unwrap()
                .auc,
            0.5
        );
        assert!(matches!(
            roc_and_auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass)
        ));
    }

    #[test]
    fn mac_auc_one_hot_and_uniform() {
        let truths = [0, 1, 2, 3, 2];
        let one_hot: Vec<Vec<f64>> = truths
            .iter()
            .map(|&t| (0..4).map(|c| f64::from(u8::from(c == t))).collect())
            .collect();
        assert_eq!(mac_auc(&one_hot, &truths).unwrap(), (vec![1.0; 4], 1.0));
        let uniform = vec![vec![0.25; 4]; 5];
        assert_eq!(mac_auc(&uniform, &truths).unwrap().0, vec![0.5; 4]);
    }

    #[test]
    fn mac_auc_names_absent_class() {
        let err = mac_auc(&vec![vec![0.25; 4]; 3], &[0, 1, 3]).unwrap_err();
        assert!(matches!(err, EvalError::AbsentClass(2)));
        assert!(err.to_string().contains("class 2"));
    }

    #[test]
    fn kappa_fixture() {
        assert_eq!(cohen_kappa(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap(), 0.5);
        assert_eq!(cohen_kappa(&[0, 1, 2, 1], &[0, 1, 2, 1], 4).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_kappa_is_error() {
        assert!(matches!(
            cohen_kappa(&[2, 2, 2], &[2, 2, 2], 4),
            Err(EvalError::DegenerateAgreement)
        ));
        // One constant rater alone is fine: p_e < 1.
        assert_eq!(cohen_kappa(&[2, 2, 2, 2], &[2, 1, 2, 2], 4).unwrap(), 0.0);
    }

    #[test]
    fn kappa_matrix_symmetric_with_unit_diagonal() {
        let raters = vec![
            ("L".to_string(), vec![0, 1, 2, 3, 1]),
            ("N".to_string(), vec![0, 1, 2, 3, 1]),
            ("H".to_string(), vec![0, 2, 2, 3, 0]),
        ];
        let m = kappa_matrix(&raters, 4).unwrap();
        assert_eq!(m.get("L", "N"), Some(1.0));
        assert_eq!(m.get("L", "H"), m.get("H", "L"));
        assert_eq!(m.values[2][2], 1.0);
        let err =
            kappa_matrix(&[("S".into(), vec![1, 1]), ("R".into(), vec![1, 1])], 4).unwrap_err();
        assert!(err.to_string().contains("S and R"));
    }

    #[test]
    fn one_hot_averages() {
        assert_eq!(
            average_one_hot(&[[2, 0, 1, 3], [2, 1, 0, 3], [2, 3, 1, 0]]).unwrap(),
            [0.0, 0.0, 1.0, 0.0]
        );
        let avg = average_one_hot(&[[1, 0, 2, 3], [1, 2, 0, 3], [2, 1, 0, 3]]).unwrap();
        assert_eq!(avg, [0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert!(matches!(
            average_one_hot(&[[1, 1, 2, 3]]),
            Err(EvalError::InvalidRanking(_))
        ));
    }

    #[test]
    fn rankings_csv_round_trip() {
        let rows = vec![
            ReaderRanking::new("S", "E0000001", [2, 1, 3, 0]).unwrap(),
            ReaderRanking::new("R", "E0000001", [1, 2, 0, 3]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_rankings_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("reader_id,exam_id,rank1,rank2,rank3,rank4\n"));
        assert_eq!(read_rankings_csv(buf.as_slice()).unwrap(), rows);
        let bad = "reader_id,exam_id,rank1,rank2,rank3,rank4\nS,E1,0,0,1,2\n";
        assert!(matches!(
            read_rankings_csv(bad.as_bytes()),
            Err(EvalError::InvalidRanking(_))
        ));
    }

    #[test]
    fn roc_csv_round_trip() {
        let c = roc_and_auc(&[0.1, 1.0 / 3.0, 0.35, 0.8], &[false, true, true, false]).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\ninf,0.0,0.0\n"));
        assert!(text.trim_end().ends_with(&format!("# auc={:?}", c.auc)));
        assert_eq!(read_roc_csv(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn report_json_uses_six_digits() {
        let probs = vec![
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.1, 0.6, 0.2, 0.1],
            vec![0.1, 0.5, 0.3, 0.1],
            vec![0.1, 0.1, 0.2, 0.6],
            vec![0.2, 0.2, 0.5, 0.1],
            vec![0.1, 0.3, 0.5, 0.1],
        ];
        let truths = [0, 1, 2, 3, 2, 1];
        let r = EvalReport::compute(&probs, &truths).unwrap();
        assert_eq!(r.counts_per_class, vec![1, 2, 2, 1]);
        let trace: usize = (0..4).map(|i| r.confusion[i][i]).sum();
        assert_eq!(trace as f64 / 6.0, r.top1);
        let json = r.to_json();
        assert!(json.contains("\"top1\": 0.666667"), "{json}");
        assert_eq!(round_significant(0.91666666, 6), 0.916667);
        assert_eq!(round_significant(1234567.0, 6), 1234570.0);
    }
}
