//! CSV ingestion of labels, predictions and features with exhaustive validation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::survival::SurvivalRecord;

/// One validation problem, located by file and 1-based line number (header is line 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestIssue {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for IngestIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

/// Every problem found while reading and aligning inputs.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct IngestError {
    pub issues: Vec<IngestIssue>,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} input problem(s):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

impl IngestError {
    fn single(file: &str, line: usize, message: impl Into<String>) -> Self {
        Self { issues: vec![IngestIssue { file: file.to_string(), line, message: message.into() }] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    Risk,
    HazardLogits,
    ExplicitCurve,
}

impl PredictionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PredictionKind::Risk => "risk",
            PredictionKind::HazardLogits => "hazard_logits",
            PredictionKind::ExplicitCurve => "explicit_curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Risk(f64),
    Logits([f64; 4]),
    Curve { grid: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub patient_id: String,
    pub fold: u32,
    pub payload: Payload,
}

/// Out-of-fold model outputs for one model, all folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPredictions {
    pub model_name: String,
    pub kind: PredictionKind,
    pub rows: Vec<PredictionRow>,
}

impl FoldPredictions {
    pub fn folds(&self) -> Vec<u32> {
        let mut f: Vec<u32> = self.rows.iter().map(|r| r.fold).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Patient-by-feature matrix; rows align with `patient_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub patient_ids: Vec<String>,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    /// Rows reordered to follow `ids`; `None` if any id is missing.
    pub fn rows_for(&self, ids: &[&str]) -> Option<Vec<Vec<f64>>> {
        let pos: HashMap<&str, usize> = self.patient_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        ids.iter().map(|id| pos.get(id).map(|&i| self.rows[i].clone())).collect()
    }
}

/// Labels plus one model's aligned predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub dataset: String,
    pub records: Vec<SurvivalRecord>,
    pub predictions: FoldPredictions,
}

fn file_name(path: &Path) -> String {
    path.display().to_string()
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::single(&file_name(path), 0, format!("cannot open: {e}")))
}

fn headers(rdr: &mut csv::Reader<std::fs::File>, file: &str) -> Result<Vec<String>, IngestError> {
    rdr.headers()
        .map(|h| h.iter().map(str::to_string).collect())
        .map_err(|e| IngestError::single(file, 1, format!("unreadable header: {e}")))
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

fn parse_event(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads `patient_id,time,event,fold`.
pub fn read_labels(path: &Path) -> Result<Vec<SurvivalRecord>, IngestError> {
    let file = file_name(path);
    let mut rdr = reader(path)?;
    let h = headers(&mut rdr, &file)?;
    if h != ["patient_id", "time", "event", "fold"] {
        return Err(IngestError::single(&file, 1, format!("expected header patient_id,time,event,fold, got {}", h.join(","))));
    }
    let mut issues = Vec::new();
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let mut issue = |m: String| issues.push(IngestIssue { file: file.clone(), line, message: m });
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issue(format!("malformed row: {e}"));
                continue;
            }
        };
        let id = row[0].to_string();
        if id.is_empty() {
            issue("empty patient_id".into());
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            issue(format!("duplicate patient_id '{id}' (first seen on line {first})"));
        }
        let time = parse_f64(&row[1]);
        match time {
            Some(t) if t.is_finite() && t >= 0.0 => {}
            Some(t) if t.is_nan() => issue(format!("NaN time for '{id}'")),
            Some(t) if t < 0.0 => issue(format!("negative time {t} for '{id}'")),
            Some(t) => issue(format!("non-finite time {t} for '{id}'")),
            None => issue(format!("unparsable time '{}' for '{id}'", &row[1])),
        }
        let event = parse_event(&row[2]);
        if event.is_none() {
            issue(format!("event must be 0/1/true/false, got '{}'", &row[2]));
        }
        let fold = row[3].parse::<u32>().ok();
        if fold.is_none() {
            issue(format!("fold must be a nonnegative integer, got '{}'", &row[3]));
        }
        if let (Some(time), Some(event), Some(fold)) = (time, event, fold) {
            if time.is_finite() && time >= 0.0 {
                out.push(SurvivalRecord { patient_id: id, time, event, fold });
            }
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(IngestError { issues })
    }
}

fn detect_kind(h: &[String]) -> Result<PredictionKind, String> {
    if h.len() < 3 || h[0] != "patient_id" || h[1] != "fold" {
        return Err(format!("expected header to start with patient_id,fold, got {}", h.join(",")));
    }
    let rest = &h[2..];
    if rest == ["risk"] {
        return Ok(PredictionKind::Risk);
    }
    if rest.iter().any(|c| c.starts_with("logit")) {
        let expected: Vec<String> = (0..4).map(|i| format!("logit{i}")).collect();
        if rest != expected.as_slice() {
            return Err(format!("expected 4 logit columns logit0..logit3, got {}", rest.len()));
        }
        return Ok(PredictionKind::HazardLogits);
    }
    let pairs = rest.len() / 2;
    let expected: Vec<String> = (0..pairs).flat_map(|i| [format!("t{i}"), format!("s{i}")]).collect();
    if rest.len() % 2 == 0 && pairs > 0 && rest == expected.as_slice() {
        return Ok(PredictionKind::ExplicitCurve);
    }
    Err(format!("unrecognised prediction columns {}", rest.join(",")))
}

/// Reads a predictions file; its kind is inferred from the header.
pub fn read_predictions(path: &Path, model_name: &str) -> Result<FoldPredictions, IngestError> {
    let file = file_name(path);
    let mut rdr = reader(path)?;
    let h = headers(&mut rdr, &file)?;
    let kind = detect_kind(&h).map_err(|m| IngestError::single(&file, 1, m))?;
    let mut issues = Vec::new();
    let mut rows = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let mut issue = |m: String| issues.push(IngestIssue { file: file.clone(), line, message: m });
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issue(format!("malformed row: {e}"));
                continue;
            }
        };
        let id = row[0].to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            issue(format!("duplicate patient_id '{id}' (first seen on line {first})"));
        }
        let fold = row[1].parse::<u32>().ok();
        if fold.is_none() {
            issue(format!("fold must be a nonnegative integer, got '{}'", &row[1]));
        }
        let mut nums = Vec::new();
        let mut ok = true;
        let cells: Vec<&str> = row.iter().skip(2).collect();
        // explicit curves may end with empty (t, s) pairs
        let used = if kind == PredictionKind::ExplicitCurve {
            let mut n = cells.len();
            while n >= 2 && cells[n - 1].is_empty() && cells[n - 2].is_empty() {
                n -= 2;
            }
            n
        } else {
            cells.len()
        };
        for (c, cell) in cells[..used].iter().enumerate() {
            match parse_f64(cell) {
                Some(v) if v.is_finite() => nums.push(v),
                _ => {
                    issue(format!("column {} must be a finite number, got '{cell}'", h[c + 2]));
                    ok = false;
                }
            }
        }
        if !ok || fold.is_none() {
            continue;
        }
        let payload = match kind {
            PredictionKind::Risk => Payload::Risk(nums[0]),
            PredictionKind::HazardLogits => Payload::Logits([nums[0], nums[1], nums[2], nums[3]]),
            PredictionKind::ExplicitCurve => {
                let grid: Vec<f64> = nums.iter().step_by(2).copied().collect();
                let probs: Vec<f64> = nums.iter().skip(1).step_by(2).copied().collect();
                if grid.is_empty() {
                    issue("explicit curve has no points".into());
                    continue;
                }
                if grid.iter().any(|&t| t < 0.0) || grid.windows(2).any(|w| w[0] >= w[1]) {
                    issue("curve times must be nonnegative and strictly increasing".into());
                    continue;
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    issue("curve survival values must lie in [0, 1]".into());
                    continue;
                }
                Payload::Curve { grid, probs }
            }
        };
        rows.push(PredictionRow { patient_id: id, fold: fold.unwrap(), payload });
    }
    if issues.is_empty() {
        Ok(FoldPredictions { model_name: model_name.to_string(), kind, rows })
    } else {
        Err(IngestError { issues })
    }
}

/// Reads `patient_id,f0..fK`.
pub fn read_features(path: &Path) -> Result<FeatureMatrix, IngestError> {
    let file = file_name(path);
    let mut rdr = reader(path)?;
    let h = headers(&mut rdr, &file)?;
    if h.len() < 2 || h[0] != "patient_id" {
        return Err(IngestError::single(&file, 1, "expected header patient_id followed by feature columns"));
    }
    let names = h[1..].to_vec();
    let mut issues = Vec::new();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (k, row) in rdr.records().enumerate() {
        let line = k + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issues.push(IngestIssue { file: file.clone(), line, message: format!("malformed row: {e}") });
                continue;
            }
        };
        let id = row[0].to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            issues.push(IngestIssue { file: file.clone(), line, message: format!("duplicate patient_id '{id}' (first seen on line {first})") });
        }
        let mut vals = Vec::with_capacity(names.len());
        for (c, cell) in row.iter().skip(1).enumerate() {
            match parse_f64(cell) {
                Some(v) if v.is_finite() => vals.push(v),
                _ => issues.push(IngestIssue {
                    file: file.clone(),
                    line,
                    message: format!("feature {} must be a finite number, got '{cell}'", names[c]),
                }),
            }
        }
        if vals.len() == names.len() {
            ids.push(id);
            rows.push(vals);
        }
    }
    if issues.is_empty() {
        Ok(FeatureMatrix { patient_ids: ids, names, rows })
    } else {
        Err(IngestError { issues })
    }
}

/// Checks that every prediction names a known patient in the same fold.
pub fn align(
    dataset: &str,
    records: Vec<SurvivalRecord>,
    predictions: FoldPredictions,
    labels_file: &str,
    predictions_file: &str,
) -> Result<DatasetBundle, IngestError> {
    let by_id: BTreeMap<&str, &SurvivalRecord> = records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let mut issues = Vec::new();
    for (k, row) in predictions.rows.iter().enumerate() {
        let line = k + 2;
        match by_id.get(row.patient_id.as_str()) {
            None => issues.push(IngestIssue {
                file: predictions_file.to_string(),
                line,
                message: format!("unknown patient_id '{}' (not in {labels_file})", row.patient_id),
            }),
            Some(r) if r.fold != row.fold => issues.push(IngestIssue {
                file: predictions_file.to_string(),
                line,
                message: format!("fold mismatch for '{}': predictions say {}, labels say {}", row.patient_id, row.fold, r.fold),
            }),
            Some(_) => {}
        }
    }
    if issues.is_empty() {
        Ok(DatasetBundle { dataset: dataset.to_string(), records, predictions })
    } else {
        Err(IngestError { issues })
    }
}

/// Reads labels and predictions and aligns them, collecting every problem found.
pub fn ingest(labels_path: &Path, predictions_path: &Path, model: &str, dataset: &str) -> Result<DatasetBundle, IngestError> {
    let labels = read_labels(labels_path);
    let preds = read_predictions(predictions_path, model);
    match (labels, preds) {
        (Ok(l), Ok(p)) => align(dataset, l, p, &file_name(labels_path), &file_name(predictions_path)),
        (Err(a), Err(b)) => Err(IngestError { issues: a.issues.into_iter().chain(b.issues).collect() }),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const LABELS: &str = "patient_id,time,event,fold\na,1.5,1,0\nb,2,0,0\nc,3,true,1\n";

    #[test]
    fn aligned_inputs_load() {
        let d = tempfile::tempdir().unwrap();
        let l = write(&d, "l.csv", LABELS);
        let p = write(&d, "p.csv", "patient_id,fold,risk\na,0,0.1\nb,0,0.2\nc,1,-1\n");
        let b = ingest(&l, &p, "m", "ds").unwrap();
        assert_eq!(b.records.len(), 3);
        assert_eq!(b.predictions.rows.len(), 3);
        assert_eq!(b.predictions.kind, PredictionKind::Risk);
        assert!(b.records[2].event);
    }

    #[test]
    fn unknown_id_reported_with_line() {
        let d = tempfile::tempdir().unwrap();
        let l = write(&d, "l.csv", LABELS);
        let p = write(&d, "p.csv", "patient_id,fold,risk\na,0,0.1\nzz,0,0.2\nc,0,1\n");
        let e = ingest(&l, &p, "m", "ds").unwrap_err();
        assert_eq!(e.issues.len(), 2);
        assert_eq!(e.issues[0].line, 3);
        assert!(e.issues[0].message.contains("zz"));
        assert!(e.issues[1].message.contains("fold mismatch"));
    }

    #[test]
    fn label_problems_are_exhaustive() {
        let d = tempfile::tempdir().unwrap();
        let l = write(&d, "l.csv", "patient_id,time,event,fold\na,NaN,1,0\nb,-2,0,0\na,1,2,x\n");
        let e = read_labels(&l).unwrap_err();
        let msgs: Vec<_> = e.issues.iter().map(|i| (i.line, i.message.clone())).collect();
        assert_eq!(msgs.len(), 5, "{msgs:?}");
        assert!(msgs[0].1.contains("NaN"));
        assert!(msgs[1].1.contains("negative"));
        assert!(msgs.iter().any(|m| m.0 == 4 && m.1.contains("duplicate")));
    }

    #[test]
    fn logit_schema_checked() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "p.csv", "patient_id,fold,logit0,logit1,logit2\na,0,1,2,3\n");
        let e = read_predictions(&p, "m").unwrap_err();
        assert!(e.issues[0].message.contains("expected 4 logit columns"));
        let p = write(&d, "q.csv", "patient_id,fold,logit0,logit1,logit2,logit3\na,0,1,2,3,4\n");
        assert_eq!(read_predictions(&p, "m").unwrap().kind, PredictionKind::HazardLogits);
    }

    #[test]
    fn explicit_curves_allow_ragged_tails() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "p.csv", "patient_id,fold,t0,s0,t1,s1\na,0,1,0.9,2,0.5\nb,0,1,0.8,,\n");
        let f = read_predictions(&p, "m").unwrap();
        assert_eq!(f.kind, PredictionKind::ExplicitCurve);
        assert_eq!(f.rows[1].payload, Payload::Curve { grid: vec![1.0], probs: vec![0.8] });
    }

    #[test]
    fn features_load() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "f.csv", "patient_id,f0,f1\na,1,2\nb,3,4\n");
        let f = read_features(&p).unwrap();
        assert_eq!(f.rows_for(&["b", "a"]).unwrap(), vec![vec![3.0, 4.0], vec![1.0, 2.0]]);
        assert!(f.rows_for(&["c"]).is_none());
    }
}
