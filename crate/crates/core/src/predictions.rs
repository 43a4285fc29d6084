//! Classifier outputs, dataset splits and their on-disk formats.
//!
//! A [`PredictionSet`] holds raw logits per sample together with the true
//! label, the split the sample belongs to and an optional novelty score. It
//! is the input to every evaluation and calibration routine. Files come in
//! two flavours: a flat CSV
//!
//! ```text
//! id,label,group,novelty,logit_0,logit_1,...
//! ```
//!
//! where an empty `novelty` field means "no score" and unlabeled rows carry
//! label `-1`, and a JSON mirror using the same field names.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Tolerance on probability row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Split membership of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTag {
    Train,
    Val,
    FamiliarTest,
    NovelTest,
    Unsup,
}

impl GroupTag {
    pub const ALL: [GroupTag; 5] = [
        GroupTag::Train,
        GroupTag::Val,
        GroupTag::FamiliarTest,
        GroupTag::NovelTest,
        GroupTag::Unsup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupTag::Train => "train",
            GroupTag::Val => "val",
            GroupTag::FamiliarTest => "familiar_test",
            GroupTag::NovelTest => "novel_test",
            GroupTag::Unsup => "unsup",
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupTag::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown group `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Json,
}

impl FileFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => FileFormat::Json,
            _ => FileFormat::Csv,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "json" => Ok(FileFormat::Json),
            _ => Err(Error::invalid(format!("unknown format `{s}`"))),
        }
    }
}

/// Everything about a sample except its logits.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMeta {
    pub id: String,
    pub label: Option<usize>,
    pub group: GroupTag,
    pub novelty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub logits: Vec<f64>,
    /// `None` only for [`GroupTag::Unsup`] rows.
    pub label: Option<usize>,
    pub group: GroupTag,
    pub novelty: Option<f64>,
}

impl PredictionRecord {
    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            id: self.id.clone(),
            label: self.label,
            group: self.group,
            novelty: self.novelty,
        }
    }

    fn validate(&self, class_count: usize) -> std::result::Result<(), String> {
        if self.logits.len() != class_count {
            return Err(format!(
                "expected {class_count} logits, found {}",
                self.logits.len()
            ));
        }
        if self.logits.iter().any(|z| !z.is_finite()) {
            return Err("non-finite logit".into());
        }
        match (self.group, self.label) {
            (GroupTag::Unsup, Some(_)) => return Err("unsup record carries a label".into()),
            (GroupTag::Unsup, None) => {}
            (_, None) => return Err(format!("{} record has no label", self.group)),
            (_, Some(y)) if y >= class_count => return Err("label out of range".into()),
            _ => {}
        }
        if matches!(self.novelty, Some(v) if !v.is_finite()) {
            return Err("non-finite novelty".into());
        }
        Ok(())
    }
}

/// Validated, immutable collection of prediction records sharing a class count.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    class_count: usize,
    records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn new(class_count: usize, records: Vec<PredictionRecord>) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::invalid("class count must be at least 2"));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate(class_count)
                .map_err(|m| Error::invalid(format!("record `{}`: {m}", r.id)))?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate id `{}`", r.id)));
            }
        }
        Ok(PredictionSet {
            class_count,
            records,
        })
    }

    pub fn empty(class_count: usize) -> Result<Self> {
        Self::new(class_count, Vec::new())
    }

    /// Pairs each row of `logits` with its metadata.
    pub fn from_logits(logits: &Array2<f64>, meta: &[RecordMeta]) -> Result<Self> {
        if logits.nrows() != meta.len() {
            return Err(Error::shape(format!(
                "{} logit rows for {} records",
                logits.nrows(),
                meta.len()
            )));
        }
        let records = logits
            .outer_iter()
            .zip(meta)
            .map(|(row, m)| PredictionRecord {
                id: m.id.clone(),
                logits: row.to_vec(),
                label: m.label,
                group: m.group,
                novelty: m.novelty,
            })
            .collect();
        Self::new(logits.ncols(), records)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Order-preserving subset of the records carrying `tag`.
    pub fn filter_by_group(&self, tag: GroupTag) -> PredictionSet {
        self.filter(|r| r.group == tag)
    }

    pub fn filter(&self, mut keep: impl FnMut(&PredictionRecord) -> bool) -> PredictionSet {
        PredictionSet {
            class_count: self.class_count,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Groups present in the set, in [`GroupTag::ALL`] order.
    pub fn groups(&self) -> Vec<GroupTag> {
        GroupTag::ALL
            .into_iter()
            .filter(|g| self.records.iter().any(|r| r.group == *g))
            .collect()
    }

    /// Replaces every record's novelty score.
    pub fn with_novelty(&self, scores: &[f64]) -> Result<PredictionSet> {
        if scores.len() != self.len() {
            return Err(Error::shape(format!(
                "{} novelty scores for {} records",
                scores.len(),
                self.len()
            )));
        }
        let records = self
            .records
            .iter()
            .zip(scores)
            .map(|(r, &s)| PredictionRecord {
                novelty: Some(s),
                ..r.clone()
            })
            .collect();
        PredictionSet::new(self.class_count, records)
    }

    /// Row-wise softmax of the logits (temperature 1).
    pub fn to_probabilities(&self) -> ProbabilitySet {
        self.to_probabilities_with(|_| 1.0)
    }

    /// Row-wise softmax where row `i` is divided by `temperature(record_i)`.
    pub(crate) fn to_probabilities_with(
        &self,
        mut temperature: impl FnMut(&PredictionRecord) -> f64,
    ) -> ProbabilitySet {
        let c = self.class_count;
        let mut rows = Array2::zeros((self.len(), c));
        for (mut row, r) in rows.outer_iter_mut().zip(&self.records) {
            let t = temperature(r);
            math::softmax_into(&r.logits, t, row.as_slice_mut().expect("row-major"));
        }
        ProbabilitySet {
            ids: self.ids(),
            rows,
            labels: self.records.iter().map(|r| r.label).collect(),
            groups: self.records.iter().map(|r| r.group).collect(),
        }
    }

    pub fn logits_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.class_count));
        for (mut row, r) in m.outer_iter_mut().zip(&self.records) {
            row.assign(&ndarray::ArrayView1::from(&r.logits));
        }
        m
    }

    pub fn save(&self, path: &Path, format: FileFormat) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        match format {
            FileFormat::Csv => self.write_csv(&mut out)?,
            FileFormat::Json => serde_json::to_writer_pretty(&mut out, &self.to_document())?,
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, format: FileFormat) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        match format {
            FileFormat::Csv => read_csv(reader, path),
            FileFormat::Json => {
                let doc: PredictionDocument = serde_json::from_reader(reader)?;
                doc.into_set(path)
            }
        }
    }

    fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "id".to_string(),
            "label".into(),
            "group".into(),
            "novelty".into(),
        ];
        header.extend((0..self.class_count).map(|k| format!("logit_{k}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.id.clone(),
                label_to_file(r.label).to_string(),
                r.group.to_string(),
                r.novelty.map(|v| v.to_string()).unwrap_or_default(),
            ];
            // `Display` for f64 prints the shortest string that parses back
            // to the same value.
            row.extend(r.logits.iter().map(|z| z.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    fn to_document(&self) -> PredictionDocument {
        PredictionDocument {
            class_count: self.class_count,
            records: self
                .records
                .iter()
                .map(|r| RecordRow {
                    id: r.id.clone(),
                    label: label_to_file(r.label),
                    group: r.group,
                    novelty: r.novelty,
                    logits: r.logits.clone(),
                })
                .collect(),
        }
    }
}

pub fn load_predictions(path: &Path, format: FileFormat) -> Result<PredictionSet> {
    PredictionSet::load(path, format)
}

pub fn save_predictions(set: &PredictionSet, path: &Path, format: FileFormat) -> Result<()> {
    set.save(path, format)
}

fn label_to_file(label: Option<usize>) -> i64 {
    label.map_or(-1, |y| y as i64)
}

#[derive(Serialize, Deserialize)]
struct PredictionDocument {
    class_count: usize,
    records: Vec<RecordRow>,
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    id: String,
    label: i64,
    group: GroupTag,
    novelty: Option<f64>,
    logits: Vec<f64>,
}

impl PredictionDocument {
    fn into_set(self, path: &Path) -> Result<PredictionSet> {
        let c = self.class_count;
        let mut seen = HashSet::new();
        let mut records = Vec::with_capacity(self.records.len());
        for (i, row) in self.records.into_iter().enumerate() {
            let line = i as u64 + 1;
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let label = parse_label(row.label, c).map_err(&parse_err)?;
            let record = PredictionRecord {
                id: row.id,
                logits: row.logits,
                label,
                group: row.group,
                novelty: row.novelty,
            };
            if c < 2 {
                return Err(parse_err("class count must be at least 2".into()));
            }
            record.validate(c).map_err(&parse_err)?;
            if !seen.insert(record.id.clone()) {
                return Err(parse_err(format!("duplicate id `{}`", record.id)));
            }
            records.push(record);
        }
        PredictionSet::new(c, records)
    }
}

fn parse_label(raw: i64, class_count: usize) -> std::result::Result<Option<usize>, String> {
    match raw {
        -1 => Ok(None),
        y if y >= 0 && (y as usize) < class_count => Ok(Some(y as usize)),
        _ => Err("label out of range".into()),
    }
}

fn read_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<PredictionSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    let fixed = ["id", "label", "group", "novelty"];
    if header.len() < fixed.len() + 2 || header.iter().take(4).ne(fixed) {
        return Err(parse_err(
            1,
            "header must start with id,label,group,novelty followed by logit columns".into(),
        ));
    }
    for (k, name) in header.iter().skip(4).enumerate() {
        if name != format!("logit_{k}") {
            return Err(parse_err(1, format!("expected column logit_{k}, found `{name}`")));
        }
    }
    let class_count = header.len() - 4;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", header.len(), row.len()),
            ));
        }
        let label_raw: i64 = row[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label `{}`", &row[1])))?;
        let label = parse_label(label_raw, class_count).map_err(|m| parse_err(line, m))?;
        let group: GroupTag = row[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("unknown group `{}`", &row[2])))?;
        let novelty = match row[3].trim() {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("bad novelty `{s}`")))?,
            ),
        };
        let logits = row
            .iter()
            .skip(4)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("bad logit `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let record = PredictionRecord {
            id: row[0].to_string(),
            logits,
            label,
            group,
            novelty,
        };
        record.validate(class_count).map_err(|m| parse_err(line, m))?;
        if !seen.insert(record.id.clone()) {
            return Err(parse_err(line, format!("duplicate id `{}`", record.id)));
        }
        records.push(record);
    }
    PredictionSet::new(class_count, records)
}

/// Per-sample class probabilities aligned with the source records.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySet {
    ids: Vec<String>,
    rows: Array2<f64>,
    labels: Vec<Option<usize>>,
    groups: Vec<GroupTag>,
}

impl ProbabilitySet {
    pub fn new(
        ids: Vec<String>,
        rows: Array2<f64>,
        labels: Vec<Option<usize>>,
        groups: Vec<GroupTag>,
    ) -> Result<Self> {
        let n = rows.nrows();
        if ids.len() != n || labels.len() != n || groups.len() != n {
            return Err(Error::shape(format!(
                "{} rows but {} ids, {} labels, {} groups",
                n,
                ids.len(),
                labels.len(),
                groups.len()
            )));
        }
        if rows.ncols() < 2 {
            return Err(Error::invalid("class count must be at least 2"));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("row {i} has entries outside [0, 1]")));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
        }
        for (i, y) in labels.iter().enumerate() {
            if matches!(y, Some(y) if *y >= rows.ncols()) {
                return Err(Error::invalid(format!("row {i}: label out of range")));
            }
        }
        Ok(ProbabilitySet {
            ids,
            rows,
            labels,
            groups,
        })
    }

    /// Convenience constructor for labeled rows with generated ids.
    pub fn from_labeled_rows(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(2, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("ragged probability rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let rows = Array2::from_shape_vec((n, c), flat).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(
            (0..n).map(|i| i.to_string()).collect(),
            rows,
            labels.into_iter().map(Some).collect(),
            vec![GroupTag::FamiliarTest; n],
        )
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.rows.ncols();
        &self.rows.as_slice().expect("row-major")[i * c..(i + 1) * c]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn groups(&self) -> &[GroupTag] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.rows.ncols()
    }

    pub fn filter_by_group(&self, tag: GroupTag) -> ProbabilitySet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.groups[i] == tag).collect();
        self.select(&keep)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ProbabilitySet {
        ProbabilitySet {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: self.rows.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
        }
    }

    /// Groups present, in [`GroupTag::ALL`] order.
    pub fn present_groups(&self) -> Vec<GroupTag> {
        GroupTag::ALL
            .into_iter()
            .filter(|g| self.groups.contains(g))
            .collect()
    }

    /// Writes `id,label,group,p_0..p_{C-1}`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["id".to_string(), "label".into(), "group".into()];
        header.extend((0..self.class_count()).map(|k| format!("p_{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.ids[i].clone(),
                label_to_file(self.labels[i]).to_string(),
                self.groups[i].to_string(),
            ];
            row.extend(self.row(i).iter().map(|p| p.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, logits: &[f64], label: usize, group: GroupTag) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            logits: logits.to_vec(),
            label: Some(label),
            group,
            novelty: None,
        }
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_small_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "id,label,group,novelty,logit_0,logit_1\n\
             a,0,familiar_test,,1.5,-0.5\n\
             b,1,familiar_test,0.3,0,2\n\
             c,1,novel_test,,0.1,0.2\n",
        );
        let set = load_predictions(&p, FileFormat::Csv).unwrap();
        assert_eq!(set.class_count(), 2);
        assert_eq!(set.len(), 3);
        assert_eq!(set.records()[1].novelty, Some(0.3));
        assert_eq!(set.records()[2].group, GroupTag::NovelTest);
    }

    #[test]
    fn label_out_of_range_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "id,label,group,novelty,logit_0,logit_1\n\
             a,0,familiar_test,,1,0\n\
             b,5,familiar_test,,1,0\n",
        );
        let err = load_predictions(&p, FileFormat::Csv).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("label out of range"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let head = "id,label,group,novelty,logit_0,logit_1\n";
        let cases = [
            ("a,0,val,,1\n", 2, "columns"),
            ("a,0,val,,NaN,0\n", 2, "non-finite"),
            ("a,0,val,,1,0\na,1,val,,0,1\n", 3, "duplicate"),
            ("a,0,nowhere,,1,0\n", 2, "unknown group"),
            ("a,0,unsup,,1,0\n", 2, "unsup"),
        ];
        for (body, expect_line, needle) in cases {
            let p = write(&dir, "bad.csv", &format!("{head}{body}"));
            match load_predictions(&p, FileFormat::Csv).unwrap_err() {
                Error::Parse { line, message, .. } => {
                    assert_eq!(line, expect_line, "{body}");
                    assert!(message.contains(needle), "{message} / {needle}");
                }
                other => panic!("unexpected error {other}"),
            }
        }
    }

    #[test]
    fn unsup_rows_use_sentinel_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "id,label,group,novelty,logit_0,logit_1\nu0,-1,unsup,,0.5,0.5\n",
        );
        let set = load_predictions(&p, FileFormat::Csv).unwrap();
        assert_eq!(set.records()[0].label, None);
    }

    #[test]
    fn empty_set_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        PredictionSet::empty(3)
            .unwrap()
            .save(&p, FileFormat::Csv)
            .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "id,label,group,novelty,logit_0,logit_1,logit_2\n");
        let back = load_predictions(&p, FileFormat::Csv).unwrap();
        assert_eq!(back.class_count(), 3);
        assert!(back.is_empty());
    }

    #[test]
    fn single_row_has_three_logit_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        let set = PredictionSet::new(
            3,
            vec![record("x", &[0.1, 0.2, 0.3], 2, GroupTag::Val)],
        )
        .unwrap();
        set.save(&p, FileFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "x,2,val,,0.1,0.2,0.3");
    }

    #[test]
    fn softmax_examples() {
        let set = PredictionSet::new(
            2,
            vec![
                record("a", &[0.0, 0.0], 0, GroupTag::FamiliarTest),
                record("b", &[1000.0, 0.0], 0, GroupTag::FamiliarTest),
                record("c", &[2.0, 0.0], 0, GroupTag::FamiliarTest),
            ],
        )
        .unwrap();
        let p = set.to_probabilities();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert!((p.row(1)[0] - 1.0).abs() < 1e-15 && p.row(1)[1] < 1e-300);
        assert!((p.row(2)[0] - 0.880797).abs() < 1e-6);
        assert!((p.row(2)[1] - 0.119203).abs() < 1e-6);
    }

    #[test]
    fn filter_examples() {
        let set = PredictionSet::new(
            2,
            vec![
                record("a", &[0.0, 1.0], 0, GroupTag::FamiliarTest),
                record("b", &[0.0, 1.0], 0, GroupTag::FamiliarTest),
                record("c", &[0.0, 1.0], 1, GroupTag::NovelTest),
            ],
        )
        .unwrap();
        assert_eq!(set.filter_by_group(GroupTag::NovelTest).len(), 1);
        assert!(set.filter_by_group(GroupTag::Train).is_empty());
        assert_eq!(set.groups(), vec![GroupTag::FamiliarTest, GroupTag::NovelTest]);
    }

    fn arb_set() -> impl Strategy<Value = PredictionSet> {
        (2usize..5).prop_flat_map(|c| {
            prop::collection::vec(
                (
                    prop::collection::vec(-1e3f64..1e3, c),
                    0..c,
                    0usize..5,
                    prop::option::of(-50.0f64..50.0),
                ),
                0..20,
            )
            .prop_map(move |rows| {
                let records = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (logits, y, g, novelty))| {
                        let group = GroupTag::ALL[g];
                        PredictionRecord {
                            id: format!("r{i}"),
                            logits,
                            label: (group != GroupTag::Unsup).then_some(y),
                            group,
                            novelty,
                        }
                    })
                    .collect();
                PredictionSet::new(c, records).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn save_load_round_trip(set in arb_set(), json in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let format = if json { FileFormat::Json } else { FileFormat::Csv };
            let p = dir.path().join("rt");
            set.save(&p, format).unwrap();
            let back = load_predictions(&p, format).unwrap();
            prop_assert_eq!(back.class_count(), set.class_count());
            for (a, b) in set.records().iter().zip(back.records()) {
                prop_assert_eq!(&a.id, &b.id);
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.group, b.group);
                prop_assert_eq!(a.novelty, b.novelty);
                for (x, y) in a.logits.iter().zip(&b.logits) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
            prop_assert_eq!(back.len(), set.len());
        }

        #[test]
        fn group_filters_partition(set in arb_set()) {
            let mut seen = vec![false; set.len()];
            let mut total = 0;
            for tag in GroupTag::ALL {
                let part = set.filter_by_group(tag);
                total += part.len();
                for r in part.records() {
                    let i = set.records().iter().position(|s| s.id == r.id).unwrap();
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            prop_assert_eq!(total, set.len());
            prop_assert!(seen.into_iter().all(|s| s));
        }

        #[test]
        fn softmax_normalized_and_order_preserving(set in arb_set()) {
            let p = set.to_probabilities();
            for (i, r) in set.records().iter().enumerate() {
                let row = p.row(i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for a in 0..row.len() {
                    for b in 0..row.len() {
                        if r.logits[a] > r.logits[b] {
                            // strict unless both entries underflowed
                            prop_assert!(row[a] > row[b] || (row[a] == 0.0 && row[b] == 0.0));
                        }
                    }
                }
            }
        }
    }
}
