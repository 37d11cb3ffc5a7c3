//! Image manifests: the record list handed from one curation stage to the next.
//!
//! On disk a manifest is a UTF-8 CSV file with a fixed header (see
//! [`MANIFEST_HEADER`]). In memory it carries a subject index that is rebuilt
//! from the records after every transformation, so it can never drift.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingStore;
use crate::error::{io_err, Error, Result};

pub const MANIFEST_HEADER: [&str; 8] = [
    "image_id",
    "subject_id",
    "embedding_index",
    "roll",
    "pitch",
    "yaw",
    "gender_vote",
    "source_path",
];

pub const GENDER_LABEL_HEADER: [&str; 2] = ["subject_id", "label"];

/// Per-image output of the gender predictor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderVote {
    Male,
    Female,
    Unknown,
}

impl GenderVote {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderVote::Male => "male",
            GenderVote::Female => "female",
            GenderVote::Unknown => "unknown",
        }
    }
}

impl FromStr for GenderVote {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "male" => Ok(GenderVote::Male),
            "female" => Ok(GenderVote::Female),
            // A missing prediction is the same as an unknown one.
            "unknown" | "" => Ok(GenderVote::Unknown),
            other => Err(format!("invalid gender_vote {other:?}")),
        }
    }
}

/// Subject-level gender assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderLabel {
    Male,
    Female,
    NeedsReview,
}

impl GenderLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Male => "male",
            GenderLabel::Female => "female",
            GenderLabel::NeedsReview => "needs_review",
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenderLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "male" => Ok(GenderLabel::Male),
            "female" => Ok(GenderLabel::Female),
            "needs_review" => Ok(GenderLabel::NeedsReview),
            other => Err(format!("invalid gender label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub subject_id: String,
    pub embedding_index: usize,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub gender_vote: GenderVote,
    pub source_path: String,
}

/// Ordered image records with a subject index and subject gender labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    subjects: BTreeMap<String, Vec<usize>>,
    gender_labels: BTreeMap<String, GenderLabel>,
}

impl Manifest {
    /// Builds a manifest, rejecting duplicate image ids.
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
        }
        let subjects = build_subject_index(&records);
        Ok(Manifest {
            records,
            subjects,
            gender_labels: BTreeMap::new(),
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Subject id → record positions, in subject id order.
    pub fn subjects(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.subjects
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_records<'a>(
        &'a self,
        subject: &str,
    ) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.subjects
            .get(subject)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |&p| &self.records[p])
    }

    pub fn gender_labels(&self) -> &BTreeMap<String, GenderLabel> {
        &self.gender_labels
    }

    pub fn gender_label(&self, subject: &str) -> Option<GenderLabel> {
        self.gender_labels.get(subject).copied()
    }

    /// Replaces the gender labels. Labels for subjects not present in the
    /// manifest are dropped.
    pub fn with_gender_labels(mut self, labels: BTreeMap<String, GenderLabel>) -> Self {
        self.gender_labels = labels
            .into_iter()
            .filter(|(s, _)| self.subjects.contains_key(s))
            .collect();
        self
    }

    /// Subjects whose label is missing or `needs_review`.
    pub fn unlabeled_subjects(&self) -> Vec<String> {
        self.subjects
            .keys()
            .filter(|s| {
                !matches!(
                    self.gender_label(s),
                    Some(GenderLabel::Male | GenderLabel::Female)
                )
            })
            .cloned()
            .collect()
    }

    /// True when the stored subject index equals one rebuilt from the records.
    pub fn index_is_consistent(&self) -> bool {
        build_subject_index(&self.records) == self.subjects
    }

    pub fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        for r in &self.records {
            if r.embedding_index >= store.count() {
                return Err(Error::EmbeddingIndexOutOfRange {
                    image_id: r.image_id.clone(),
                    index: r.embedding_index,
                    count: store.count(),
                });
            }
        }
        Ok(())
    }

    /// Keeps the records for which `keep` returns true, preserving order.
    /// Gender labels of subjects that disappear are dropped.
    pub fn retain(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Manifest {
        let records: Vec<ImageRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let subjects = build_subject_index(&records);
        let gender_labels = self
            .gender_labels
            .iter()
            .filter(|(s, _)| subjects.contains_key(*s))
            .map(|(s, l)| (s.clone(), *l))
            .collect();
        Manifest {
            records,
            subjects,
            gender_labels,
        }
    }

    /// Rewrites subject ids through `relabel`; ids it returns `None` for are
    /// unchanged. A relabeled subject's gender label is discarded in favour
    /// of the label of the subject it was folded into.
    pub fn relabel(&self, relabel: impl Fn(&str) -> Option<String>) -> Manifest {
        let records: Vec<ImageRecord> = self
            .records
            .iter()
            .map(|r| match relabel(&r.subject_id) {
                Some(s) => ImageRecord {
                    subject_id: s,
                    ..r.clone()
                },
                None => r.clone(),
            })
            .collect();
        let subjects = build_subject_index(&records);
        let gender_labels = self
            .gender_labels
            .iter()
            .filter(|(s, _)| relabel(s).is_none() && subjects.contains_key(*s))
            .map(|(s, l)| (s.clone(), *l))
            .collect();
        Manifest {
            records,
            subjects,
            gender_labels,
        }
    }
}

fn build_subject_index(records: &[ImageRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut subjects: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (pos, r) in records.iter().enumerate() {
        subjects.entry(r.subject_id.clone()).or_default().push(pos);
    }
    subjects
}

fn parse_field<T: FromStr>(path: &Path, line: u64, row: &csv::StringRecord, idx: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = row.get(idx).unwrap_or("");
    raw.trim().parse::<T>().map_err(|e| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        msg: format!("column {}: {e} ({raw:?})", MANIFEST_HEADER[idx]),
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &MANIFEST_HEADER)?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                msg: format!(
                    "expected {} columns, found {}",
                    MANIFEST_HEADER.len(),
                    row.len()
                ),
            });
        }
        let image_id = row[0].to_string();
        let subject_id = row[1].to_string();
        if image_id.is_empty() || subject_id.is_empty() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line,
                msg: "image_id and subject_id must be nonempty".into(),
            });
        }
        records.push(ImageRecord {
            image_id,
            subject_id,
            embedding_index: parse_field(path, line, &row, 2)?,
            roll: parse_field(path, line, &row, 3)?,
            pitch: parse_field(path, line, &row, 4)?,
            yaw: parse_field(path, line, &row, 5)?,
            gender_vote: parse_field(path, line, &row, 6)?,
            source_path: row[7].to_string(),
        });
    }
    Manifest::new(records)
}

/// Writes the canonical CSV form: fixed column order, `\n` line endings,
/// shortest round-tripping float formatting.
pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in manifest.records() {
        let idx = r.embedding_index.to_string();
        let (roll, pitch, yaw) = (r.roll.to_string(), r.pitch.to_string(), r.yaw.to_string());
        writer
            .write_record([
                r.image_id.as_str(),
                r.subject_id.as_str(),
                &idx,
                &roll,
                &pitch,
                &yaw,
                r.gender_vote.as_str(),
                r.source_path.as_str(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into_error(),
        })?
        .flush()
        .map_err(io_err(path))
}

pub fn load_gender_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, GenderLabel>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &GENDER_LABEL_HEADER)?;
    let mut labels = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let label = row[1].trim().parse().map_err(|msg| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        labels.insert(row[0].to_string(), label);
    }
    Ok(labels)
}

pub fn write_gender_labels<'a>(
    labels: impl IntoIterator<Item = (&'a String, &'a GenderLabel)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    writer
        .write_record(GENDER_LABEL_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for (subject, label) in labels {
        writer
            .write_record([subject.as_str(), label.as_str()])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(io_err(path))
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::BadHeader {
            path: path.to_path_buf(),
            found: header.iter().collect::<Vec<_>>().join(","),
            expected: expected.join(","),
        });
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}
