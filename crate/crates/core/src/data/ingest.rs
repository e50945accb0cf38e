use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, DatasetSchema};

/// One continuous recording: channel-major samples plus a per-sample label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub id: String,
    /// `[channels × len]`, channel-major.
    pub data: Vec<f32>,
    pub channels: usize,
    pub labels: Vec<u32>,
}

impl LabeledRecording {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let len = self.len();
        &self.data[c * len..(c + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngestErrorKind {
    Io(String),
    Csv(String),
    ChannelMismatch {
        expected: usize,
        found: usize,
        missing: Vec<String>,
    },
    NonNumeric {
        column: String,
        value: String,
    },
    UnknownLabel(String),
    MissingLabel,
    RaggedRow {
        expected: usize,
        found: usize,
    },
}

/// A problem with one input file, with the 1-based line when it is row-specific.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestError {
    pub file: PathBuf,
    pub line: Option<u64>,
    pub kind: IngestErrorKind,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        match &self.kind {
            IngestErrorKind::Io(e) => write!(f, ": {e}"),
            IngestErrorKind::Csv(e) => write!(f, ": malformed CSV: {e}"),
            IngestErrorKind::ChannelMismatch {
                expected,
                found,
                missing,
            } => write!(
                f,
                ": channel mismatch: schema has {expected} channels, file provides {found}; missing {}",
                missing.join(", ")
            ),
            IngestErrorKind::NonNumeric { column, value } => {
                write!(f, ": non-numeric value {value:?} in column {column:?}")
            }
            IngestErrorKind::UnknownLabel(l) => write!(f, ": unknown label {l:?}"),
            IngestErrorKind::MissingLabel => write!(
                f,
                ": no `label` column and the parent directory is not a label name"
            ),
            IngestErrorKind::RaggedRow { expected, found } => {
                write!(f, ": row has {found} fields, header has {expected}")
            }
        }
    }
}

fn list_csv(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let read = |d: &Path| {
        fs::read_dir(d).map_err(|e| DataError::Io {
            path: d.to_path_buf(),
            message: e.to_string(),
        })
    };
    let mut files = Vec::new();
    for entry in read(dir)? {
        let path = entry
            .map_err(|e| DataError::Io {
                path: dir.to_path_buf(),
                message: e.to_string(),
            })?
            .path();
        if path.is_dir() {
            for inner in read(&path)? {
                let p = inner
                    .map_err(|e| DataError::Io {
                        path: path.clone(),
                        message: e.to_string(),
                    })?
                    .path();
                if is_csv(&p) {
                    files.push(p);
                }
            }
        } else if is_csv(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn is_csv(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn recording_id(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Reads every `*.csv` under `dir` (and one level of subdirectories).
///
/// Each file is one recording whose header names the schema channels. Labels
/// come from an optional `label` column or, failing that, from the name of the
/// file's parent directory. All per-file problems are collected and returned
/// together.
pub fn ingest(dir: &Path, schema: &DatasetSchema) -> Result<Vec<LabeledRecording>, DataError> {
    let files = list_csv(dir)?;
    if files.is_empty() {
        return Err(DataError::Empty(format!("no .csv files under {}", dir.display())));
    }
    let mut recordings = Vec::with_capacity(files.len());
    let mut errors = Vec::new();
    for file in &files {
        let dir_label = file
            .parent()
            .filter(|p| *p != dir)
            .and_then(|p| p.file_name())
            .and_then(|n| schema.label_id(&n.to_string_lossy()));
        match read_recording(file, schema, dir_label) {
            Ok((data, labels)) => recordings.push(LabeledRecording {
                id: recording_id(dir, file),
                data,
                channels: schema.num_channels(),
                labels,
            }),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Ingest(errors));
    }
    recordings.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(recordings)
}

fn read_recording(
    file: &Path,
    schema: &DatasetSchema,
    dir_label: Option<u32>,
) -> Result<(Vec<f32>, Vec<u32>), IngestError> {
    let err = |line: Option<u64>, kind| IngestError {
        file: file.to_path_buf(),
        line,
        kind,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(|e| err(None, IngestErrorKind::Io(e.to_string())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| err(Some(1), IngestErrorKind::Csv(e.to_string())))?
        .iter()
        .map(str::to_string)
        .collect();

    let columns: Vec<Option<usize>> = schema
        .channels
        .iter()
        .map(|c| header.iter().position(|h| *h == c.name))
        .collect();
    if columns.iter().any(Option::is_none) {
        let missing = schema
            .channels
            .iter()
            .zip(&columns)
            .filter(|(_, col)| col.is_none())
            .map(|(c, _)| c.name.clone())
            .collect();
        let found = columns.iter().filter(|c| c.is_some()).count();
        return Err(err(
            Some(1),
            IngestErrorKind::ChannelMismatch {
                expected: schema.num_channels(),
                found,
                missing,
            },
        ));
    }
    let columns: Vec<usize> = columns.into_iter().flatten().collect();
    let label_col = header.iter().position(|h| h == "label");
    if label_col.is_none() && dir_label.is_none() {
        return Err(err(None, IngestErrorKind::MissingLabel));
    }

    let mut per_channel: Vec<Vec<f32>> = vec![Vec::new(); columns.len()];
    let mut labels = Vec::new();
    for (i, row) in reader.records().enumerate() {
        // header is line 1
        let line = Some(i as u64 + 2);
        let row = row.map_err(|e| err(line, IngestErrorKind::Csv(e.to_string())))?;
        if row.len() != header.len() {
            return Err(err(
                line,
                IngestErrorKind::RaggedRow {
                    expected: header.len(),
                    found: row.len(),
                },
            ));
        }
        for (c, &col) in columns.iter().enumerate() {
            let raw = &row[col];
            let v: f32 = raw.parse().map_err(|_| {
                err(
                    line,
                    IngestErrorKind::NonNumeric {
                        column: header[col].clone(),
                        value: raw.to_string(),
                    },
                )
            })?;
            per_channel[c].push(v);
        }
        let label = match label_col {
            Some(col) => schema
                .label_id(&row[col])
                .ok_or_else(|| err(line, IngestErrorKind::UnknownLabel(row[col].to_string())))?,
            None => dir_label.expect("checked above"),
        };
        labels.push(label);
    }
    Ok((per_channel.concat(), labels))
}
