use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Split;

/// One line of the training event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Appends newline-delimited JSON records. A failing sink logs one warning
/// and then drops records so training can continue.
#[derive(Debug)]
pub struct EventSink {
    path: PathBuf,
    file: Option<File>,
    warned: bool,
}

impl EventSink {
    pub fn open(path: &Path) -> Self {
        let file = OpenOptions::new().create(true).append(true).open(path);
        let mut sink = Self {
            path: path.to_path_buf(),
            file: None,
            warned: false,
        };
        match file {
            Ok(f) => sink.file = Some(f),
            Err(e) => sink.warn(&e),
        }
        sink
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn warn(&mut self, e: &std::io::Error) {
        if !self.warned {
            log::warn!("event log {} is not writable ({e}); continuing without it", self.path.display());
            self.warned = true;
        }
    }

    pub fn emit(&mut self, record: &EventRecord) {
        let mut line = serde_json::to_string(record).expect("event serializes");
        line.push('\n');
        let result = match self.file.as_mut() {
            Some(f) => f.write_all(line.as_bytes()).and_then(|_| f.flush()),
            None => return,
        };
        if let Err(e) = result {
            self.warn(&e);
            self.file = None;
        }
    }
}

pub fn read_events(path: &Path) -> std::io::Result<Vec<EventRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), i + 1),
            )
        })?;
        out.push(record);
    }
    Ok(out)
}
