//! Append-only response log and scheduler snapshots.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use pcs_core::scheduler::SchedulerState;
use pcs_core::{Comparison, Outcome};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Tie,
    Right,
}

impl Choice {
    pub fn outcome(self) -> Outcome {
        match self {
            Choice::Left => Outcome::Left,
            Choice::Tie => Outcome::Tie,
            Choice::Right => Outcome::Right,
        }
    }
}

impl FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "left" => Ok(Choice::Left),
            "tie" => Ok(Choice::Tie),
            "right" => Ok(Choice::Right),
            other => Err(format!("invalid choice {other:?}; expected left, tie or right")),
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Choice::Left => "left",
            Choice::Tie => "tie",
            Choice::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub response_id: String,
    pub pair_id: String,
    pub left_id: String,
    pub right_id: String,
    pub choice: Choice,
    /// -1 left, 0 tie, 1 right.
    pub outcome: Outcome,
    pub respondent_id: String,
    pub received_at: DateTime<Utc>,
}

impl ResponseRecord {
    pub fn comparison(&self) -> Comparison {
        Comparison::new(&self.left_id, &self.right_id, self.outcome, self.received_at)
            .with_respondent(&self.respondent_id)
    }
}

/// Reads every complete record. A final line without a newline is a torn
/// write from a crash before acknowledgement and is ignored.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<ResponseRecord>> {
    Ok(read_log_inner(path.as_ref())?.0)
}

/// Records plus the byte length of the intact prefix.
fn read_log_inner(path: &Path) -> Result<(Vec<ResponseRecord>, u64)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut intact = 0u64;
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            break;
        }
        if !line.trim().is_empty() {
            let record = serde_json::from_str(&line).map_err(|e| ServiceError::CorruptLog {
                path: path.to_path_buf(),
                line: number,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        intact += read as u64;
    }
    Ok((records, intact))
}

/// Writer side of the log. Every append is flushed and synced before it
/// returns.
#[derive(Debug)]
pub struct ResponseLog {
    path: PathBuf,
    file: Option<File>,
}

impl ResponseLog {
    /// Opens the log, dropping a torn final line, and returns the records so
    /// far. An unwritable log does not fail here; appends will.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<ResponseRecord>)> {
        let path = path.into();
        let (records, intact) = read_log_inner(&path)?;
        if let Ok(meta) = fs::metadata(&path) {
            if meta.len() > intact {
                tracing::warn!(path = %path.display(), "dropping torn final log line");
                OpenOptions::new().write(true).open(&path)?.set_len(intact)?;
            }
        }
        let mut log = Self { path, file: None };
        if let Err(e) = log.ensure_open() {
            tracing::warn!(path = %log.path.display(), error = %e, "response log not writable");
        }
        Ok((log, records))
    }

    fn ensure_open(&mut self) -> io::Result<&mut File> {
        if self.file.is_none() {
            let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
            self.file = Some(file);
        }
        Ok(self.file.as_mut().expect("just opened"))
    }

    pub fn append(&mut self, record: &ResponseRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        let result = (|| {
            let file = self.ensure_open()?;
            file.write_all(&line)?;
            file.sync_data()
        })();
        if result.is_err() {
            self.file = None;
        }
        Ok(result?)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Number of log records folded into `scheduler`.
    pub records: usize,
    pub scheduler: SchedulerState,
}

impl Snapshot {
    /// Written to a temporary file and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut file = File::create(&tmp)?;
            file.write_all(&serde_json::to_vec(self).map_err(io::Error::other)?)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// `None` when missing or unreadable; the log is authoritative.
    pub fn load(path: &Path) -> Option<Self> {
        let bytes = fs::read(path).ok()?;
        match serde_json::from_slice::<Snapshot>(&bytes) {
            Ok(s) if s.scheduler.validate().is_ok() => Some(s),
            _ => {
                tracing::warn!(path = %path.display(), "ignoring unusable snapshot");
                None
            }
        }
    }
}
