//! Append-only JSONL persistence, one file per UTC day.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, OverlayRule};
use crate::engine::EvaluationRecord;
use crate::gate::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoreEntry {
    Session {
        id: String,
        seed: u64,
        created: DateTime<Utc>,
    },
    Turn {
        session: String,
        human: String,
        human_at: DateTime<Utc>,
        agent_at: DateTime<Utc>,
        /// Generator state after the turn.
        rng: RngState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<EvaluationRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partial: Option<EvaluationRecord>,
    },
    Config {
        config: EngineConfig,
        rules: Vec<OverlayRule>,
        at: DateTime<Utc>,
    },
}

fn file_name(date: NaiveDate) -> String {
    format!("records-{}.jsonl", date.format("%Y-%m-%d"))
}

fn day_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("records-") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Cuts an unterminated final line left by a crash mid-append.
fn drop_torn_tail(path: &Path) -> io::Result<bool> {
    let mut f = OpenOptions::new().read(true).write(true).open(path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.is_empty() || buf.ends_with(b"\n") {
        return Ok(false);
    }
    let keep = buf.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    f.set_len(keep as u64)?;
    f.seek(SeekFrom::End(0))?;
    f.sync_all()?;
    Ok(true)
}

pub struct Store {
    dir: PathBuf,
    current: Mutex<Option<(NaiveDate, File)>>,
}

impl Store {
    /// Opens `dir` (created if missing) and returns every persisted entry in
    /// append order.
    pub fn open(dir: &Path) -> io::Result<(Self, Vec<StoreEntry>)> {
        std::fs::create_dir_all(dir)?;
        let files = day_files(dir)?;
        if let Some(last) = files.last() {
            if drop_torn_tail(last)? {
                tracing::warn!(file = %last.display(), "dropped a torn trailing record");
            }
        }
        let mut entries = Vec::new();
        for path in &files {
            let text = std::fs::read_to_string(path)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry = serde_json::from_str(line).map_err(|e| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), i + 1),
                    )
                })?;
                entries.push(entry);
            }
        }
        let store = Self {
            dir: dir.to_path_buf(),
            current: Mutex::new(None),
        };
        Ok((store, entries))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one line and syncs it to disk before returning.
    pub fn append(&self, entry: &StoreEntry, now: DateTime<Utc>) -> io::Result<()> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        let date = now.date_naive();
        let mut current = self.current.lock().unwrap_or_else(|e| e.into_inner());
        if current.as_ref().is_none_or(|(d, _)| *d != date) {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(file_name(date)))?;
            *current = Some((date, f));
        }
        let (_, f) = current.as_mut().expect("file opened above");
        f.write_all(&line)?;
        f.sync_data()
    }
}
