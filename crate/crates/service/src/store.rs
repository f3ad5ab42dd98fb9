//! File-backed workbench store: a JSON snapshot plus an append-only command
//! log. Every acknowledged command is fsynced to the log before `commit`
//! returns. Opening the store loads the snapshot and replays newer log
//! entries; a torn final line (a crash mid-append) is discarded, anything
//! else malformed is reported as corruption.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use biaslab_core::Workbench;
use serde::{Deserialize, Serialize};

use crate::commands::{apply, Command, CommandError, Outcome};

pub const SCHEMA_VERSION: u32 = 1;
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOG_FILE: &str = "log.jsonl";
const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt store: {file}, line {line}: {message}")]
    Corrupt { file: PathBuf, line: usize, message: String },
    #[error("store schema version {found} is newer than supported version {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("store is read-only after a failed write; restart to recover")]
    Poisoned,
    #[error(transparent)]
    Command(#[from] CommandError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    schema_version: u32,
    last_seq: u64,
    workbench: Workbench,
}

#[derive(Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    command: Command,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    workbench: Workbench,
    last_seq: u64,
    snapshot_seq: u64,
    snapshot_every: u64,
    log: File,
    poisoned: bool,
}

impl Store {
    /// Opens (or creates) the store in `dir`, starting from `initial` when no snapshot exists.
    pub fn open_with(dir: &Path, initial: Workbench) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let (mut workbench, snapshot_seq) = match fs::read_to_string(&snapshot_path) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                    file: snapshot_path.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
                if snap.schema_version > SCHEMA_VERSION {
                    return Err(StoreError::Schema {
                        found: snap.schema_version,
                    });
                }
                (snap.workbench, snap.last_seq)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (initial, 0),
            Err(e) => return Err(io_err(&snapshot_path)(e)),
        };

        let log_path = dir.join(LOG_FILE);
        let mut last_seq = snapshot_seq;
        match fs::read(&log_path) {
            Ok(bytes) => {
                let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                if complete < bytes.len() {
                    log::warn!(
                        "discarding {} bytes of a torn final log entry in {}",
                        bytes.len() - complete,
                        log_path.display()
                    );
                    let file = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
                    file.set_len(complete as u64).map_err(io_err(&log_path))?;
                    file.sync_all().map_err(io_err(&log_path))?;
                }
                let corrupt = |line: usize, message: String| StoreError::Corrupt {
                    file: log_path.clone(),
                    line,
                    message,
                };
                let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| corrupt(0, e.to_string()))?;
                for (i, line) in text.lines().enumerate() {
                    let entry: LogEntry = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
                    if entry.seq <= last_seq {
                        if entry.seq <= snapshot_seq {
                            continue;
                        }
                        return Err(corrupt(i + 1, format!("sequence {} after {last_seq}", entry.seq)));
                    }
                    if entry.seq != last_seq + 1 {
                        return Err(corrupt(i + 1, format!("gap: sequence {} after {last_seq}", entry.seq)));
                    }
                    apply(&mut workbench, &entry.command)
                        .map_err(|e| corrupt(i + 1, format!("replay failed: {e}")))?;
                    last_seq = entry.seq;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&log_path)(e)),
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        Ok(Self {
            dir: dir.to_owned(),
            workbench,
            last_seq,
            snapshot_seq,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            log,
            poisoned: false,
        })
    }

    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        Self::open_with(dir, Workbench::default())
    }

    pub fn set_snapshot_every(&mut self, n: u64) {
        self.snapshot_every = n.max(1);
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn workbench(&self) -> &Workbench {
        &self.workbench
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Applies `command` and makes it durable. Rejected commands leave no trace.
    pub fn commit(&mut self, command: Command) -> Result<Outcome, StoreError> {
        if self.poisoned {
            return Err(StoreError::Poisoned);
        }
        let outcome = apply(&mut self.workbench, &command)?;
        let entry = LogEntry {
            seq: self.last_seq + 1,
            command,
        };
        let mut line = serde_json::to_string(&entry).expect("commands serialize");
        line.push('\n');
        let log_path = self.dir.join(LOG_FILE);
        if let Err(e) = self.log.write_all(line.as_bytes()).and_then(|_| self.log.sync_data()) {
            // Memory is now ahead of disk; refuse further writes.
            self.poisoned = true;
            return Err(io_err(&log_path)(e));
        }
        self.last_seq = entry.seq;
        if self.last_seq - self.snapshot_seq >= self.snapshot_every {
            if let Err(e) = self.snapshot() {
                log::warn!("periodic snapshot failed: {e}");
            }
        }
        Ok(outcome)
    }

    /// Writes a snapshot atomically, then truncates the log.
    pub fn snapshot(&mut self) -> Result<(), StoreError> {
        if self.poisoned {
            return Err(StoreError::Poisoned);
        }
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let snap = Snapshot {
            schema_version: SCHEMA_VERSION,
            last_seq: self.last_seq,
            workbench: self.workbench.clone(),
        };
        {
            let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
            serde_json::to_writer(&mut file, &snap).map_err(|e| io_err(&tmp)(e.into()))?;
            file.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        if let Ok(dir) = File::open(&self.dir) {
            let _ = dir.sync_all();
        }
        let log_path = self.dir.join(LOG_FILE);
        self.log = File::create(&log_path).map_err(io_err(&log_path))?;
        self.log.sync_all().map_err(io_err(&log_path))?;
        self.log = OpenOptions::new().append(true).open(&log_path).map_err(io_err(&log_path))?;
        self.snapshot_seq = self.last_seq;
        Ok(())
    }
}
