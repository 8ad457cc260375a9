//! Embedded persistence: a snapshot plus a write-ahead journal of events.
//!
//! Layout of a data directory:
//!
//! ```text
//! dataset.json    the ingested dataset
//! snapshot.json   full state as of the last compaction
//! journal.jsonl   one event per line since that snapshot
//! LOCK            held exclusively while the directory is open
//! ```
//!
//! Every event is flushed and synced before it is applied in memory.
//! Erasure compacts the journal into a new snapshot so that removed data
//! does not survive on disk.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation_store::{AnnotationRecord, AnnotationStore};
use crate::corpus::{self, CorpusError, Dataset};
use crate::ids::{CampaignId, LeaseId};
use crate::onboarding::{AnnotatorSession, Campaign, ConsentRecord, DisclosureVersion, InviteLink, Onboarding};
use crate::workload::{Lease, Workload};

pub const DATASET_FILE: &str = "dataset.json";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("data directory {0} is in use by another process")]
    Locked(PathBuf),
    #[error("corrupt journal at line {line}: {message}")]
    CorruptJournal { line: usize, message: String },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("no dataset in {0}; run ingest first")]
    DatasetMissing(PathBuf),
    #[error("dataset digest {found} does not match the state's {expected}")]
    DatasetMismatch { expected: String, found: String },
    #[error("a different dataset is already in use in {0}")]
    DatasetInUse(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    CampaignCreated {
        campaign: Campaign,
    },
    CampaignPublished {
        campaign_id: CampaignId,
        version: DisclosureVersion,
    },
    LinkMinted {
        link: InviteLink,
    },
    SessionStarted {
        session: AnnotatorSession,
        consent: ConsentRecord,
    },
    LeaseIssued {
        campaign_id: CampaignId,
        lease: Lease,
    },
    LeasesExpired {
        campaign_id: CampaignId,
        lease_ids: Vec<LeaseId>,
    },
    LeaseReleased {
        campaign_id: CampaignId,
        lease_id: LeaseId,
    },
    Submitted {
        campaign_id: CampaignId,
        lease_id: LeaseId,
        record: AnnotationRecord,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub dataset_digest: String,
    pub onboarding: Onboarding,
    pub workloads: BTreeMap<CampaignId, Workload>,
    pub store: AnnotationStore,
}

#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    file: File,
    events: usize,
    _lock: File,
}

fn lock_dir(dir: &Path) -> Result<File, StorageError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(LOCK_FILE);
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(io_err(&path))?;
    match lock.try_lock() {
        Ok(()) => Ok(lock),
        Err(fs::TryLockError::WouldBlock) => Err(StorageError::Locked(dir.to_owned())),
        Err(fs::TryLockError::Error(e)) => Err(StorageError::Io { path, source: e }),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Some(parent) = path.parent() {
        // Persist the rename itself; not every platform supports syncing a directory.
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, StorageError> {
    let path = dir.join(DATASET_FILE);
    if !path.exists() {
        return Err(StorageError::DatasetMissing(dir.to_owned()));
    }
    Ok(corpus::load_dataset(&path)?)
}

/// Stores `dataset` as the directory's dataset. Replacing a dataset is only
/// allowed while no state refers to it.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), StorageError> {
    let _lock = lock_dir(dir)?;
    let path = dir.join(DATASET_FILE);
    if path.exists() {
        let existing = corpus::load_dataset(&path)?;
        if existing.digest() == dataset.digest() {
            return Ok(());
        }
        let journal = dir.join(JOURNAL_FILE);
        let has_journal = fs::metadata(&journal).map(|m| m.len() > 0).unwrap_or(false);
        if has_journal || dir.join(SNAPSHOT_FILE).exists() {
            return Err(StorageError::DatasetInUse(dir.to_owned()));
        }
    }
    write_atomic(&path, dataset.to_json_pretty().as_bytes())
}

/// Initializes an empty data directory with `dataset` and `snapshot`.
pub fn install(dir: &Path, dataset: &Dataset, snapshot: &Snapshot) -> Result<(), StorageError> {
    if snapshot.dataset_digest != dataset.digest() {
        return Err(StorageError::DatasetMismatch {
            expected: snapshot.dataset_digest.clone(),
            found: dataset.digest(),
        });
    }
    let _lock = lock_dir(dir)?;
    let journal = dir.join(JOURNAL_FILE);
    let has_journal = fs::metadata(&journal).map(|m| m.len() > 0).unwrap_or(false);
    if has_journal || dir.join(SNAPSHOT_FILE).exists() || dir.join(DATASET_FILE).exists() {
        return Err(StorageError::DatasetInUse(dir.to_owned()));
    }
    write_atomic(&dir.join(DATASET_FILE), dataset.to_json_pretty().as_bytes())?;
    let bytes = serde_json::to_vec(snapshot).expect("snapshot serialization is infallible");
    write_atomic(&dir.join(SNAPSHOT_FILE), &bytes)
}

impl Journal {
    /// Locks the directory and reads back the snapshot and journal tail.
    pub fn open(dir: &Path) -> Result<(Journal, Option<Snapshot>, Vec<Event>), StorageError> {
        let lock = lock_dir(dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(io_err(&snap_path))?;
            Some(serde_json::from_str(&text).map_err(|e| StorageError::CorruptSnapshot(e.to_string()))?)
        } else {
            None
        };

        let path = dir.join(JOURNAL_FILE);
        let mut events = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let f = File::open(&path).map_err(io_err(&path))?;
            let mut reader = BufReader::new(f);
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(io_err(&path))?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                let complete = line.ends_with('\n');
                match serde_json::from_str::<Event>(line.trim_end()) {
                    Ok(ev) if complete => {
                        events.push(ev);
                        valid_len += n as u64;
                    }
                    // A torn final write is dropped; anything else is corruption.
                    _ if !complete => break,
                    Ok(_) => unreachable!(),
                    Err(e) => {
                        return Err(StorageError::CorruptJournal {
                            line: lineno,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.set_len(valid_len).map_err(io_err(&path))?;
        let journal = Journal {
            dir: dir.to_owned(),
            file,
            events: events.len(),
            _lock: lock,
        };
        Ok((journal, snapshot, events))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Events written since the last compaction.
    pub fn len(&self) -> usize {
        self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events == 0
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StorageError> {
        let path = self.dir.join(JOURNAL_FILE);
        let mut line = serde_json::to_vec(event).expect("event serialization is infallible");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))?;
        self.events += 1;
        Ok(())
    }

    /// Replaces snapshot and journal with `snapshot`.
    pub fn compact(&mut self, snapshot: &Snapshot) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec(snapshot).expect("snapshot serialization is infallible");
        write_atomic(&self.dir.join(SNAPSHOT_FILE), &bytes)?;
        let path = self.dir.join(JOURNAL_FILE);
        self.file.set_len(0).map_err(io_err(&path))?;
        self.file.sync_all().map_err(io_err(&path))?;
        self.events = 0;
        Ok(())
    }
}
