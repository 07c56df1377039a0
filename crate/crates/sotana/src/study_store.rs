//! Durable study state: `snapshot.json` plus an append-only `audit.jsonl`.
//!
//! Every accepted write is appended to the audit log first, then the
//! snapshot is rewritten atomically (temp file + rename). On open, audit
//! events newer than the snapshot's `last_seq` are replayed, so a crash
//! between the two steps loses nothing.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sotana_core::rng::seeded;
use sotana_core::study::{Adjudication, AdjudicationSubmission, QaPair, RatingRecord, RatingSubmission, Study, StudyError};

use crate::jsonl::{read_strict, LoadError};

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// Milliseconds since the Unix epoch, or a test clock.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Rating {
        seq: u64,
        timestamp: u64,
        submission: RatingSubmission,
        /// The record this one replaced, if any.
        replaced: Option<RatingRecord>,
    },
    Adjudication {
        seq: u64,
        timestamp: u64,
        threshold: u8,
        submission: AdjudicationSubmission,
    },
}

impl AuditEvent {
    pub fn seq(&self) -> u64 {
        match self {
            AuditEvent::Rating { seq, .. } | AuditEvent::Adjudication { seq, .. } => *seq,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    last_seq: u64,
    study: Study,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{0} already exists; refusing to overwrite a study")]
    Exists(PathBuf),
    #[error(transparent)]
    Study(#[from] StudyError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// The single writer for one study directory.
pub struct StudyStore {
    dir: PathBuf,
    study: Study,
    seq: u64,
    audit: File,
    clock: Clock,
}

impl std::fmt::Debug for StudyStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StudyStore").field("dir", &self.dir).field("seq", &self.seq).finish_non_exhaustive()
    }
}

impl StudyStore {
    /// Creates a study directory from a pairs JSONL file.
    pub fn init(
        dir: &Path,
        pairs_path: &Path,
        raters: Vec<String>,
        seniors: Vec<String>,
        rng_seed: u64,
    ) -> Result<Study, StoreError> {
        let pairs: Vec<QaPair> = read_strict(pairs_path)?;
        let study = Study::new(pairs, raters, seniors, &mut seeded(rng_seed))?;
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
        let snap = dir.join(SNAPSHOT_FILE);
        if snap.exists() {
            return Err(StoreError::Exists(snap));
        }
        write_snapshot(dir, 0, &study)?;
        let audit = dir.join(AUDIT_FILE);
        File::create(&audit).map_err(io_at(&audit))?;
        Ok(study)
    }

    pub fn open(dir: &Path, clock: Clock) -> Result<Self, StoreError> {
        let snap_path = dir.join(SNAPSHOT_FILE);
        let text = std::fs::read_to_string(&snap_path).map_err(io_at(&snap_path))?;
        let snap: Snapshot = serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt { path: snap_path.clone(), message: e.to_string() })?;
        snap.study
            .check_consistency()
            .map_err(|e| StoreError::Corrupt { path: snap_path.clone(), message: e.to_string() })?;
        let (mut study, mut seq) = (snap.study, snap.last_seq);

        let audit_path = dir.join(AUDIT_FILE);
        let events: Vec<AuditEvent> = if audit_path.exists() { read_strict(&audit_path)? } else { Vec::new() };
        let mut replayed = 0;
        for ev in events {
            if ev.seq() <= seq {
                continue;
            }
            if ev.seq() != seq + 1 {
                return Err(StoreError::Corrupt {
                    path: audit_path,
                    message: format!("event sequence jumps from {seq} to {}", ev.seq()),
                });
            }
            apply(&mut study, &ev)
                .map_err(|e| StoreError::Corrupt { path: audit_path.clone(), message: format!("seq {}: {e}", ev.seq()) })?;
            seq = ev.seq();
            replayed += 1;
        }
        if replayed > 0 {
            log::info!("replayed {replayed} audit events newer than the snapshot");
            write_snapshot(dir, seq, &study)?;
        }
        let audit = OpenOptions::new().create(true).append(true).open(&audit_path).map_err(io_at(&audit_path))?;
        Ok(Self { dir: dir.to_path_buf(), study, seq, audit, clock })
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn last_seq(&self) -> u64 {
        self.seq
    }

    pub fn record_rating(&mut self, sub: &RatingSubmission) -> Result<RatingRecord, StoreError> {
        let timestamp = (self.clock)();
        let mut next = self.study.clone();
        let recorded = next.record_rating(sub, timestamp)?;
        if let Some(old) = &recorded.replaced {
            log::info!(
                "rater {} resubmitted pair {}; replacing the record from {}",
                old.rater_id,
                old.pair_id,
                old.timestamp
            );
        }
        let ev = AuditEvent::Rating {
            seq: self.seq + 1,
            timestamp,
            submission: sub.clone(),
            replaced: recorded.replaced,
        };
        self.commit(ev, next)?;
        Ok(recorded.record)
    }

    pub fn adjudicate(&mut self, sub: &AdjudicationSubmission, threshold: u8) -> Result<Adjudication, StoreError> {
        let timestamp = (self.clock)();
        let mut next = self.study.clone();
        let adj = next.adjudicate(sub, threshold, timestamp)?;
        let ev = AuditEvent::Adjudication { seq: self.seq + 1, timestamp, threshold, submission: sub.clone() };
        self.commit(ev, next)?;
        Ok(adj)
    }

    fn commit(&mut self, ev: AuditEvent, next: Study) -> Result<(), StoreError> {
        let audit_path = self.dir.join(AUDIT_FILE);
        let mut line = serde_json::to_vec(&ev).map_err(|e| io_at(&audit_path)(e.into()))?;
        line.push(b'\n');
        self.audit.write_all(&line).map_err(io_at(&audit_path))?;
        self.audit.sync_data().map_err(io_at(&audit_path))?;
        self.seq = ev.seq();
        self.study = next;
        write_snapshot(&self.dir, self.seq, &self.study)
    }
}

fn apply(study: &mut Study, ev: &AuditEvent) -> Result<(), StudyError> {
    match ev {
        AuditEvent::Rating { timestamp, submission, .. } => study.record_rating(submission, *timestamp).map(|_| ()),
        AuditEvent::Adjudication { timestamp, threshold, submission, .. } => {
            study.adjudicate(submission, *threshold, *timestamp).map(|_| ())
        }
    }
}

fn write_snapshot(dir: &Path, last_seq: u64, study: &Study) -> Result<(), StoreError> {
    let path = dir.join(SNAPSHOT_FILE);
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_at(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        serde_json::to_writer(&mut w, &SnapshotRef { last_seq, study }).map_err(|e| io_at(&path)(e.into()))?;
        w.flush().map_err(io_at(&path))?;
    }
    tmp.as_file().sync_data().map_err(io_at(&path))?;
    tmp.persist(&path).map_err(|e| io_at(&path)(e.error))?;
    Ok(())
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    last_seq: u64,
    study: &'a Study,
}
