use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::WorkItem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub item: WorkItem,
    pub reason: String,
    /// Whether a worker already wrote manifest entries for this item.
    pub recorded: bool,
}

#[derive(Debug, Clone)]
pub struct Lease {
    pub id: u64,
    pub item: WorkItem,
}

#[derive(Debug, Default)]
struct Inner {
    pending: VecDeque<WorkItem>,
    leased: BTreeMap<u64, (WorkItem, Instant)>,
    next_lease: u64,
    dead: Vec<DeadLetter>,
    expired: u64,
}

/// At-least-once queue. An item leaves only through `ack` or the dead-letter
/// list; an expired or refused lease puts it back with `attempt + 1`.
#[derive(Debug)]
pub struct Queue {
    inner: Mutex<Inner>,
    visibility: Duration,
    max_attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueStats {
    pub pending: usize,
    pub in_flight: usize,
    pub dead: usize,
    pub expired: u64,
}

impl Queue {
    pub fn new(visibility: Duration, max_attempts: u32) -> Self {
        Queue {
            inner: Mutex::new(Inner::default()),
            visibility,
            max_attempts: max_attempts.max(1),
        }
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    pub fn enqueue(&self, item: WorkItem) {
        self.inner.lock().unwrap().pending.push_back(item);
    }

    pub fn lease(&self) -> Option<Lease> {
        let mut q = self.inner.lock().unwrap();
        self.reap(&mut q);
        let item = q.pending.pop_front()?;
        let id = q.next_lease;
        q.next_lease += 1;
        q.leased
            .insert(id, (item.clone(), Instant::now() + self.visibility));
        Some(Lease { id, item })
    }

    /// Remove a leased item for good. False if the lease already expired.
    pub fn ack(&self, lease: &Lease) -> bool {
        self.inner.lock().unwrap().leased.remove(&lease.id).is_some()
    }

    /// Give an item back after a failed attempt.
    pub fn nack(&self, lease: &Lease, reason: &str) -> bool {
        let mut q = self.inner.lock().unwrap();
        match q.leased.remove(&lease.id) {
            Some((item, _)) => {
                self.retry(&mut q, item, reason, false);
                true
            }
            None => false,
        }
    }

    /// Park an item whose final attempt failed; its entries are already recorded.
    pub fn dead_letter(&self, lease: &Lease, reason: &str) -> bool {
        let mut q = self.inner.lock().unwrap();
        match q.leased.remove(&lease.id) {
            Some((item, _)) => {
                q.dead.push(DeadLetter {
                    item,
                    reason: reason.to_string(),
                    recorded: true,
                });
                true
            }
            None => false,
        }
    }

    fn retry(&self, q: &mut Inner, mut item: WorkItem, reason: &str, recorded: bool) {
        item.attempt += 1;
        if item.attempt >= self.max_attempts {
            q.dead.push(DeadLetter {
                item,
                reason: reason.to_string(),
                recorded,
            });
        } else {
            q.pending.push_back(item);
        }
    }

    fn reap(&self, q: &mut Inner) {
        let now = Instant::now();
        let expired: Vec<u64> = q
            .leased
            .iter()
            .filter(|(_, (_, deadline))| *deadline <= now)
            .map(|(id, _)| *id)
            .collect();
        for id in expired {
            let (item, _) = q.leased.remove(&id).expect("listed above");
            q.expired += 1;
            self.retry(q, item, "lease expired", false);
        }
    }

    /// Outstanding messages: pending plus in flight.
    pub fn depth(&self) -> usize {
        let mut q = self.inner.lock().unwrap();
        self.reap(&mut q);
        q.pending.len() + q.leased.len()
    }

    pub fn is_drained(&self) -> bool {
        self.depth() == 0
    }

    pub fn stats(&self) -> QueueStats {
        let mut q = self.inner.lock().unwrap();
        self.reap(&mut q);
        QueueStats {
            pending: q.pending.len(),
            in_flight: q.leased.len(),
            dead: q.dead.len(),
            expired: q.expired,
        }
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.inner.lock().unwrap().dead.clone()
    }

    /// Items not yet acknowledged, in-flight ones included.
    pub fn snapshot_pending(&self) -> Vec<WorkItem> {
        let q = self.inner.lock().unwrap();
        q.leased
            .values()
            .map(|(i, _)| i.clone())
            .chain(q.pending.iter().cloned())
            .collect()
    }
}

pub const SPOOL_HEADER: &str = "# deid-queue-spool v1";

/// File hand-off between a submitting process and a pool process: one
/// serialized `WorkItem` per line.
#[derive(Debug, Clone)]
pub struct QueueSpool {
    path: PathBuf,
}

impl QueueSpool {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        QueueSpool { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, items: &[WorkItem]) -> io::Result<()> {
        let fresh = !self.path.exists();
        let mut buf = Vec::new();
        if fresh {
            writeln!(buf, "{SPOOL_HEADER}")?;
        }
        for item in items {
            serde_json::to_writer(&mut buf, item).map_err(io::Error::other)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&buf)?;
        f.sync_data()
    }

    pub fn load(&self) -> io::Result<Vec<WorkItem>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SPOOL_HEADER) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: expected header {SPOOL_HEADER:?}", self.path.display()),
            ));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
            .collect()
    }

    /// Atomically replace the spool contents.
    pub fn replace(&self, items: &[WorkItem]) -> io::Result<()> {
        let tmp = self.path.with_extension("spool.tmp");
        let _ = fs::remove_file(&tmp);
        QueueSpool::new(&tmp).append(items)?;
        fs::rename(&tmp, &self.path)
    }
}
