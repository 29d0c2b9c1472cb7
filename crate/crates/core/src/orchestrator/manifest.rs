use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{Counts, Outcome};

pub const MANIFEST_HEADER: &str = "# deid-manifest v1";

/// What happened to one input instance of one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub request_id: String,
    pub study_id: String,
    /// Real accession for reversible studies, anonymized otherwise.
    pub accession: String,
    pub instance: String,
    #[serde(flatten)]
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_key: Option<String>,
    pub worker: String,
    pub attempt: u32,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl ManifestEntry {
    pub fn key(&self) -> (String, String, String) {
        (
            self.study_id.clone(),
            self.accession.clone(),
            self.instance.clone(),
        )
    }

    /// Same entry with run-specific fields cleared, for comparing runs.
    pub fn normalized(&self) -> Self {
        ManifestEntry {
            worker: String::new(),
            attempt: 0,
            started_ms: 0,
            finished_ms: 0,
            ..self.clone()
        }
    }
}

/// Latest entry per (study, accession, instance), sorted by that key.
pub fn consolidate(entries: &[ManifestEntry]) -> Vec<ManifestEntry> {
    let mut by_key = BTreeMap::new();
    for e in entries {
        by_key.insert(e.key(), e.clone());
    }
    by_key.into_values().collect()
}

pub fn recount(entries: &[ManifestEntry]) -> Counts {
    let mut c = Counts::default();
    for e in entries {
        c.add(&e.outcome);
    }
    c
}

pub fn render_jsonl(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("entries serialize"));
        s.push('\n');
    }
    s
}

pub fn parse_jsonl(text: &str) -> io::Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        Some(_) => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("manifest must start with {MANIFEST_HEADER:?}"),
            ))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Counts, volume and throughput for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub filtered: u64,
    pub anonymized: u64,
    pub scrubbed: u64,
    pub bytes: u64,
    pub duration: f64,
    /// Input bytes per second.
    pub throughput: f64,
}

impl ThroughputRow {
    pub fn new(counts: &Counts, duration: Duration) -> Self {
        let secs = duration.as_secs_f64();
        ThroughputRow {
            filtered: counts.filtered,
            anonymized: counts.anonymized,
            scrubbed: counts.scrubbed,
            bytes: counts.bytes_in,
            duration: secs,
            throughput: if secs > 0.0 {
                counts.bytes_in as f64 / secs
            } else {
                0.0
            },
        }
    }
}

pub fn human_bytes(n: f64) -> String {
    const UNITS: [&str; 5] = ["B", "KB", "MB", "GB", "TB"];
    let mut v = n;
    let mut i = 0;
    while v >= 1000.0 && i < UNITS.len() - 1 {
        v /= 1000.0;
        i += 1;
    }
    if i == 0 {
        format!("{v:.0} {}", UNITS[i])
    } else {
        format!("{v:.2} {}", UNITS[i])
    }
}

/// Aligned text table; `label` names each row (modality, worker count, ...).
pub fn render_table(rows: &[(String, ThroughputRow)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>10} {:>11} {:>9} {:>12} {:>10} {:>14}",
        "", "filtered", "anonymized", "scrubbed", "bytes", "duration", "throughput"
    );
    for (label, r) in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>10} {:>11} {:>9} {:>12} {:>9.2}s {:>12}/s",
            label,
            r.filtered,
            r.anonymized,
            r.scrubbed,
            human_bytes(r.bytes as f64),
            r.duration,
            human_bytes(r.throughput)
        );
    }
    s
}

/// Single writer for manifest entries; producers send through cloned sinks.
pub struct ManifestWriter {
    tx: Sender<ManifestEntry>,
    handle: JoinHandle<io::Result<Vec<ManifestEntry>>>,
}

pub type ManifestSink = Sender<ManifestEntry>;

impl ManifestWriter {
    /// `journal`, when given, receives every entry as it arrives (append-only).
    pub fn start(journal: Option<PathBuf>) -> io::Result<Self> {
        let mut out = match journal {
            Some(path) => {
                let fresh = !path.exists();
                let f = OpenOptions::new().create(true).append(true).open(&path)?;
                let mut w = BufWriter::new(f);
                if fresh {
                    writeln!(w, "{MANIFEST_HEADER}")?;
                    w.flush()?;
                }
                Some(w)
            }
            None => None,
        };
        let (tx, rx) = channel::<ManifestEntry>();
        let handle = thread::spawn(move || {
            let mut all = Vec::new();
            for entry in rx {
                if let Some(w) = out.as_mut() {
                    serde_json::to_writer(&mut *w, &entry).map_err(io::Error::other)?;
                    w.write_all(b"\n")?;
                    w.flush()?;
                }
                all.push(entry);
            }
            if let Some(w) = out.as_mut() {
                w.get_ref().sync_data()?;
            }
            Ok(all)
        });
        Ok(ManifestWriter { tx, handle })
    }

    pub fn sink(&self) -> ManifestSink {
        self.tx.clone()
    }

    /// Every entry received, in arrival order. Waits for all sinks to drop.
    pub fn finish(self) -> io::Result<Vec<ManifestEntry>> {
        drop(self.tx);
        self.handle.join().expect("manifest writer panicked")
    }
}

pub fn read_journal(path: &Path) -> io::Result<Vec<ManifestEntry>> {
    let mut text = String::new();
    io::Read::read_to_string(&mut File::open(path)?, &mut text)?;
    parse_jsonl(&text)
}
