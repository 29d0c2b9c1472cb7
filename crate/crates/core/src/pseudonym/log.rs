use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Mapping, StudyRegistration};

pub const STORE_HEADER: &str = "# deid-mapping-store v1";

/// One line of the store file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Study(StudyRegistration),
    Approve {
        study_id: String,
        accessions: Vec<String>,
    },
    Mapping(Mapping),
    Purged {
        study_id: String,
    },
}

/// Durable backing for the mapping store. `append` must not return before
/// the record would survive a restart.
pub trait RecordLog: Send + Sync {
    fn load(&mut self) -> io::Result<Vec<Record>>;
    fn append(&mut self, record: &Record) -> io::Result<()>;
    /// Atomically replace the whole log.
    fn rewrite(&mut self, records: &[Record]) -> io::Result<()>;
}

/// Newline-delimited JSON file with a version header.
pub struct FileLog {
    path: PathBuf,
}

impl FileLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

impl RecordLog for FileLog {
    fn load(&mut self) -> io::Result<Vec<Record>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != STORE_HEADER {
                    return Err(invalid(format!(
                        "{}: expected header {STORE_HEADER:?}",
                        self.path.display()
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| {
                invalid(format!("{}:{}: {e}", self.path.display(), i + 1))
            })?;
            out.push(rec);
        }
        Ok(out)
    }

    fn append(&mut self, record: &Record) -> io::Result<()> {
        let fresh = !self.path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut buf = Vec::new();
        if fresh {
            buf.extend_from_slice(STORE_HEADER.as_bytes());
            buf.push(b'\n');
        }
        serde_json::to_writer(&mut buf, record).map_err(io::Error::other)?;
        buf.push(b'\n');
        f.write_all(&buf)?;
        f.sync_data()
    }

    fn rewrite(&mut self, records: &[Record]) -> io::Result<()> {
        let tmp = self.path.with_extension("rewrite.tmp");
        {
            let mut f = File::create(&tmp)?;
            let mut buf = Vec::new();
            buf.extend_from_slice(STORE_HEADER.as_bytes());
            buf.push(b'\n');
            for r in records {
                serde_json::to_writer(&mut buf, r).map_err(io::Error::other)?;
                buf.push(b'\n');
            }
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)
    }
}

/// In-memory log, serialized the same way as the file log.
#[derive(Default)]
pub struct MemoryLog {
    lines: Vec<String>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

impl RecordLog for MemoryLog {
    fn load(&mut self) -> io::Result<Vec<Record>> {
        self.lines
            .iter()
            .map(|l| serde_json::from_str(l).map_err(|e| invalid(e.to_string())))
            .collect()
    }

    fn append(&mut self, record: &Record) -> io::Result<()> {
        self.lines
            .push(serde_json::to_string(record).map_err(io::Error::other)?);
        Ok(())
    }

    fn rewrite(&mut self, records: &[Record]) -> io::Result<()> {
        self.lines = records
            .iter()
            .map(|r| serde_json::to_string(r).map_err(io::Error::other))
            .collect::<io::Result<_>>()?;
        Ok(())
    }
}
