//! Per-study pseudonyms: anonymized accession numbers, MRNs and date jitter.
//!
//! Identifiers are derived from a keyed digest of the study seed and the real
//! identifier, so regenerating a store from the same inputs reproduces them.
//! Jitter is keyed on the patient, which keeps every interval between one
//! patient's dates intact. Irreversible studies lose their real identifiers
//! when [`MappingStore::purge_links`] runs.

mod log;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use log::{FileLog, MemoryLog, Record, RecordLog, STORE_HEADER};

use crate::rules::ScriptParams;

pub const EXCLUSIONS_HEADER: &str = "# deid-exclusions v1";
pub const MAX_JITTER_DAYS: i32 = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Post-approval: links to real identifiers are kept and resolvable.
    Reversible,
    /// Pre-approval research: links are destroyed after dispatch.
    Irreversible,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reversible" => Ok(Mode::Reversible),
            "irreversible" => Ok(Mode::Irreversible),
            other => Err(format!("unknown mode `{other}` (reversible|irreversible)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRegistration {
    pub study_id: String,
    pub mode: Mode,
    pub approved_accessions: BTreeSet<String>,
    pub seed: u64,
    /// Seconds the requester expects delivery within.
    pub delivery_window: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub study_id: String,
    pub real_accession: Option<String>,
    pub anon_accession: String,
    pub real_mrn: Option<String>,
    pub anon_mrn: String,
    pub jitter_days: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Eligibility {
    Eligible,
    Ineligible(String),
}

#[derive(Debug, thiserror::Error)]
pub enum PseudonymError {
    #[error("study `{0}` is already registered")]
    DuplicateStudy(String),
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("accession is not eligible: {0}")]
    IneligibleAccession(String),
    #[error("study `{0}` is irreversible; links to real identifiers are not kept")]
    IrreversibleStudy(String),
    #[error("study `{0}` is reversible; refusing to purge its links")]
    ReversibleStudy(String),
    #[error("study `{0}` has been purged; no new mappings can be created")]
    StudyPurged(String),
    #[error("no mapping for anonymized accession `{0}`")]
    UnknownAnonId(String),
    #[error("accession already mapped under a different patient")]
    MrnMismatch,
    #[error("mapping store I/O: {0}")]
    Store(#[from] io::Error),
}

/// Identifiers opted out of research use; one per line under a version header.
#[derive(Debug, Clone, Default)]
pub struct ExclusionList {
    ids: BTreeSet<String>,
}

impl ExclusionList {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        ExclusionList {
            ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn parse(text: &str) -> io::Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == EXCLUSIONS_HEADER => {}
            None => return Ok(Self::default()),
            Some(_) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("exclusion list must start with {EXCLUSIONS_HEADER:?}"),
                ))
            }
        }
        Ok(ExclusionList {
            ids: lines
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        })
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{EXCLUSIONS_HEADER}\n");
        for id in &self.ids {
            s.push_str(id);
            s.push('\n');
        }
        s
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }
}

#[derive(Debug, Clone, Default)]
struct Patient {
    anon_mrn: String,
    jitter_days: i32,
}

#[derive(Debug, Clone)]
struct StudyState {
    reg: StudyRegistration,
    purged: bool,
    mappings: Vec<Mapping>,
    by_real: HashMap<String, usize>,
    by_anon: HashMap<String, usize>,
    patients: HashMap<String, Patient>,
    anon_mrns: BTreeSet<String>,
}

impl StudyState {
    fn new(reg: StudyRegistration) -> Self {
        StudyState {
            reg,
            purged: false,
            mappings: Vec::new(),
            by_real: HashMap::new(),
            by_anon: HashMap::new(),
            patients: HashMap::new(),
            anon_mrns: BTreeSet::new(),
        }
    }

    fn index(&mut self, m: Mapping) {
        let i = self.mappings.len();
        if let Some(real) = &m.real_accession {
            self.by_real.insert(real.clone(), i);
        }
        if let Some(mrn) = &m.real_mrn {
            self.patients.insert(
                mrn.clone(),
                Patient {
                    anon_mrn: m.anon_mrn.clone(),
                    jitter_days: m.jitter_days,
                },
            );
        }
        self.anon_mrns.insert(m.anon_mrn.clone());
        self.by_anon.insert(m.anon_accession.clone(), i);
        self.mappings.push(m);
    }

    fn purge(&mut self) -> usize {
        let mut n = 0;
        for m in &mut self.mappings {
            if m.real_accession.is_some() || m.real_mrn.is_some() {
                n += 1;
            }
            m.real_accession = None;
            m.real_mrn = None;
        }
        self.by_real.clear();
        self.patients.clear();
        self.reg.approved_accessions.clear();
        self.purged = true;
        n
    }
}

struct Inner {
    studies: BTreeMap<String, StudyState>,
    log: Box<dyn RecordLog>,
}

/// Durable registry of studies and their pseudonym mappings.
pub struct MappingStore {
    inner: RwLock<Inner>,
    exclusions: ExclusionList,
}

impl MappingStore {
    pub fn open(path: &Path) -> Result<Self, PseudonymError> {
        Self::with_log(Box::new(FileLog::new(path)))
    }

    pub fn in_memory() -> Self {
        Self::with_log(Box::new(MemoryLog::new())).expect("empty memory log loads")
    }

    pub fn with_log(mut log: Box<dyn RecordLog>) -> Result<Self, PseudonymError> {
        let records = log.load()?;
        let mut studies: BTreeMap<String, StudyState> = BTreeMap::new();
        let corrupt = |msg: String| PseudonymError::Store(io::Error::new(io::ErrorKind::InvalidData, msg));
        for rec in records {
            match rec {
                Record::Study(reg) => {
                    studies.insert(reg.study_id.clone(), StudyState::new(reg));
                }
                Record::Approve {
                    study_id,
                    accessions,
                } => {
                    let st = studies
                        .get_mut(&study_id)
                        .ok_or_else(|| corrupt(format!("approval for unknown study {study_id}")))?;
                    st.reg.approved_accessions.extend(accessions);
                }
                Record::Mapping(m) => {
                    let st = studies
                        .get_mut(&m.study_id)
                        .ok_or_else(|| corrupt(format!("mapping for unknown study {}", m.study_id)))?;
                    st.index(m);
                }
                Record::Purged { study_id } => {
                    if let Some(st) = studies.get_mut(&study_id) {
                        st.purge();
                    }
                }
            }
        }
        Ok(MappingStore {
            inner: RwLock::new(Inner { studies, log }),
            exclusions: ExclusionList::default(),
        })
    }

    pub fn with_exclusions(mut self, exclusions: ExclusionList) -> Self {
        self.exclusions = exclusions;
        self
    }

    pub fn register_study(&self, reg: StudyRegistration) -> Result<String, PseudonymError> {
        let mut inner = self.inner.write().unwrap();
        if inner.studies.contains_key(&reg.study_id) {
            return Err(PseudonymError::DuplicateStudy(reg.study_id));
        }
        inner.log.append(&Record::Study(reg.clone()))?;
        let id = reg.study_id.clone();
        inner.studies.insert(id.clone(), StudyState::new(reg));
        Ok(id)
    }

    /// Add accessions to a registered study's approved set.
    pub fn approve_accessions(
        &self,
        study_id: &str,
        accessions: &[String],
    ) -> Result<(), PseudonymError> {
        let mut inner = self.inner.write().unwrap();
        match inner.studies.get(study_id) {
            None => return Err(PseudonymError::UnknownStudy(study_id.to_string())),
            Some(st) if st.purged => {
                return Err(PseudonymError::StudyPurged(study_id.to_string()))
            }
            Some(_) => {}
        }
        inner.log.append(&Record::Approve {
            study_id: study_id.to_string(),
            accessions: accessions.to_vec(),
        })?;
        let st = inner.studies.get_mut(study_id).expect("checked above");
        st.reg.approved_accessions.extend(accessions.iter().cloned());
        Ok(())
    }

    pub fn registration(&self, study_id: &str) -> Result<StudyRegistration, PseudonymError> {
        let inner = self.inner.read().unwrap();
        inner
            .studies
            .get(study_id)
            .map(|s| s.reg.clone())
            .ok_or_else(|| PseudonymError::UnknownStudy(study_id.to_string()))
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.inner.read().unwrap().studies.keys().cloned().collect()
    }

    pub fn validate_accession(
        &self,
        study_id: &str,
        accession: &str,
    ) -> Result<Eligibility, PseudonymError> {
        let inner = self.inner.read().unwrap();
        let st = inner
            .studies
            .get(study_id)
            .ok_or_else(|| PseudonymError::UnknownStudy(study_id.to_string()))?;
        Ok(self.eligibility(&st.reg, accession))
    }

    fn eligibility(&self, reg: &StudyRegistration, accession: &str) -> Eligibility {
        if !reg.approved_accessions.contains(accession) {
            Eligibility::Ineligible("not approved".into())
        } else if self.exclusions.contains(accession) {
            Eligibility::Ineligible("excluded".into())
        } else {
            Eligibility::Eligible
        }
    }

    pub fn get_or_create_mapping(
        &self,
        study_id: &str,
        real_accession: &str,
        real_mrn: &str,
    ) -> Result<Mapping, PseudonymError> {
        let mut guard = self.inner.write().unwrap();
        let inner = &mut *guard;
        let st = inner
            .studies
            .get_mut(study_id)
            .ok_or_else(|| PseudonymError::UnknownStudy(study_id.to_string()))?;
        if st.purged {
            return Err(PseudonymError::StudyPurged(study_id.to_string()));
        }
        if let Eligibility::Ineligible(why) = self.eligibility(&st.reg, real_accession) {
            return Err(PseudonymError::IneligibleAccession(why));
        }
        if self.exclusions.contains(real_mrn) {
            return Err(PseudonymError::IneligibleAccession("excluded".into()));
        }
        if let Some(&i) = st.by_real.get(real_accession) {
            let m = &st.mappings[i];
            if m.real_mrn.as_deref() != Some(real_mrn) {
                return Err(PseudonymError::MrnMismatch);
            }
            return Ok(m.clone());
        }

        let patient = match st.patients.get(real_mrn) {
            Some(p) => p.clone(),
            None => Patient {
                anon_mrn: derive_unique(&st.reg, "mrn", real_mrn, "MRN", |c| {
                    st.anon_mrns.contains(c)
                }),
                jitter_days: derive_jitter(&st.reg, real_mrn),
            },
        };
        let anon_accession = derive_unique(&st.reg, "accession", real_accession, "ACN", |c| {
            st.by_anon.contains_key(c)
        });
        let m = Mapping {
            study_id: study_id.to_string(),
            real_accession: Some(real_accession.to_string()),
            anon_accession,
            real_mrn: Some(real_mrn.to_string()),
            anon_mrn: patient.anon_mrn,
            jitter_days: patient.jitter_days,
        };
        inner.log.append(&Record::Mapping(m.clone()))?;
        st.index(m.clone());
        Ok(m)
    }

    /// Real identifiers behind an anonymized accession (reversible studies only).
    pub fn resolve(
        &self,
        study_id: &str,
        anon_accession: &str,
    ) -> Result<(String, String), PseudonymError> {
        let inner = self.inner.read().unwrap();
        let st = inner
            .studies
            .get(study_id)
            .ok_or_else(|| PseudonymError::UnknownStudy(study_id.to_string()))?;
        if st.reg.mode == Mode::Irreversible {
            return Err(PseudonymError::IrreversibleStudy(study_id.to_string()));
        }
        let m = st
            .by_anon
            .get(anon_accession)
            .map(|&i| &st.mappings[i])
            .ok_or_else(|| PseudonymError::UnknownAnonId(anon_accession.to_string()))?;
        match (&m.real_accession, &m.real_mrn) {
            (Some(a), Some(r)) => Ok((a.clone(), r.clone())),
            _ => Err(PseudonymError::UnknownAnonId(anon_accession.to_string())),
        }
    }

    /// Erase the real identifiers of an irreversible study, on disk included.
    /// Returns how many mappings still carried them.
    pub fn purge_links(&self, study_id: &str) -> Result<usize, PseudonymError> {
        let mut guard = self.inner.write().unwrap();
        let inner = &mut *guard;
        let st = inner
            .studies
            .get_mut(study_id)
            .ok_or_else(|| PseudonymError::UnknownStudy(study_id.to_string()))?;
        if st.reg.mode == Mode::Reversible {
            return Err(PseudonymError::ReversibleStudy(study_id.to_string()));
        }
        let mut next = st.clone();
        let purged = next.purge();
        if purged == 0 && st.purged {
            return Ok(0);
        }
        // Compact so the old lines holding real identifiers are gone.
        let mut records = Vec::new();
        for (id, s) in &inner.studies {
            let s = if id == study_id { &next } else { s };
            records.extend(snapshot(s));
        }
        inner.log.rewrite(&records)?;
        inner.studies.insert(study_id.to_string(), next);
        Ok(purged)
    }

    /// All mappings of a study. Real identifiers are withheld for irreversible studies.
    pub fn export(&self, study_id: &str) -> Result<Vec<Mapping>, PseudonymError> {
        let inner = self.inner.read().unwrap();
        let st = inner
            .studies
            .get(study_id)
            .ok_or_else(|| PseudonymError::UnknownStudy(study_id.to_string()))?;
        let mut out = st.mappings.clone();
        if st.reg.mode == Mode::Irreversible {
            for m in &mut out {
                m.real_accession = None;
                m.real_mrn = None;
            }
        }
        Ok(out)
    }

    pub fn is_purged(&self, study_id: &str) -> bool {
        self.inner
            .read()
            .unwrap()
            .studies
            .get(study_id)
            .is_some_and(|s| s.purged)
    }

    /// Anonymizer parameters for one mapping.
    pub fn script_params(&self, m: &Mapping) -> Result<ScriptParams, PseudonymError> {
        let reg = self.registration(&m.study_id)?;
        Ok(ScriptParams {
            accession: m.anon_accession.clone(),
            mrn: m.anon_mrn.clone(),
            jitter: m.jitter_days,
            study_salt: study_salt(&reg),
            extra: BTreeMap::new(),
        })
    }
}

fn snapshot(st: &StudyState) -> Vec<Record> {
    let mut out = vec![Record::Study(st.reg.clone())];
    out.extend(st.mappings.iter().cloned().map(Record::Mapping));
    if st.purged {
        out.push(Record::Purged {
            study_id: st.reg.study_id.clone(),
        });
    }
    out
}

fn keyed_digest(reg: &StudyRegistration, kind: &str, real: &str, counter: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(reg.seed.to_le_bytes());
    h.update(reg.study_id.as_bytes());
    h.update([0]);
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(real.as_bytes());
    h.update([0]);
    h.update(counter.to_le_bytes());
    h.finalize().into()
}

fn digest_u64(d: &[u8; 32]) -> u64 {
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

/// `<prefix>` + 9 digits, re-drawn with a counter on collision.
fn derive_unique(
    reg: &StudyRegistration,
    kind: &str,
    real: &str,
    prefix: &str,
    taken: impl Fn(&str) -> bool,
) -> String {
    (0u32..)
        .map(|c| {
            let n = digest_u64(&keyed_digest(reg, kind, real, c)) % 1_000_000_000;
            format!("{prefix}{n:09}")
        })
        .find(|candidate| !taken(candidate))
        .expect("unbounded counter")
}

/// Uniform over [-31, 31] without 0.
fn derive_jitter(reg: &StudyRegistration, real_mrn: &str) -> i32 {
    let span = (2 * MAX_JITTER_DAYS) as u64;
    let v = (digest_u64(&keyed_digest(reg, "jitter", real_mrn, 0)) % span) as i32;
    if v < MAX_JITTER_DAYS {
        v - MAX_JITTER_DAYS
    } else {
        v - MAX_JITTER_DAYS + 1
    }
}

/// Salt for UID hashing. Derived from the seed, so it holds no real identifier.
pub fn study_salt(reg: &StudyRegistration) -> String {
    let d = keyed_digest(reg, "uid-salt", "", 0);
    hex::encode(&d[..16])
}
