//! The three rule programs applied to every instance: a metadata filter, a
//! pixel scrub catalog, and an anonymizer action table.

mod anon;
mod filter;
mod lex;
mod scrub;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use anon::{
    apply_anon, hash_uid, parse_anon_script, shift_date, AnonAction, AnonScript, TransformRecord,
};
pub use filter::{
    evaluate_filter, parse_filter_script, FilterAction, FilterDecision, FilterRule, FilterScript,
    Operator, Predicate,
};
pub use scrub::{lookup_scrub, parse_scrub_script, ScrubEntry, ScrubKey, ScrubLookup, ScrubScript};

use crate::dicom::{dict, Tag};

pub const DEFAULT_FILTER_SCRIPT: &str = include_str!("../../scripts/filter.script");
pub const DEFAULT_SCRUB_SCRIPT: &str = include_str!("../../scripts/scrubber.script");
pub const DEFAULT_ANON_SCRIPT: &str = include_str!("../../scripts/anonymizer.script");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate {key}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown attribute `{name}`")]
    UnknownAttributeAlias { line: usize, name: String },
    #[error("script parameter `{0}` is not set")]
    MissingParam(String),
    #[error("invalid script parameters: {0}")]
    InvalidParams(String),
}

impl RuleError {
    pub(crate) fn syntax(line: usize, message: impl Into<String>) -> Self {
        RuleError::Syntax {
            line,
            message: message.into(),
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            RuleError::Syntax { line, .. }
            | RuleError::DuplicateKey { line, .. }
            | RuleError::UnknownAttributeAlias { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// `(GGGG,EEEE)` or a dictionary keyword such as `Manufacturer`.
pub fn resolve_selector(selector: &str, line: usize) -> Result<Tag, RuleError> {
    if selector.starts_with('(') {
        return selector
            .parse()
            .map_err(|e: crate::dicom::ParseTagError| RuleError::syntax(line, e.to_string()));
    }
    dict::by_keyword(selector)
        .map(|e| e.tag)
        .ok_or_else(|| RuleError::UnknownAttributeAlias {
            line,
            name: selector.to_string(),
        })
}

/// Per-request values the anonymizer substitutes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptParams {
    pub accession: String,
    pub mrn: String,
    pub jitter: i32,
    pub study_salt: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl ScriptParams {
    pub fn new(
        accession: &str,
        mrn: &str,
        jitter: i32,
        study_salt: &str,
    ) -> Result<Self, RuleError> {
        let p = ScriptParams {
            accession: accession.to_string(),
            mrn: mrn.to_string(),
            jitter,
            study_salt: study_salt.to_string(),
            extra: BTreeMap::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.accession.is_empty() || self.mrn.is_empty() {
            return Err(RuleError::InvalidParams("accession and mrn must be non-empty".into()));
        }
        if self.jitter == 0 {
            return Err(RuleError::InvalidParams("jitter must be non-zero".into()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<String> {
        match name {
            "accession" => Some(self.accession.clone()),
            "mrn" => Some(self.mrn.clone()),
            "jitter" => Some(self.jitter.to_string()),
            "study_salt" => Some(self.study_salt.clone()),
            other => self.extra.get(other).cloned(),
        }
    }

    /// Build from `key=value` pairs; `accession`, `mrn` and `jitter` are required.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, RuleError> {
        let mut map: BTreeMap<String, String> = pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut take = |k: &str| {
            map.remove(k)
                .ok_or_else(|| RuleError::InvalidParams(format!("missing parameter `{k}`")))
        };
        let accession = take("accession")?;
        let mrn = take("mrn")?;
        let jitter = take("jitter")?
            .trim()
            .parse()
            .map_err(|_| RuleError::InvalidParams("jitter must be an integer".into()))?;
        let study_salt = map.remove("study_salt").unwrap_or_else(|| "deid".to_string());
        let mut p = ScriptParams::new(&accession, &mrn, jitter, &study_salt)?;
        p.extra = map;
        Ok(p)
    }
}

/// A parsed filter/scrub/anonymizer triple, shared read-only by workers.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub filter: FilterScript,
    pub scrub: ScrubScript,
    pub anon: AnonScript,
}

/// Which script a diagnostic came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptKind {
    Filter,
    Scrub,
    Anon,
}

impl std::fmt::Display for ScriptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScriptKind::Filter => "filter",
            ScriptKind::Scrub => "scrub",
            ScriptKind::Anon => "anonymizer",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{kind} script {path}: {source}")]
    Io {
        kind: ScriptKind,
        path: String,
        source: std::io::Error,
    },
    #[error("{kind} script {path}: {source}")]
    Rule {
        kind: ScriptKind,
        path: String,
        source: RuleError,
    },
}

impl RuleSet {
    pub fn parse(filter: &str, scrub: &str, anon: &str) -> Result<Self, (ScriptKind, RuleError)> {
        Ok(RuleSet {
            filter: parse_filter_script(filter).map_err(|e| (ScriptKind::Filter, e))?,
            scrub: parse_scrub_script(scrub).map_err(|e| (ScriptKind::Scrub, e))?,
            anon: parse_anon_script(anon).map_err(|e| (ScriptKind::Anon, e))?,
        })
    }

    /// The shipped default scripts.
    pub fn defaults() -> Self {
        Self::parse(DEFAULT_FILTER_SCRIPT, DEFAULT_SCRUB_SCRIPT, DEFAULT_ANON_SCRIPT)
            .expect("shipped scripts parse")
    }

    pub fn load(filter: &Path, scrub: &Path, anon: &Path) -> Result<Self, LoadError> {
        Ok(RuleSet {
            filter: load_one(ScriptKind::Filter, filter, parse_filter_script)?,
            scrub: load_one(ScriptKind::Scrub, scrub, parse_scrub_script)?,
            anon: load_one(ScriptKind::Anon, anon, parse_anon_script)?,
        })
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

fn load_one<T>(
    kind: ScriptKind,
    path: &Path,
    parse: fn(&str) -> Result<T, RuleError>,
) -> Result<T, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        kind,
        path: path.display().to_string(),
        source,
    })?;
    parse(&text).map_err(|source| LoadError::Rule {
        kind,
        path: path.display().to_string(),
        source,
    })
}
