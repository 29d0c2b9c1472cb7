use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::lex::{strip_comment, tokenize, Token};
use super::RuleError;
use crate::dicom::{tags, DataSet, Rect};

/// Device + resolution key. Strings are stored upper-cased so lookups are
/// case-insensitive; rows/cols match exactly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScrubKey {
    pub modality: String,
    pub make: String,
    pub model: String,
    pub rows: u32,
    pub cols: u32,
}

impl ScrubKey {
    pub fn new(modality: &str, make: &str, model: &str, rows: u32, cols: u32) -> Self {
        ScrubKey {
            modality: modality.trim().to_ascii_uppercase(),
            make: make.trim().to_ascii_uppercase(),
            model: model.trim().to_ascii_uppercase(),
            rows,
            cols,
        }
    }

    /// Key for an instance; `None` when any component is missing.
    pub fn of(ds: &DataSet) -> Option<Self> {
        Some(ScrubKey::new(
            &ds.string(tags::MODALITY)?,
            &ds.string(tags::MANUFACTURER)?,
            &ds.string(tags::MANUFACTURER_MODEL_NAME)?,
            u32::from(ds.u16(tags::ROWS)?),
            u32::from(ds.u16(tags::COLUMNS)?),
        ))
    }
}

impl fmt::Display for ScrubKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "modality={} make={:?} model={:?} rows={} cols={}",
            self.modality, self.make, self.model, self.rows, self.cols
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrubEntry {
    pub key: ScrubKey,
    pub rects: Vec<Rect>,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ScrubScript {
    pub entries: BTreeMap<ScrubKey, ScrubEntry>,
    pub whitelist_only_modalities: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScrubLookup {
    Rects(Vec<Rect>),
    NoRule,
    WhitelistReject,
}

pub fn lookup_scrub(ss: &ScrubScript, ds: &DataSet) -> ScrubLookup {
    if let Some(entry) = ScrubKey::of(ds).and_then(|k| ss.entries.get(&k)) {
        return ScrubLookup::Rects(entry.rects.clone());
    }
    let modality = ds
        .string(tags::MODALITY)
        .map(|m| m.to_ascii_uppercase())
        .unwrap_or_default();
    if ss.whitelist_only_modalities.contains(&modality) {
        ScrubLookup::WhitelistReject
    } else {
        ScrubLookup::NoRule
    }
}

pub fn parse_scrub_script(text: &str) -> Result<ScrubScript, RuleError> {
    let mut script = ScrubScript::default();
    let mut current: Option<ScrubEntry> = None;

    let finish = |entry: Option<ScrubEntry>, script: &mut ScrubScript| -> Result<(), RuleError> {
        if let Some(entry) = entry {
            if let Some(prev) = script.entries.get(&entry.key) {
                return Err(RuleError::DuplicateKey {
                    line: entry.line,
                    key: format!("[{}] (first defined on line {})", entry.key, prev.line),
                });
            }
            script.entries.insert(entry.key.clone(), entry);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(inner) = body.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| RuleError::syntax(line, "section header must end with `]`"))?;
            finish(current.take(), &mut script)?;
            current = Some(ScrubEntry {
                key: parse_header(inner, line)?,
                rects: Vec::new(),
                line,
            });
            continue;
        }
        let tokens = tokenize(body).map_err(|m| RuleError::syntax(line, m))?;
        match tokens[0].word() {
            Some("policy") => {
                let modality = match (tokens.get(1).and_then(Token::word), tokens.get(2)) {
                    (Some("whitelist"), Some(Token::Word(m))) if tokens.len() == 3 => m,
                    _ => return Err(RuleError::syntax(line, "expected `policy whitelist <MODALITY>`")),
                };
                script
                    .whitelist_only_modalities
                    .insert(modality.to_ascii_uppercase());
            }
            Some("rect") => {
                let entry = current
                    .as_mut()
                    .ok_or_else(|| RuleError::syntax(line, "`rect` outside a [section]"))?;
                let spec: String = tokens[1..]
                    .iter()
                    .map(|t| t.word().unwrap_or("\""))
                    .collect::<Vec<_>>()
                    .join("");
                let rect: Rect = spec.parse().map_err(|m: String| RuleError::syntax(line, m))?;
                if !rect.fits(entry.key.rows, entry.key.cols) {
                    return Err(RuleError::syntax(
                        line,
                        format!(
                            "rect {rect} exceeds {}x{} (cols x rows)",
                            entry.key.cols, entry.key.rows
                        ),
                    ));
                }
                entry.rects.push(rect);
            }
            _ => return Err(RuleError::syntax(line, "expected `policy`, `[section]` or `rect`")),
        }
    }
    finish(current.take(), &mut script)?;
    Ok(script)
}

fn parse_header(inner: &str, line: usize) -> Result<ScrubKey, RuleError> {
    let tokens = tokenize(inner).map_err(|m| RuleError::syntax(line, m))?;
    let mut fields: BTreeMap<&str, String> = BTreeMap::new();
    let mut i = 0;
    while i < tokens.len() {
        let word = tokens[i]
            .word()
            .ok_or_else(|| RuleError::syntax(line, "expected key=value"))?;
        let (key, value) = word
            .split_once('=')
            .ok_or_else(|| RuleError::syntax(line, format!("expected key=value, got `{word}`")))?;
        let value = if value.is_empty() {
            i += 1;
            tokens
                .get(i)
                .and_then(Token::quoted)
                .ok_or_else(|| RuleError::syntax(line, format!("`{key}=` needs a value")))?
                .to_string()
        } else {
            value.to_string()
        };
        let key = match key {
            "modality" => "modality",
            "make" => "make",
            "model" => "model",
            "rows" => "rows",
            "cols" => "cols",
            other => return Err(RuleError::syntax(line, format!("unknown header key `{other}`"))),
        };
        if fields.insert(key, value).is_some() {
            return Err(RuleError::syntax(line, format!("`{key}` given twice")));
        }
        i += 1;
    }
    let get = |k: &str| {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| RuleError::syntax(line, format!("section header lacks `{k}`")))
    };
    let dim = |k: &str| -> Result<u32, RuleError> {
        get(k)?
            .parse()
            .map_err(|_| RuleError::syntax(line, format!("`{k}` must be a number")))
    };
    Ok(ScrubKey::new(
        &get("modality")?,
        &get("make")?,
        &get("model")?,
        dim("rows")?,
        dim("cols")?,
    ))
}
