use std::collections::BTreeMap;
use std::fmt;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lex::{strip_comment, tokenize, Token};
use super::{resolve_selector, RuleError, ScriptParams};
use crate::dicom::{encode_text, parse_da, DataSet, Element, Item, Tag, Value, Vr};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnonAction {
    Keep,
    Remove,
    Empty,
    Replace(String),
    Param(String),
    HashUid,
    JitterDate,
}

impl fmt::Display for AnonAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnonAction::Keep => f.write_str("keep"),
            AnonAction::Remove => f.write_str("remove"),
            AnonAction::Empty => f.write_str("empty"),
            AnonAction::Replace(_) => f.write_str("replace"),
            AnonAction::Param(name) => write!(f, "param:{name}"),
            AnonAction::HashUid => f.write_str("hashuid"),
            AnonAction::JitterDate => f.write_str("jitterdate"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnonScript {
    pub actions: BTreeMap<Tag, AnonAction>,
    /// For standard tags not listed. Only `Keep` and `Remove` are meaningful.
    pub default_action: AnonAction,
    pub private_action: AnonAction,
}

impl Default for AnonScript {
    fn default() -> Self {
        AnonScript {
            actions: BTreeMap::new(),
            default_action: AnonAction::Remove,
            private_action: AnonAction::Remove,
        }
    }
}

impl AnonScript {
    /// The single action that applies to `tag`. `private := remove` wins over
    /// any per-tag entry so that no private attribute can leak through.
    pub fn resolve(&self, tag: Tag) -> &AnonAction {
        if tag.is_private() && self.private_action == AnonAction::Remove {
            return &AnonAction::Remove;
        }
        if let Some(a) = self.actions.get(&tag) {
            return a;
        }
        if tag.is_private() {
            &self.private_action
        } else {
            &self.default_action
        }
    }
}

/// What happened to one attribute. The old value is never recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformRecord {
    /// Tag path, nested sequence items joined with `/`.
    pub tag: String,
    pub action: String,
    pub had_value: bool,
}

pub fn parse_anon_script(text: &str) -> Result<AnonScript, RuleError> {
    let mut script = AnonScript::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let (lhs, rhs) = body
            .split_once(":=")
            .ok_or_else(|| RuleError::syntax(line, "expected `<tag> := <action>`"))?;
        let (lhs, rhs) = (lhs.trim(), rhs.trim());
        let action = parse_action(rhs, line)?;
        let key = match lhs {
            "default" | "private" => lhs.to_string(),
            sel => resolve_selector(sel, line)?.to_string(),
        };
        if let Some(prev) = seen.insert(key.clone(), line) {
            return Err(RuleError::DuplicateKey {
                line,
                key: format!("{key} (first set on line {prev})"),
            });
        }
        match lhs {
            "default" | "private" => {
                if !matches!(action, AnonAction::Keep | AnonAction::Remove) {
                    return Err(RuleError::syntax(line, format!("`{lhs}` must be keep or remove")));
                }
                if lhs == "default" {
                    script.default_action = action;
                } else {
                    script.private_action = action;
                }
            }
            sel => {
                script.actions.insert(resolve_selector(sel, line)?, action);
            }
        }
    }
    Ok(script)
}

fn parse_action(rhs: &str, line: usize) -> Result<AnonAction, RuleError> {
    let simple = match rhs {
        "keep" => Some(AnonAction::Keep),
        "remove" => Some(AnonAction::Remove),
        "empty" => Some(AnonAction::Empty),
        "hashuid" => Some(AnonAction::HashUid),
        "jitterdate" => Some(AnonAction::JitterDate),
        _ => None,
    };
    if let Some(a) = simple {
        return Ok(a);
    }
    if let Some(inner) = rhs.strip_prefix("replace(").and_then(|r| r.strip_suffix(')')) {
        let tokens = tokenize(inner).map_err(|m| RuleError::syntax(line, m))?;
        return match tokens.as_slice() {
            [Token::Quoted(lit)] => Ok(AnonAction::Replace(lit.clone())),
            _ => Err(RuleError::syntax(line, "replace needs one quoted literal")),
        };
    }
    if let Some(inner) = rhs.strip_prefix("param(").and_then(|r| r.strip_suffix(')')) {
        let name = inner.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(RuleError::syntax(line, format!("bad parameter name `{name}`")));
        }
        return Ok(AnonAction::Param(name.to_string()));
    }
    Err(RuleError::syntax(line, format!("unknown action `{rhs}`")))
}

/// Deterministic digest-derived UID under the `2.25` root.
pub fn hash_uid(salt: &str, uid: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(uid.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 16];
    first.copy_from_slice(&digest[..16]);
    let out = format!("2.25.{}", u128::from_be_bytes(first));
    debug_assert!(out.len() <= 64);
    out
}

/// Shift a DA value (or the date part of a DT value) by `days`.
pub fn shift_date(value: &str, days: i64, vr: Vr) -> Option<String> {
    let shift = |d: &str| -> Option<String> {
        let date = parse_da(d)?;
        let moved = date.checked_add_signed(Duration::days(days))?;
        Some(moved.format("%Y%m%d").to_string())
    };
    if vr == Vr::DA {
        shift(value)
    } else if vr == Vr::DT {
        if value.len() < 8 || !value.is_char_boundary(8) {
            return None;
        }
        let (date, rest) = value.split_at(8);
        Some(format!("{}{}", shift(date)?, rest))
    } else {
        None
    }
}

pub fn apply_anon(
    script: &AnonScript,
    ds: &DataSet,
    params: &ScriptParams,
) -> Result<(DataSet, Vec<TransformRecord>), RuleError> {
    let mut records = Vec::new();
    let elements = transform_elements(script, &ds.elements, params, "", &mut records)?;
    Ok((
        DataSet {
            elements,
            transfer_syntax: ds.transfer_syntax.clone(),
        },
        records,
    ))
}

fn transform_elements(
    script: &AnonScript,
    elements: &BTreeMap<Tag, Element>,
    params: &ScriptParams,
    prefix: &str,
    records: &mut Vec<TransformRecord>,
) -> Result<BTreeMap<Tag, Element>, RuleError> {
    let mut out = BTreeMap::new();
    for el in elements.values() {
        let path = if prefix.is_empty() {
            el.tag.to_string()
        } else {
            format!("{prefix}/{}", el.tag)
        };
        let had_value = !el.is_empty();
        let action = script.resolve(el.tag);
        let mut record = |action: String| {
            records.push(TransformRecord {
                tag: path.clone(),
                action,
                had_value,
            })
        };
        let replaced = |text: &str| Element::new(el.tag, el.vr, encode_text(el.vr, text));

        if let Value::Sequence(items) = &el.value {
            match action {
                AnonAction::Keep => {
                    record(action.to_string());
                    let mut new_items = Vec::with_capacity(items.len());
                    for (i, item) in items.iter().enumerate() {
                        let nested = format!("{path}[{i}]");
                        let elements =
                            transform_elements(script, &item.elements, params, &nested, records)?;
                        new_items.push(Item { elements });
                    }
                    out.insert(el.tag, Element::sequence(el.tag, new_items));
                }
                AnonAction::Empty => {
                    record(action.to_string());
                    out.insert(el.tag, Element::sequence(el.tag, Vec::new()));
                }
                AnonAction::Remove => record(action.to_string()),
                _ => record("remove/not-applicable".into()),
            }
            continue;
        }

        match action {
            AnonAction::Keep => {
                record(action.to_string());
                out.insert(el.tag, el.clone());
            }
            AnonAction::Remove => record(action.to_string()),
            AnonAction::Empty => {
                record(action.to_string());
                out.insert(el.tag, Element::new(el.tag, el.vr, Vec::new()));
            }
            AnonAction::Replace(lit) => {
                record(action.to_string());
                out.insert(el.tag, replaced(lit));
            }
            AnonAction::Param(name) => {
                let value = params
                    .get(name)
                    .ok_or_else(|| RuleError::MissingParam(name.clone()))?;
                record(action.to_string());
                out.insert(el.tag, replaced(&value));
            }
            AnonAction::HashUid => {
                let hashed: Vec<String> = el
                    .strings()
                    .iter()
                    .map(|u| hash_uid(&params.study_salt, u))
                    .collect();
                record(action.to_string());
                out.insert(el.tag, replaced(&hashed.join("\\")));
            }
            AnonAction::JitterDate => {
                let values = el.strings();
                if values.is_empty() && (el.vr == Vr::DA || el.vr == Vr::DT) {
                    record(action.to_string());
                    out.insert(el.tag, el.clone());
                    continue;
                }
                let shifted: Option<Vec<String>> = values
                    .iter()
                    .map(|v| shift_date(v, i64::from(params.jitter), el.vr))
                    .collect();
                match shifted {
                    Some(v) => {
                        record(action.to_string());
                        out.insert(el.tag, replaced(&v.join("\\")));
                    }
                    None => record("remove/invalid-date".into()),
                }
            }
        }
    }
    Ok(out)
}
