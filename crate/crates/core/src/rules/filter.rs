use std::fmt;

use regex::Regex;

use super::lex::{strip_comment, tokenize, Token};
use super::{resolve_selector, RuleError};
use crate::dicom::{DataSet, Tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterAction {
    Accept,
    Reject,
}

#[derive(Debug, Clone)]
pub enum Operator {
    Equals(String),
    Contains(String),
    MatchesRegex(Regex),
    IsEmpty,
    IsPresent,
    IsAbsent,
}

#[derive(Debug, Clone)]
pub struct Predicate {
    pub tag: Tag,
    pub selector: String,
    pub op: Operator,
}

impl Predicate {
    /// Matching is ASCII case-insensitive except for regexes, which match as authored.
    pub fn matches(&self, ds: &DataSet) -> bool {
        let el = ds.get(self.tag);
        match &self.op {
            Operator::IsPresent => el.is_some(),
            Operator::IsAbsent => el.is_none(),
            Operator::IsEmpty => el.is_some_and(|e| e.is_empty()),
            Operator::Equals(lit) => el.is_some_and(|e| e.string().eq_ignore_ascii_case(lit)),
            Operator::Contains(lit) => {
                let lit = lit.to_ascii_uppercase();
                el.is_some_and(|e| {
                    e.strings()
                        .iter()
                        .any(|c| c.to_ascii_uppercase().contains(&lit))
                })
            }
            Operator::MatchesRegex(re) => el.is_some_and(|e| {
                let whole = e.string();
                re.is_match(&whole) || e.strings().iter().any(|c| re.is_match(c))
            }),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.op {
            Operator::Equals(l) => write!(f, "{} equals {l:?}", self.selector),
            Operator::Contains(l) => write!(f, "{} contains {l:?}", self.selector),
            Operator::MatchesRegex(r) => write!(f, "{} matches_regex {:?}", self.selector, r.as_str()),
            Operator::IsEmpty => write!(f, "{} is_empty", self.selector),
            Operator::IsPresent => write!(f, "{} is_present", self.selector),
            Operator::IsAbsent => write!(f, "{} is_absent", self.selector),
        }
    }
}

/// One filter line. All predicates must hold (`and`-joined).
#[derive(Debug, Clone)]
pub struct FilterRule {
    pub action: FilterAction,
    pub predicates: Vec<Predicate>,
    pub reason: String,
    pub line: usize,
}

impl FilterRule {
    pub fn matches(&self, ds: &DataSet) -> bool {
        self.predicates.iter().all(|p| p.matches(ds))
    }
}

#[derive(Debug, Clone)]
pub struct FilterScript {
    pub rules: Vec<FilterRule>,
    pub default_action: FilterAction,
}

impl Default for FilterScript {
    fn default() -> Self {
        FilterScript {
            rules: Vec::new(),
            default_action: FilterAction::Accept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Accept,
    Reject(String),
}

pub fn evaluate_filter(fs: &FilterScript, ds: &DataSet) -> FilterDecision {
    for rule in &fs.rules {
        if rule.matches(ds) {
            return match rule.action {
                FilterAction::Accept => FilterDecision::Accept,
                FilterAction::Reject => FilterDecision::Reject(rule.reason.clone()),
            };
        }
    }
    match fs.default_action {
        FilterAction::Accept => FilterDecision::Accept,
        FilterAction::Reject => FilterDecision::Reject("default reject".into()),
    }
}

pub fn parse_filter_script(text: &str) -> Result<FilterScript, RuleError> {
    let mut script = FilterScript::default();
    let mut default_line = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = tokenize(strip_comment(raw)).map_err(|m| RuleError::syntax(line, m))?;
        let Some(first) = tokens.first() else { continue };
        match first.word() {
            Some("default") => {
                if let Some(prev) = default_line {
                    return Err(RuleError::DuplicateKey {
                        line,
                        key: format!("default (first set on line {prev})"),
                    });
                }
                default_line = Some(line);
                script.default_action = match tokens.get(1).and_then(Token::word) {
                    Some("accept") if tokens.len() == 2 => FilterAction::Accept,
                    Some("reject") if tokens.len() == 2 => FilterAction::Reject,
                    _ => return Err(RuleError::syntax(line, "expected `default accept|reject`")),
                };
            }
            Some("accept") | Some("reject") => script.rules.push(parse_rule(&tokens, line)?),
            _ => {
                return Err(RuleError::syntax(
                    line,
                    "expected `accept`, `reject` or `default`",
                ))
            }
        }
    }
    Ok(script)
}

fn parse_rule(tokens: &[Token], line: usize) -> Result<FilterRule, RuleError> {
    let action = match tokens[0].word() {
        Some("accept") => FilterAction::Accept,
        _ => FilterAction::Reject,
    };
    let mut predicates = Vec::new();
    let mut reason = None;
    let mut i = 1;
    loop {
        let (pred, next) = parse_predicate(tokens, i, line)?;
        predicates.push(pred);
        i = next;
        match tokens.get(i).and_then(Token::word) {
            None if i == tokens.len() => break,
            Some("and") => i += 1,
            Some("reason") => {
                let text = tokens
                    .get(i + 1)
                    .and_then(Token::quoted)
                    .ok_or_else(|| RuleError::syntax(line, "reason needs a quoted string"))?;
                if i + 2 != tokens.len() {
                    return Err(RuleError::syntax(line, "trailing tokens after reason"));
                }
                reason = Some(text.to_string());
                break;
            }
            _ => return Err(RuleError::syntax(line, "expected `and`, `reason` or end of line")),
        }
    }
    let reason = reason.unwrap_or_else(|| {
        predicates
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" and ")
    });
    Ok(FilterRule {
        action,
        predicates,
        reason,
        line,
    })
}

fn parse_predicate(
    tokens: &[Token],
    start: usize,
    line: usize,
) -> Result<(Predicate, usize), RuleError> {
    let selector = tokens
        .get(start)
        .and_then(Token::word)
        .ok_or_else(|| RuleError::syntax(line, "expected attribute name or (GGGG,EEEE)"))?;
    let tag = resolve_selector(selector, line)?;
    let op_word = tokens
        .get(start + 1)
        .and_then(Token::word)
        .ok_or_else(|| RuleError::syntax(line, "expected operator"))?;
    let literal = || {
        tokens
            .get(start + 2)
            .and_then(Token::quoted)
            .map(str::to_string)
            .ok_or_else(|| RuleError::syntax(line, format!("`{op_word}` needs a quoted literal")))
    };
    let (op, next) = match op_word {
        "equals" => (Operator::Equals(literal()?), start + 3),
        "contains" => (Operator::Contains(literal()?), start + 3),
        "matches_regex" => {
            let pattern = literal()?;
            let re = Regex::new(&pattern)
                .map_err(|e| RuleError::syntax(line, format!("bad regex: {e}")))?;
            (Operator::MatchesRegex(re), start + 3)
        }
        "is_empty" => (Operator::IsEmpty, start + 2),
        "is_present" => (Operator::IsPresent, start + 2),
        "is_absent" => (Operator::IsAbsent, start + 2),
        other => return Err(RuleError::syntax(line, format!("unknown operator `{other}`"))),
    };
    Ok((
        Predicate {
            tag,
            selector: selector.to_string(),
            op,
        },
        next,
    ))
}
