//! Human-readable regression scenarios run against the pipeline.
//!
//! The step grammar is a closed set of phrases, not general Gherkin:
//!
//! ```text
//! Feature: <text>
//! Background:
//! Given the pipeline uses the anonymizer script, "<path>"
//! Given the pipeline uses the pixel script, "<path>"
//! Given the pipeline uses the filter script, "<path>"
//! And script parameter "<key>" is "<value>"
//! Scenario: <text>
//! Given the DICOM directory "<path>"
//! When ran through the deid pipeline
//! Then the images SHOULD be anonymized
//! Then the resulting images should be scrubbed at <x>,<y>,<w>,<h>
//! Then the images SHOULD NOT pass the filter
//! And the dates should be jittered by <n> days
//! ```
//!
//! Lines starting with `#` and fenced-code markers are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::Serialize;

use crate::dicom::{decode_pixels, parse_da, parse_file, tags, DataSet, Rect, Tag};
use crate::engine::{deid_instance, OutcomeKind};
use crate::rules::{LoadError, RuleSet, ScriptParams};

/// The PET/CT regression excerpt, step for step.
pub const PET_CT_SUITE: &str = r#"Feature: Anonymize CT images filtering where appropriate

Background:

Given the pipeline uses the anonymizer script, "stanford-anonymizer.script"

Given the pipeline uses the pixel script, "stanford-scrubber.script"

Given the pipeline uses the filter script, "stanford-filter.script"
And script parameter "accession" is "ACN123"
And script parameter "mrn" is "MRN123"
And script parameter "jitter" is "-6"

Scenario: All files in the PT/Anonymize folder should be anonymized
  Given the DICOM directory "dicom-phi/PT/Anonymize"
  When ran through the deid pipeline
  Then the images SHOULD be anonymized

Scenario: REG-PCT01 GE PET/CT fusion
  Given the DICOM directory "dicom-phi/PT/Scrub/GE/Discovery/512x512"
  When ran through the deid pipeline
  Then the resulting images should be scrubbed at 256,0,256,22
  And the resulting images should be scrubbed at 300,22,212,80
  And the resulting images should be scrubbed at 10,478,100,10

Scenario: All files in the PT/Filter folder should be filtered
  Given the DICOM directory "dicom-phi/PT/Filter"
  When ran through the deid pipeline
  Then the images SHOULD NOT pass the filter
"#;

const DATE_TAGS: [Tag; 4] = [
    tags::STUDY_DATE,
    tags::SERIES_DATE,
    tags::ACQUISITION_DATE,
    tags::CONTENT_DATE,
];

#[derive(Debug, thiserror::Error)]
pub enum RegressionError {
    #[error("line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("background is missing {0}")]
    MissingBackground(String),
    #[error("fixture directory {0} is missing or empty")]
    FixtureMissing(PathBuf),
    #[error(transparent)]
    Scripts(#[from] LoadError),
    #[error("{0}")]
    Params(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Assertion {
    MustAnonymize,
    MustScrubAt(Rect),
    MustFilter,
    MustJitterBy(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub line: usize,
    pub directory: String,
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Background {
    pub filter: String,
    pub scrub: String,
    pub anon: String,
    /// In declaration order.
    pub params: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioSuite {
    pub feature: String,
    pub background: Background,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSuite {
    pub fn params(&self) -> Result<ScriptParams, RegressionError> {
        ScriptParams::from_pairs(
            self.background
                .params
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str())),
        )
        .map_err(|e| RegressionError::Params(e.to_string()))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Background,
    Scenario,
}

fn quoted(s: &str) -> Option<&str> {
    s.strip_prefix('"')?.strip_suffix('"')
}

/// `"<key>" is "<value>"`
fn key_value(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once(" is ")?;
    Some((quoted(k.trim())?, quoted(v.trim())?))
}

pub fn parse_suite(text: &str) -> Result<ScenarioSuite, RegressionError> {
    let mut feature = String::new();
    let mut bg = Background::default();
    let (mut filter, mut scrub, mut anon) = (None, None, None);
    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut section = Section::Top;
    let mut saw_background = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with("```") {
            continue;
        }
        let err = |message: &str| RegressionError::SyntaxError {
            line,
            message: format!("{message}: {l:?}"),
        };
        if let Some(rest) = l.strip_prefix("Feature:") {
            feature = rest.trim().to_string();
            continue;
        }
        if l == "Background:" {
            section = Section::Background;
            saw_background = true;
            continue;
        }
        if let Some(rest) = l.strip_prefix("Scenario:") {
            section = Section::Scenario;
            scenarios.push(Scenario {
                name: rest.trim().to_string(),
                line,
                directory: String::new(),
                assertions: Vec::new(),
            });
            continue;
        }
        let step = ["Given ", "When ", "Then ", "And "]
            .iter()
            .find_map(|k| l.strip_prefix(k))
            .ok_or_else(|| err("unknown step keyword"))?
            .trim();

        match section {
            Section::Top => return Err(err("step outside Background or Scenario")),
            Section::Background => {
                if let Some(rest) = step.strip_prefix("the pipeline uses the ") {
                    let (kind, path) = rest
                        .split_once(" script, ")
                        .ok_or_else(|| err("expected `<kind> script, \"<path>\"`"))?;
                    let path = quoted(path.trim()).ok_or_else(|| err("script path must be quoted"))?;
                    let slot = match kind {
                        "anonymizer" => &mut anon,
                        "pixel" => &mut scrub,
                        "filter" => &mut filter,
                        _ => return Err(err("script kind must be anonymizer, pixel or filter")),
                    };
                    *slot = Some(path.to_string());
                } else if let Some(rest) = step.strip_prefix("script parameter ") {
                    let (k, v) = key_value(rest).ok_or_else(|| err("expected `\"<key>\" is \"<value>\"`"))?;
                    bg.params.push((k.to_string(), v.to_string()));
                } else {
                    return Err(err("unknown background step"));
                }
            }
            Section::Scenario => {
                let sc = scenarios.last_mut().expect("inside a scenario");
                let lower = step.to_ascii_lowercase();
                if let Some(rest) = step.strip_prefix("the DICOM directory ") {
                    sc.directory = quoted(rest.trim())
                        .ok_or_else(|| err("directory must be quoted"))?
                        .to_string();
                } else if lower == "ran through the deid pipeline" {
                } else if lower == "the images should be anonymized" {
                    sc.assertions.push(Assertion::MustAnonymize);
                } else if lower == "the images should not pass the filter" {
                    sc.assertions.push(Assertion::MustFilter);
                } else if let Some(rest) = lower.strip_prefix("the resulting images should be scrubbed at ") {
                    let rect: Rect = rest.trim().parse().map_err(|_| err("expected x,y,w,h"))?;
                    sc.assertions.push(Assertion::MustScrubAt(rect));
                } else if let Some(n) = lower
                    .strip_prefix("the dates should be jittered by ")
                    .and_then(|r| r.strip_suffix(" days").or_else(|| r.strip_suffix(" day")))
                {
                    let days = n.trim().parse().map_err(|_| err("jitter must be an integer"))?;
                    sc.assertions.push(Assertion::MustJitterBy(days));
                } else {
                    return Err(err("unknown scenario step"));
                }
            }
        }
    }

    for (what, slot) in [("filter", &filter), ("pixel", &scrub), ("anonymizer", &anon)] {
        if slot.is_none() {
            let detail = if saw_background { "" } else { " (no Background section)" };
            return Err(RegressionError::MissingBackground(format!("the {what} script{detail}")));
        }
    }
    for key in ["accession", "mrn", "jitter"] {
        if !bg.params.iter().any(|(k, _)| k == key) {
            return Err(RegressionError::MissingBackground(format!("script parameter {key:?}")));
        }
    }
    for sc in &scenarios {
        let problem = if sc.directory.is_empty() {
            Some("has no DICOM directory")
        } else if sc.assertions.is_empty() {
            Some("has no Then step")
        } else {
            None
        };
        if let Some(p) = problem {
            return Err(RegressionError::SyntaxError {
                line: sc.line,
                message: format!("scenario {:?} {p}", sc.name),
            });
        }
    }
    (bg.filter, bg.scrub, bg.anon) = (filter.unwrap(), scrub.unwrap(), anon.unwrap());
    Ok(ScenarioSuite {
        feature,
        background: bg,
        scenarios,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub directory: String,
    pub files: usize,
    pub failures: Vec<String>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    pub feature: String,
    pub scenarios: Vec<ScenarioReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.scenarios.iter().all(ScenarioReport::passed)
    }

    pub fn render(&self) -> String {
        let mut s = format!("Feature: {}\n", self.feature);
        for sc in &self.scenarios {
            let verdict = if sc.passed() { "PASS" } else { "FAIL" };
            s.push_str(&format!("  {verdict} {} ({} files)\n", sc.name, sc.files));
            for f in &sc.failures {
                s.push_str(&format!("      {f}\n"));
            }
        }
        let passed = self.scenarios.iter().filter(|s| s.passed()).count();
        s.push_str(&format!("{passed}/{} scenarios passed\n", self.scenarios.len()));
        s
    }
}

/// Where script paths and fixture directories are resolved from.
#[derive(Debug, Clone)]
pub struct SuiteRoots {
    pub scripts: PathBuf,
    pub fixtures: PathBuf,
}

pub fn load_rules(suite: &ScenarioSuite, scripts: &Path) -> Result<RuleSet, RegressionError> {
    let bg = &suite.background;
    Ok(RuleSet::load(
        &scripts.join(&bg.filter),
        &scripts.join(&bg.scrub),
        &scripts.join(&bg.anon),
    )?)
}

fn fixture_files(dir: &Path) -> Result<Vec<PathBuf>, RegressionError> {
    let io = |source| RegressionError::Io {
        path: dir.to_path_buf(),
        source,
    };
    if !dir.is_dir() {
        return Err(RegressionError::FixtureMissing(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(RegressionError::FixtureMissing(dir.to_path_buf()));
    }
    files.sort();
    Ok(files)
}

fn shifted(original: &str, days: i64) -> Option<String> {
    let d = parse_da(original)?.checked_add_signed(Duration::days(days))?;
    Some(d.format("%Y%m%d").to_string())
}

fn check_dates(input: &DataSet, output: &DataSet, days: i64, failures: &mut Vec<String>, name: &str) {
    for tag in DATE_TAGS {
        let Some(before) = input.string(tag).filter(|s| !s.is_empty()) else {
            continue;
        };
        let want = shifted(&before, days);
        let got = output.string(tag);
        if want.is_none() || got != want {
            failures.push(format!(
                "{name}: {tag} is {got:?}, expected {before} shifted by {days} days"
            ));
        }
    }
}

fn check_file(
    path: &Path,
    assertions: &[Assertion],
    rules: &RuleSet,
    params: &ScriptParams,
    failures: &mut Vec<String>,
) {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let input = match fs::read(path).map_err(|e| e.to_string()).and_then(|b| parse_file(&b).map_err(|e| e.to_string())) {
        Ok(ds) => ds,
        Err(e) => {
            failures.push(format!("{name}: cannot read: {e}"));
            return;
        }
    };
    let (output, outcome) = deid_instance(&input, rules, params);
    for a in assertions {
        match a {
            Assertion::MustFilter => {
                if !matches!(outcome.kind, OutcomeKind::Filtered { .. }) {
                    failures.push(format!("{name}: expected filtered, got {}", outcome.kind.label()));
                }
            }
            Assertion::MustAnonymize => {
                let Some(out) = output.as_ref() else {
                    failures.push(format!("{name}: expected anonymized, got {}", outcome.kind.label()));
                    continue;
                };
                for (tag, want) in [
                    (tags::ACCESSION_NUMBER, &params.accession),
                    (tags::PATIENT_ID, &params.mrn),
                ] {
                    if out.string(tag).as_ref() != Some(want) {
                        failures.push(format!("{name}: {tag} is {:?}, expected {want:?}", out.string(tag)));
                    }
                }
                check_dates(&input, out, i64::from(params.jitter), failures, &name);
            }
            Assertion::MustJitterBy(days) => match output.as_ref() {
                Some(out) => check_dates(&input, out, *days, failures, &name),
                None => failures.push(format!("{name}: no output to check dates on")),
            },
            Assertion::MustScrubAt(rect) => {
                let Some(out) = output.as_ref() else {
                    failures.push(format!("{name}: expected scrubbed output, got {}", outcome.kind.label()));
                    continue;
                };
                match decode_pixels(out) {
                    Err(e) => failures.push(format!("{name}: {e}")),
                    Ok(px) if !rect.fits(px.rows, px.cols) => {
                        failures.push(format!("{name}: {rect} outside {}x{}", px.cols, px.rows))
                    }
                    Ok(px) => {
                        let mut nonzero = 0usize;
                        for f in 0..px.frames.len() {
                            for y in rect.y..rect.y + rect.h {
                                for x in rect.x..rect.x + rect.w {
                                    for s in 0..px.samples_per_pixel {
                                        if px.sample(f, y, x, s) != 0 {
                                            nonzero += 1;
                                        }
                                    }
                                }
                            }
                        }
                        if nonzero > 0 {
                            failures.push(format!("{name}: {nonzero} nonzero samples inside {rect}"));
                        }
                    }
                }
            }
        }
    }
}

/// Run every scenario (in parallel) and report per scenario. A missing or
/// empty fixture directory aborts the run.
pub fn run_suite(suite: &ScenarioSuite, rules: &RuleSet, fixtures: &Path) -> Result<SuiteReport, RegressionError> {
    let params = suite.params()?;
    let dirs: Vec<(&Scenario, Vec<PathBuf>)> = suite
        .scenarios
        .iter()
        .map(|sc| Ok((sc, fixture_files(&fixtures.join(&sc.directory))?)))
        .collect::<Result<_, RegressionError>>()?;
    let scenarios = std::thread::scope(|scope| {
        let handles: Vec<_> = dirs
            .iter()
            .map(|(sc, files)| {
                let params = &params;
                scope.spawn(move || {
                    let mut failures = Vec::new();
                    for f in files {
                        check_file(f, &sc.assertions, rules, params, &mut failures);
                    }
                    ScenarioReport {
                        name: sc.name.clone(),
                        directory: sc.directory.clone(),
                        files: files.len(),
                        failures,
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });
    Ok(SuiteReport {
        feature: suite.feature.clone(),
        scenarios,
    })
}

/// Parse, load scripts relative to `roots.scripts`, and run.
pub fn run_suite_file(text: &str, roots: &SuiteRoots) -> Result<SuiteReport, RegressionError> {
    let suite = parse_suite(text)?;
    let rules = load_rules(&suite, &roots.scripts)?;
    run_suite(&suite, &rules, &roots.fixtures)
}
