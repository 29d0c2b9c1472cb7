//! The per-instance pipeline: filter, then pixel scrub, then anonymize.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dicom::{
    decode_pixels, encode_pixels, parse_file, write_file, DataSet, DicomError, Rect,
};
use crate::rules::{
    apply_anon, evaluate_filter, lookup_scrub, FilterDecision, RuleSet, ScriptParams, ScrubLookup,
    TransformRecord,
};

pub const NO_WHITELIST_RULE: &str = "no scrub whitelist rule";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    ParseError,
    UnsupportedEncoding,
    RuleError,
    /// The orchestrator could not read an input, write an output, or ran out of attempts.
    Delivery,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeKind {
    Filtered { reason: String },
    Anonymized,
    ScrubbedAndAnonymized { rects: Vec<Rect> },
    Error { kind: ErrorKind, detail: String },
}

impl OutcomeKind {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::Filtered { .. } => "filtered",
            OutcomeKind::Anonymized => "anonymized",
            OutcomeKind::ScrubbedAndAnonymized { .. } => "scrubbed",
            OutcomeKind::Error { .. } => "error",
        }
    }

    pub fn has_output(&self) -> bool {
        matches!(
            self,
            OutcomeKind::Anonymized | OutcomeKind::ScrubbedAndAnonymized { .. }
        )
    }

    fn error(kind: ErrorKind, detail: impl fmt::Display) -> Self {
        OutcomeKind::Error {
            kind,
            detail: detail.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    #[serde(flatten)]
    pub kind: OutcomeKind,
    #[serde(default)]
    pub transforms: Vec<TransformRecord>,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl Outcome {
    fn bare(kind: OutcomeKind) -> Self {
        Outcome {
            kind,
            transforms: Vec::new(),
            bytes_in: 0,
            bytes_out: 0,
        }
    }
}

fn pixel_error(e: DicomError) -> OutcomeKind {
    match e {
        DicomError::UnsupportedEncoding(_) | DicomError::UnsupportedTransferSyntax(_) => {
            OutcomeKind::error(ErrorKind::UnsupportedEncoding, e)
        }
        DicomError::RectOutOfBounds { .. } => OutcomeKind::error(ErrorKind::RuleError, e),
        _ => OutcomeKind::error(ErrorKind::ParseError, e),
    }
}

/// Run one parsed instance through the pipeline. Never fails; problems
/// surface as an `Error` outcome with no output.
pub fn deid_instance(
    ds: &DataSet,
    rules: &RuleSet,
    params: &ScriptParams,
) -> (Option<DataSet>, Outcome) {
    if let Err(e) = params.validate() {
        return (None, Outcome::bare(OutcomeKind::error(ErrorKind::RuleError, e)));
    }
    if let FilterDecision::Reject(reason) = evaluate_filter(&rules.filter, ds) {
        return (None, Outcome::bare(OutcomeKind::Filtered { reason }));
    }

    let mut scrubbed;
    let (source, rects) = match lookup_scrub(&rules.scrub, ds) {
        ScrubLookup::WhitelistReject => {
            return (
                None,
                Outcome::bare(OutcomeKind::Filtered {
                    reason: NO_WHITELIST_RULE.into(),
                }),
            )
        }
        ScrubLookup::NoRule => (ds, Vec::new()),
        ScrubLookup::Rects(rects) => {
            let mut px = match decode_pixels(ds) {
                Ok(px) => px,
                Err(e) => return (None, Outcome::bare(pixel_error(e))),
            };
            for r in &rects {
                if let Err(e) = px.blank(*r) {
                    return (None, Outcome::bare(pixel_error(e)));
                }
            }
            scrubbed = ds.clone();
            encode_pixels(&mut scrubbed, &px);
            (&scrubbed, rects)
        }
    };

    match apply_anon(&rules.anon, source, params) {
        Ok((out, transforms)) => {
            let kind = if rects.is_empty() {
                OutcomeKind::Anonymized
            } else {
                OutcomeKind::ScrubbedAndAnonymized { rects }
            };
            (
                Some(out),
                Outcome {
                    kind,
                    transforms,
                    bytes_in: 0,
                    bytes_out: 0,
                },
            )
        }
        Err(e) => (None, Outcome::bare(OutcomeKind::error(ErrorKind::RuleError, e))),
    }
}

/// De-identified Part-10 bytes plus the anonymized SOP Instance UID used to key them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub bytes: Vec<u8>,
    pub sop_instance_uid: Option<String>,
}

/// Parse, de-identify and re-encode one file.
pub fn deid_bytes(
    bytes: &[u8],
    rules: &RuleSet,
    params: &ScriptParams,
) -> (Option<Output>, Outcome) {
    let bytes_in = bytes.len() as u64;
    let ds = match parse_file(bytes) {
        Ok(ds) => ds,
        Err(e @ DicomError::UnsupportedTransferSyntax(_)) => {
            let mut o = Outcome::bare(OutcomeKind::error(ErrorKind::UnsupportedEncoding, e));
            o.bytes_in = bytes_in;
            return (None, o);
        }
        Err(e) => {
            let mut o = Outcome::bare(OutcomeKind::error(ErrorKind::ParseError, e));
            o.bytes_in = bytes_in;
            return (None, o);
        }
    };
    let (out, mut outcome) = deid_instance(&ds, rules, params);
    outcome.bytes_in = bytes_in;
    let out = out.map(|ds| {
        let bytes = write_file(&ds);
        outcome.bytes_out = bytes.len() as u64;
        Output {
            sop_instance_uid: ds.sop_instance_uid(),
            bytes,
        }
    });
    (out, outcome)
}

/// Table-1 style totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub filtered: u64,
    pub anonymized: u64,
    pub scrubbed: u64,
    pub errors: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

impl Counts {
    pub fn add(&mut self, o: &Outcome) {
        match o.kind {
            OutcomeKind::Filtered { .. } => self.filtered += 1,
            OutcomeKind::Anonymized => self.anonymized += 1,
            OutcomeKind::ScrubbedAndAnonymized { .. } => self.scrubbed += 1,
            OutcomeKind::Error { .. } => self.errors += 1,
        }
        self.bytes_in += o.bytes_in;
        self.bytes_out += o.bytes_out;
    }

    pub fn merge(&mut self, other: &Counts) {
        self.filtered += other.filtered;
        self.anonymized += other.anonymized;
        self.scrubbed += other.scrubbed;
        self.errors += other.errors;
        self.bytes_in += other.bytes_in;
        self.bytes_out += other.bytes_out;
    }

    pub fn total(&self) -> u64 {
        self.filtered + self.anonymized + self.scrubbed + self.errors
    }
}

#[derive(Debug, Clone)]
pub struct InstanceResult {
    pub id: String,
    pub outcome: Outcome,
    pub output: Option<Output>,
}

#[derive(Debug, Clone, Default)]
pub struct StudyResult {
    pub instances: Vec<InstanceResult>,
    pub counts: Counts,
}

/// Run every `(id, bytes)` input. Failures are per-instance outcomes.
pub fn deid_study<'a, I>(inputs: I, rules: &RuleSet, params: &ScriptParams) -> StudyResult
where
    I: IntoIterator<Item = (String, &'a [u8])>,
{
    let mut result = StudyResult::default();
    for (id, bytes) in inputs {
        let (output, outcome) = deid_bytes(bytes, rules, params);
        result.counts.add(&outcome);
        result.instances.push(InstanceResult { id, outcome, output });
    }
    result
}
