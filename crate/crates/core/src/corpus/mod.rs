//! Synthetic corpora with planted sentinel PHI and a ground-truth ledger, and
//! a throughput benchmark over them.
//!
//! Every planted string starts with `PHI-`, so any occurrence of that prefix
//! in a de-identified output is a leak.

pub mod catalog;
mod encode;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{Duration as Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encode::{encode_file, RawElement, RawValue, Syntax};

use crate::dicom::Rect;
use crate::engine::{ErrorKind, OutcomeKind};
use crate::orchestrator::{
    run_pool, submit_request, LatencyStore, MemoryStore, ObjectStore, PoolConfig, Queue, RuleCatalog,
    ScalePolicy, ScriptRefs, SubmitRequest, ThroughputRow, DEFAULT_MAX_ATTEMPTS, DEFAULT_VISIBILITY,
};
use crate::pseudonym::{MappingStore, Mode, StudyRegistration};
use catalog::Device;

pub const PHI_PREFIX: &str = "PHI-";
pub const LEDGER_HEADER: &str = "# deid-corpus-ledger v1";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Filtered,
    Anonymized,
    Scrubbed,
    Error,
}

impl Expected {
    pub fn matches(self, kind: &OutcomeKind) -> bool {
        matches!(
            (self, kind),
            (Expected::Filtered, OutcomeKind::Filtered { .. })
                | (Expected::Anonymized, OutcomeKind::Anonymized)
                | (Expected::Scrubbed, OutcomeKind::ScrubbedAndAnonymized { .. })
                | (Expected::Error, OutcomeKind::Error { .. })
        )
    }
}

/// One kind of synthetic instance and what the shipped rules should do with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceClass {
    pub name: String,
    pub modality: String,
    pub make: String,
    pub model: String,
    pub rows: u16,
    pub cols: u16,
    pub frames: u16,
    pub bits: u16,
    pub samples: u16,
    pub sop_class: String,
    pub image_type: Vec<String>,
    pub conversion_type: Option<String>,
    pub burned_in: Option<String>,
    pub pixels: bool,
    /// `None` picks implicit or explicit VR at random per instance.
    pub syntax: Option<Syntax>,
    /// Cut the file short inside the pixel data.
    pub truncate: bool,
    /// Where burned-in text is planted.
    pub markers: Vec<Rect>,
    pub expected: Expected,
    pub expected_rects: Vec<Rect>,
}

fn sop_class_for(modality: &str) -> &'static str {
    match modality {
        "CT" => "1.2.840.10008.5.1.4.1.1.2",
        "MR" => "1.2.840.10008.5.1.4.1.1.4",
        "PT" => "1.2.840.10008.5.1.4.1.1.128",
        "US" => "1.2.840.10008.5.1.4.1.1.6.1",
        "DX" => "1.2.840.10008.5.1.4.1.1.1.1",
        "MG" => "1.2.840.10008.5.1.4.1.1.1.2",
        "CR" => "1.2.840.10008.5.1.4.1.1.1",
        _ => "1.2.840.10008.5.1.4.1.1.7",
    }
}

impl InstanceClass {
    /// A plain original image that the shipped rules anonymize.
    pub fn plain(name: &str, modality: &str, make: &str, model: &str, rows: u16, cols: u16) -> Self {
        InstanceClass {
            name: name.into(),
            modality: modality.into(),
            make: make.into(),
            model: model.into(),
            rows,
            cols,
            frames: 1,
            bits: 16,
            samples: 1,
            sop_class: sop_class_for(modality).into(),
            image_type: vec!["ORIGINAL".into(), "PRIMARY".into()],
            conversion_type: None,
            burned_in: None,
            pixels: true,
            syntax: None,
            truncate: false,
            markers: Vec::new(),
            expected: Expected::Anonymized,
            expected_rects: Vec::new(),
        }
    }

    /// An instance from a device with known annotation areas, planted there.
    pub fn scrubbed(name: &str, d: &Device) -> Self {
        let mut c = Self::plain(name, d.modality, d.make, d.model, d.rows, d.cols);
        c.markers = d.rects.to_vec();
        c.expected = Expected::Scrubbed;
        c.expected_rects = d.rects.to_vec();
        if d.modality == "US" {
            c.bits = 8;
            c.burned_in = Some("YES".into());
        }
        c
    }

    fn filtered(mut self) -> Self {
        self.expected = Expected::Filtered;
        self
    }

    fn with(mut self, f: impl FnOnce(&mut Self)) -> Self {
        f(&mut self);
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.pixels {
            if self.rows == 0 || self.cols == 0 || self.frames == 0 {
                return Err(format!("{}: empty image", self.name));
            }
            if self.bits != 8 && self.bits != 16 {
                return Err(format!("{}: bits must be 8 or 16", self.name));
            }
            if self.samples != 1 && self.samples != 3 {
                return Err(format!("{}: samples must be 1 or 3", self.name));
            }
        }
        for r in self.markers.iter().chain(&self.expected_rects) {
            if !r.fits(u32::from(self.rows), u32::from(self.cols)) {
                return Err(format!("{}: rect {r} outside {}x{}", self.name, self.cols, self.rows));
            }
        }
        Ok(())
    }
}

/// One instance per filter catalog entry that the shipped rules reject.
pub fn filter_classes() -> Vec<InstanceClass> {
    let base = |name: &str| InstanceClass::plain(name, "CT", "Acme Imaging", "Model 1", 32, 32);
    vec![
        base("vidar-film")
            .with(|c| {
                c.modality = "CR".into();
                c.make = "VIDAR".into();
                c.model = "DiagnosticPRO Advantage".into();
                c.sop_class = sop_class_for("CR").into();
                c.bits = 8;
            })
            .filtered(),
        base("encapsulated-pdf")
            .with(|c| {
                c.modality = "DOC".into();
                c.sop_class = "1.2.840.10008.5.1.4.1.1.104.1".into();
                c.pixels = false;
            })
            .filtered(),
        base("structured-report")
            .with(|c| {
                c.modality = "SR".into();
                c.sop_class = "1.2.840.10008.5.1.4.1.1.88.22".into();
                c.pixels = false;
            })
            .filtered(),
        base("presentation-state")
            .with(|c| {
                c.modality = "PR".into();
                c.sop_class = "1.2.840.10008.5.1.4.1.1.11.1".into();
                c.pixels = false;
            })
            .filtered(),
        base("raw-modality")
            .with(|c| {
                c.modality = "RAW".into();
                c.sop_class = "1.2.840.10008.5.1.4.1.1.66".into();
                c.pixels = false;
            })
            .filtered(),
        base("secondary-capture")
            .with(|c| {
                c.modality = "OT".into();
                c.sop_class = "1.2.840.10008.5.1.4.1.1.7".into();
                c.conversion_type = Some("WSD".into());
                c.bits = 8;
            })
            .filtered(),
        base("burned-in-annotation")
            .with(|c| c.burned_in = Some("YES".into()))
            .filtered(),
        base("empty-conversion-type")
            .with(|c| c.conversion_type = Some(String::new()))
            .filtered(),
        base("derived-image")
            .with(|c| c.image_type = vec!["DERIVED".into(), "PRIMARY".into()])
            .filtered(),
        base("secondary-image")
            .with(|c| c.image_type = vec!["ORIGINAL".into(), "SECONDARY".into()])
            .filtered(),
        base("video-capture")
            .with(|c| {
                c.modality = "ES".into();
                c.sop_class = "1.2.840.10008.5.1.4.1.1.77.1.1.1".into();
                c.conversion_type = Some("DV".into());
                c.bits = 8;
                c.samples = 3;
            })
            .filtered(),
    ]
}

/// Instances that would hit a bypassable reject but are whitelisted first.
/// Pairs of (first reject they would otherwise hit, class).
pub fn bypass_classes() -> Vec<(&'static str, InstanceClass)> {
    let terarecon = |name: &str, image_type: &[&str]| {
        InstanceClass::plain(name, "CT", "TeraRecon", "Aquarius iNtuition", 32, 32)
            .with(|c| c.image_type = image_type.iter().map(|s| s.to_string()).collect())
    };
    let hologic = |name: &str, image_type: &[&str]| {
        InstanceClass::plain(name, "MG", "Hologic", "SecurView", 32, 32).with(|c| {
            c.sop_class = "1.2.840.10008.5.1.4.1.1.7".into();
            c.conversion_type = Some("WSD".into());
            c.bits = 8;
            c.image_type = image_type.iter().map(|s| s.to_string()).collect();
        })
    };
    let us = &catalog::ULTRASOUND[0];
    vec![
        ("secondary-capture", hologic("hologic-capture", &["ORIGINAL", "PRIMARY"])),
        (
            "burned-in-annotation",
            InstanceClass::scrubbed("us-burned-in", us),
        ),
        ("derived-image", terarecon("terarecon-derived", &["DERIVED", "PRIMARY"])),
        (
            "derived-image",
            terarecon("terarecon-secondary", &["DERIVED", "SECONDARY"]),
        ),
        (
            "secondary-capture",
            hologic("hologic-secondary", &["DERIVED", "SECONDARY"]),
        ),
    ]
}

/// Every listed ultrasound device (scrubbed) and every unlisted one (filtered).
pub fn ultrasound_classes() -> Vec<InstanceClass> {
    let listed = catalog::ULTRASOUND.iter().enumerate().map(|(i, d)| {
        InstanceClass::scrubbed(&format!("us-listed-{i:02}"), d).with(|c| {
            // some cine loops and colour images among them
            if i % 5 == 1 {
                c.frames = 2;
                c.sop_class = "1.2.840.10008.5.1.4.1.1.3.1".into();
            }
            if i % 7 == 3 {
                c.samples = 3;
            }
        })
    });
    let unlisted = catalog::ULTRASOUND_UNLISTED
        .iter()
        .enumerate()
        .map(|(i, (make, model, rows, cols))| {
            InstanceClass::plain(&format!("us-unlisted-{i:02}"), "US", make, model, *rows, *cols)
                .with(|c| {
                    c.bits = 8;
                    c.burned_in = Some("YES".into());
                    c.markers = vec![Rect::new(0, 0, u32::from(*cols), 40)];
                })
                .filtered()
        });
    listed.chain(unlisted).collect()
}

pub fn error_classes() -> Vec<InstanceClass> {
    vec![
        InstanceClass::plain("jpeg-compressed", "CT", "Acme Imaging", "Model 1", 32, 32).with(|c| {
            c.syntax = Some(Syntax::JpegBaseline);
            c.expected = Expected::Error;
        }),
        InstanceClass::plain("truncated", "CT", "Acme Imaging", "Model 1", 32, 32).with(|c| {
            c.syntax = Some(Syntax::ExplicitLittle);
            c.truncate = true;
            c.expected = Expected::Error;
        }),
    ]
}

/// The error kind a ledger `Error` class should produce.
pub fn expected_error_kind(class: &InstanceClass) -> Option<ErrorKind> {
    match (class.expected, class.syntax) {
        (Expected::Error, Some(Syntax::JpegBaseline)) => Some(ErrorKind::UnsupportedEncoding),
        (Expected::Error, _) => Some(ErrorKind::ParseError),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub instances_per_accession: usize,
    pub accessions_per_patient: usize,
    pub classes: Vec<(InstanceClass, usize)>,
}

impl CorpusSpec {
    /// A mix in the spirit of a production stream: mostly plain CT and MR,
    /// a band of device screens that need scrubbing, broad ultrasound
    /// coverage, and the filter catalog. `errors` adds undecodable files.
    pub fn default_mix(total: usize, seed: u64, errors: bool) -> Self {
        let mut weighted: Vec<(InstanceClass, usize)> = vec![
            (InstanceClass::plain("ct-plain", "CT", "TOSHIBA", "Aquilion ONE", 128, 128), 380),
            (InstanceClass::plain("mr-plain", "MR", "SIEMENS", "Skyra", 96, 96), 150),
            (InstanceClass::plain("pt-plain", "PT", "SIEMENS", "Biograph mCT", 128, 128), 40),
            (InstanceClass::scrubbed("pt-fusion", &catalog::PET_FUSION), 40),
            (InstanceClass::scrubbed("ct-dose-ge", &catalog::CT_DOSE_GE), 10),
            (InstanceClass::scrubbed("ct-dose-siemens", &catalog::CT_DOSE_SIEMENS), 10),
            (
                InstanceClass::scrubbed("dx-label", &catalog::DX_LABEL).with(|c| c.bits = 8),
                4,
            ),
        ];
        let us = ultrasound_classes();
        let (listed, unlisted): (Vec<_>, Vec<_>) =
            us.into_iter().partition(|c| c.expected == Expected::Scrubbed);
        weighted.extend(listed.into_iter().map(|c| (c, 4)));
        weighted.extend(unlisted.into_iter().map(|c| (c, 3)));
        weighted.extend(filter_classes().into_iter().map(|c| (c, 12)));
        weighted.extend(bypass_classes().into_iter().map(|(_, c)| (c, 6)));
        if errors {
            weighted.extend(error_classes().into_iter().map(|c| (c, 5)));
        }
        let sum: usize = weighted.iter().map(|(_, w)| w).sum();
        let mut classes: Vec<(InstanceClass, usize)> = weighted
            .into_iter()
            .map(|(c, w)| (c, w * total / sum))
            .collect();
        let assigned: usize = classes.iter().map(|(_, n)| n).sum();
        classes[0].1 += total - assigned;
        classes.retain(|(_, n)| *n > 0);
        CorpusSpec {
            seed,
            instances_per_accession: 5,
            accessions_per_patient: 2,
            classes,
        }
    }

    pub fn single(class: InstanceClass, count: usize, seed: u64) -> Self {
        CorpusSpec {
            seed,
            instances_per_accession: count.max(1),
            accessions_per_patient: 1,
            classes: vec![(class, count)],
        }
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|(_, n)| n).sum()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.instances_per_accession == 0 || self.accessions_per_patient == 0 {
            return Err(CorpusError::InvalidSpec(
                "instances per accession and accessions per patient must be positive".into(),
            ));
        }
        for (c, _) in &self.classes {
            c.validate().map_err(CorpusError::InvalidSpec)?;
        }
        Ok(())
    }
}

/// Ground truth for one generated file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRecord {
    /// Input object key, `<accession>/<file>`.
    pub instance_id: String,
    pub class: String,
    pub accession: String,
    pub patient_id: String,
    pub transfer_syntax: String,
    pub phi_strings: Vec<String>,
    pub uids: Vec<String>,
    /// Original date values by tag.
    pub dates: BTreeMap<String, String>,
    pub markers: Vec<Rect>,
    pub expected: Expected,
    pub expected_rects: Vec<Rect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_error: Option<ErrorKind>,
    pub rules: String,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub key: String,
    pub bytes: Vec<u8>,
    pub record: LedgerRecord,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub instances: Vec<GeneratedInstance>,
}

impl Corpus {
    pub fn accessions(&self) -> Vec<String> {
        let mut a: Vec<String> = self
            .instances
            .iter()
            .map(|i| i.record.accession.clone())
            .collect();
        a.sort();
        a.dedup();
        a
    }

    pub fn ledger(&self) -> Vec<LedgerRecord> {
        self.instances.iter().map(|i| i.record.clone()).collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.instances.iter().map(|i| i.bytes.len() as u64).sum()
    }

    pub fn load_into(&self, store: &dyn ObjectStore) -> io::Result<()> {
        for i in &self.instances {
            store.put(&i.key, &i.bytes)?;
        }
        Ok(())
    }
}

fn uid(rng: &mut impl Rng) -> String {
    format!("2.25.{}", rng.gen::<u128>() >> 2)
}

fn fmt_date(d: NaiveDate) -> String {
    d.format("%Y%m%d").to_string()
}

/// Fill with nonzero background, then planted markers at full intensity.
fn pixel_data(class: &InstanceClass, rng: &mut impl Rng) -> Vec<u8> {
    let bps = usize::from(class.bits / 8);
    let spp = usize::from(class.samples);
    let (rows, cols) = (usize::from(class.rows), usize::from(class.cols));
    let frame_len = rows * cols * spp * bps;
    let mut data = vec![0u8; frame_len * usize::from(class.frames)];
    let mut state: u32 = rng.gen::<u32>() | 1;
    let max = if bps == 1 { 200 } else { 1000 };
    for sample in data.chunks_exact_mut(bps) {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        let v = (state % max + 1) as u16;
        sample.copy_from_slice(&v.to_le_bytes()[..bps]);
    }
    let marker: u16 = if bps == 1 { 0xFF } else { 0x0FFF };
    for f in 0..usize::from(class.frames) {
        for r in &class.markers {
            for y in r.y as usize..(r.y + r.h) as usize {
                let start = f * frame_len + (y * cols + r.x as usize) * spp * bps;
                let end = start + r.w as usize * spp * bps;
                for sample in data[start..end].chunks_exact_mut(bps) {
                    sample.copy_from_slice(&marker.to_le_bytes()[..bps]);
                }
            }
        }
    }
    data
}

struct Context<'a> {
    n: usize,
    accession: &'a str,
    patient: &'a str,
    patient_n: usize,
    study_date: NaiveDate,
    birth: NaiveDate,
    study_uid: &'a str,
}

fn build(
    class: &InstanceClass,
    ctx: &Context<'_>,
    rng: &mut impl Rng,
) -> (Vec<u8>, LedgerRecord) {
    let t = RawElement::text;
    let n = ctx.n;
    let sop_uid = uid(rng);
    let series_uid = uid(rng);
    let ref_uid = uid(rng);
    let phi = |kind: &str| format!("{PHI_PREFIX}{kind}-{n:05}");
    let name = format!("{PHI_PREFIX}NAME-{:05}^GIVEN", ctx.patient_n);
    let date = fmt_date(ctx.study_date);
    let content_date = fmt_date(ctx.study_date + Days::days(i64::from(rng.gen_range(0..2u8))));
    let planted = vec![
        name.clone(),
        ctx.patient.to_string(),
        ctx.accession.to_string(),
        phi("INST"),
        phi("DOC"),
        phi("DESC"),
        phi("OPER"),
        phi("SERIAL"),
        phi("SID"),
        phi("ADDR"),
        phi("SEQ"),
        phi("PRIV"),
        phi("PRIVVAL"),
    ];

    let mut els = vec![
        t(0x0008, 0x0005, b"CS", "ISO_IR 100"),
        t(0x0008, 0x0008, b"CS", &class.image_type.join("\\")),
        t(0x0008, 0x0012, b"DA", &date),
        t(0x0008, 0x0016, b"UI", &class.sop_class),
        t(0x0008, 0x0018, b"UI", &sop_uid),
        t(0x0008, 0x0020, b"DA", &date),
        t(0x0008, 0x0021, b"DA", &date),
        t(0x0008, 0x0022, b"DA", &date),
        t(0x0008, 0x0023, b"DA", &content_date),
        t(0x0008, 0x0030, b"TM", "101500"),
        t(0x0008, 0x0050, b"SH", ctx.accession),
        t(0x0008, 0x0060, b"CS", &class.modality),
        t(0x0008, 0x0070, b"LO", &class.make),
        t(0x0008, 0x0080, b"LO", &planted[3]),
        t(0x0008, 0x0090, b"PN", &planted[4]),
        t(0x0008, 0x1030, b"LO", &planted[5]),
        t(0x0008, 0x1070, b"PN", &planted[6]),
        t(0x0008, 0x1090, b"LO", &class.model),
        RawElement::seq(
            0x0008,
            0x1110,
            vec![vec![
                t(0x0008, 0x0080, b"LO", &planted[10]),
                t(0x0008, 0x1150, b"UI", "1.2.840.10008.3.1.2.3.1"),
                t(0x0008, 0x1155, b"UI", &ref_uid),
            ]],
        ),
        t(0x0009, 0x0010, b"LO", &planted[11]),
        t(0x0009, 0x1001, b"LO", &planted[12]),
        t(0x0010, 0x0010, b"PN", &name),
        t(0x0010, 0x0020, b"LO", ctx.patient),
        t(0x0010, 0x0030, b"DA", &fmt_date(ctx.birth)),
        t(0x0010, 0x0040, b"CS", "O"),
        t(0x0010, 0x1040, b"LO", &planted[9]),
        t(0x0018, 0x1000, b"LO", &planted[7]),
        t(0x0020, 0x000D, b"UI", ctx.study_uid),
        t(0x0020, 0x000E, b"UI", &series_uid),
        t(0x0020, 0x0010, b"SH", &planted[8]),
        t(0x0020, 0x0013, b"IS", &(n % 1000).to_string()),
    ];
    if let Some(ct) = &class.conversion_type {
        els.push(t(0x0008, 0x0064, b"CS", ct));
    }
    if class.pixels {
        let photometric = if class.samples == 3 { "RGB" } else { "MONOCHROME2" };
        els.push(RawElement::us(0x0028, 0x0002, class.samples));
        els.push(t(0x0028, 0x0004, b"CS", photometric));
        if class.samples == 3 {
            els.push(RawElement::us(0x0028, 0x0006, 0));
        }
        if class.frames > 1 {
            els.push(t(0x0028, 0x0008, b"IS", &class.frames.to_string()));
        }
        els.push(RawElement::us(0x0028, 0x0010, class.rows));
        els.push(RawElement::us(0x0028, 0x0011, class.cols));
        els.push(RawElement::us(0x0028, 0x0100, class.bits));
        els.push(RawElement::us(0x0028, 0x0101, class.bits.min(12)));
        els.push(RawElement::us(0x0028, 0x0102, class.bits.min(12) - 1));
        els.push(RawElement::us(0x0028, 0x0103, 0));
        if let Some(b) = &class.burned_in {
            els.push(t(0x0028, 0x0301, b"CS", b));
        }
        let vr = if class.bits == 8 { b"OB" } else { b"OW" };
        els.push(RawElement::bytes(0x7FE0, 0x0010, vr, pixel_data(class, rng)));
    }

    let syntax = class.syntax.unwrap_or(if rng.gen_bool(0.5) {
        Syntax::ImplicitLittle
    } else {
        Syntax::ExplicitLittle
    });
    let mut bytes = encode_file(&els, &class.sop_class, &sop_uid, syntax);
    if class.truncate {
        let keep = bytes.len() - bytes.len().clamp(1, 7);
        bytes.truncate(keep);
    }

    let mut dates = BTreeMap::new();
    for (tag, v) in [
        ("(0008,0020)", &date),
        ("(0008,0021)", &date),
        ("(0008,0022)", &date),
        ("(0008,0023)", &content_date),
    ] {
        dates.insert(tag.to_string(), v.clone());
    }
    let record = LedgerRecord {
        instance_id: String::new(),
        class: class.name.clone(),
        accession: ctx.accession.to_string(),
        patient_id: ctx.patient.to_string(),
        transfer_syntax: syntax.uid().to_string(),
        phi_strings: planted,
        uids: vec![sop_uid, series_uid, ctx.study_uid.to_string(), ref_uid],
        dates,
        markers: class.markers.clone(),
        expected: class.expected,
        expected_rects: class.expected_rects.clone(),
        expected_error: expected_error_kind(class),
        rules: "builtin".into(),
        bytes: bytes.len() as u64,
    };
    (bytes, record)
}

/// Generate a corpus in memory. The same spec always yields the same bytes.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<&InstanceClass> = spec
        .classes
        .iter()
        .flat_map(|(c, n)| std::iter::repeat_n(c, *n))
        .collect();
    order.shuffle(&mut rng);

    let epoch = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");
    let mut corpus = Corpus::default();
    let mut patient_dates: Vec<(NaiveDate, NaiveDate)> = Vec::new();
    let mut study_uids: Vec<String> = Vec::new();
    for (n, class) in order.into_iter().enumerate() {
        let acc_n = n / spec.instances_per_accession;
        let patient_n = acc_n / spec.accessions_per_patient;
        while patient_dates.len() <= patient_n {
            let base = epoch + Days::days(rng.gen_range(0..1500));
            let birth = epoch - Days::days(rng.gen_range(3000..30000));
            patient_dates.push((base, birth));
        }
        while study_uids.len() <= acc_n {
            study_uids.push(uid(&mut rng));
        }
        let (base, birth) = patient_dates[patient_n];
        let accession = format!("{PHI_PREFIX}ACC-{acc_n:05}");
        let patient = format!("{PHI_PREFIX}MRN-{patient_n:05}");
        let ctx = Context {
            n,
            accession: &accession,
            patient: &patient,
            patient_n,
            study_date: base + Days::days(37 * (acc_n % spec.accessions_per_patient) as i64),
            birth,
            study_uid: &study_uids[acc_n],
        };
        let (bytes, mut record) = build(class, &ctx, &mut rng);
        let key = format!("{accession}/{n:05}-{}.dcm", class.name);
        record.instance_id = key.clone();
        corpus.instances.push(GeneratedInstance { key, bytes, record });
    }
    Ok(corpus)
}

pub fn render_ledger(records: &[LedgerRecord]) -> String {
    let mut s = format!("{LEDGER_HEADER}\n");
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("ledger serializes"));
        s.push('\n');
    }
    s
}

pub fn parse_ledger(text: &str) -> io::Result<Vec<LedgerRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(LEDGER_HEADER) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("ledger must start with {LEDGER_HEADER:?}"),
        ));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

/// Write `<out>/inputs/<accession>/<file>.dcm`, `<out>/ledger.jsonl` and
/// `<out>/spec.json`.
pub fn generate_corpus(spec: &CorpusSpec, out: &Path) -> Result<Vec<LedgerRecord>, CorpusError> {
    let corpus = generate(spec)?;
    let inputs = out.join("inputs");
    for i in &corpus.instances {
        let path = inputs.join(&i.key);
        fs::create_dir_all(path.parent().expect("key has a directory"))?;
        fs::write(path, &i.bytes)?;
    }
    let ledger = corpus.ledger();
    fs::write(out.join("ledger.jsonl"), render_ledger(&ledger))?;
    fs::write(
        out.join("spec.json"),
        serde_json::to_vec_pretty(spec).map_err(io::Error::other)?,
    )?;
    Ok(ledger)
}

/// The directory tree the published PET/CT regression excerpt expects,
/// under `<root>/dicom-phi/PT/`.
pub fn write_pet_ct_fixtures(root: &Path, seed: u64) -> Result<Vec<LedgerRecord>, CorpusError> {
    let pt = root.join("dicom-phi").join("PT");
    let biograph = InstanceClass::plain("pt-anonymize", "PT", "SIEMENS", "Biograph mCT", 64, 64);
    let sets: Vec<(PathBuf, CorpusSpec)> = vec![
        (pt.join("Anonymize"), CorpusSpec::single(biograph.clone(), 4, seed)),
        (
            pt.join("Scrub/GE/Discovery/512x512"),
            CorpusSpec::single(InstanceClass::scrubbed("pt-fusion", &catalog::PET_FUSION), 3, seed + 1),
        ),
        (
            pt.join("Filter"),
            CorpusSpec {
                seed: seed + 2,
                instances_per_accession: 4,
                accessions_per_patient: 1,
                classes: vec![
                    (biograph.clone().with(|c| {
                        c.name = "pt-secondary-capture".into();
                        c.sop_class = "1.2.840.10008.5.1.4.1.1.7".into();
                        c.conversion_type = Some("WSD".into());
                    }).filtered(), 1),
                    (biograph.clone().with(|c| {
                        c.name = "pt-burned-in".into();
                        c.burned_in = Some("YES".into());
                    }).filtered(), 1),
                    (biograph.clone().with(|c| {
                        c.name = "pt-derived".into();
                        c.image_type = vec!["DERIVED".into(), "SECONDARY".into()];
                    }).filtered(), 1),
                    (biograph.with(|c| {
                        c.name = "pt-vidar".into();
                        c.make = "VIDAR".into();
                    }).filtered(), 1),
                ],
            },
        ),
    ];
    let mut ledger = Vec::new();
    for (dir, spec) in sets {
        fs::create_dir_all(&dir)?;
        for i in generate(&spec)?.instances {
            let file = i.key.rsplit('/').next().expect("nonempty key");
            fs::write(dir.join(file), &i.bytes)?;
            ledger.push(i.record);
        }
    }
    Ok(ledger)
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workers: Vec<usize>,
    pub scripts: ScriptRefs,
    pub cadence: Duration,
    pub study_seed: u64,
    /// Added to every input read, to model a networked object store.
    pub input_latency: Option<Duration>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            workers: vec![1, 2, 4],
            scripts: ScriptRefs::default(),
            cadence: Duration::from_millis(100),
            study_seed: 1,
            input_latency: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub workers: usize,
    #[serde(flatten)]
    pub row: ThroughputRow,
    pub errors: u64,
    pub dead_letters: usize,
    /// `throughput(n) / (n * throughput(1))`
    pub efficiency: f64,
    pub output_hash: String,
}

/// Run the corpus through a fresh pool once per worker count. Outputs go to
/// the store `output_for(n)` returns.
pub fn run_benchmark(
    corpus: &Corpus,
    cfg: &BenchConfig,
    mut output_for: impl FnMut(usize) -> io::Result<Arc<dyn ObjectStore>>,
) -> io::Result<Vec<BenchRow>> {
    let memory = Arc::new(MemoryStore::new());
    corpus.load_into(&*memory)?;
    let input: Arc<dyn ObjectStore> = match cfg.input_latency {
        Some(latency) => Arc::new(LatencyStore::new(memory, latency)),
        None => memory,
    };
    let accessions = corpus.accessions();
    let catalog = Arc::new(RuleCatalog::new());
    let mut rows: Vec<BenchRow> = Vec::new();
    for &n in &cfg.workers {
        let mappings = MappingStore::in_memory();
        mappings
            .register_study(StudyRegistration {
                study_id: "BENCH".into(),
                mode: Mode::Irreversible,
                approved_accessions: accessions.iter().cloned().collect(),
                seed: cfg.study_seed,
                delivery_window: 3600,
            })
            .map_err(io::Error::other)?;
        let queue = Arc::new(Queue::new(DEFAULT_VISIBILITY, DEFAULT_MAX_ATTEMPTS));
        submit_request(
            &mappings,
            &*input,
            &queue,
            &SubmitRequest {
                request_id: format!("bench-{n}"),
                study_id: "BENCH".into(),
                accessions: accessions.clone(),
                scripts: cfg.scripts.clone(),
            },
        )
        .map_err(io::Error::other)?;
        let output = output_for(n)?;
        let pool = PoolConfig {
            policy: ScalePolicy {
                per_worker_rate: None,
                delivery_window: 1.0,
                min_workers: n,
                max_workers: n,
            },
            cadence: cfg.cadence,
            ..PoolConfig::default()
        };
        let report = run_pool(&pool, queue, input.clone(), output.clone(), catalog.clone())?;
        rows.push(BenchRow {
            workers: n,
            row: report.row,
            errors: report.counts.errors,
            dead_letters: report.dead_letters.len(),
            efficiency: 0.0,
            output_hash: output.content_hash()?,
        });
    }
    let base = rows
        .iter()
        .find(|r| r.workers == 1)
        .map(|r| r.row.throughput);
    for r in &mut rows {
        r.efficiency = match base {
            Some(b) if b > 0.0 => r.row.throughput / (r.workers as f64 * b),
            _ => 0.0,
        };
    }
    Ok(rows)
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let table: Vec<(String, ThroughputRow)> = rows
        .iter()
        .map(|r| (format!("{} worker(s)", r.workers), r.row))
        .collect();
    let mut s = crate::orchestrator::render_table(&table);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{} worker(s): efficiency {:.2}, errors {}, dead-lettered {}\n",
            r.workers, r.efficiency, r.errors, r.dead_letters
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicom::{decode_pixels, parse_file, tags, write_file};
    use crate::engine::deid_bytes;
    use crate::rules::{RuleSet, ScriptParams};

    #[test]
    fn deterministic() {
        let spec = CorpusSpec::default_mix(60, 9, true);
        assert_eq!(spec.total(), 60);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.instances.len(), 60);
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.key, y.key);
            assert_eq!(x.bytes, y.bytes);
        }
        let c = generate(&CorpusSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.instances[0].bytes, c.instances[0].bytes);
    }

    #[test]
    fn files_parse_and_round_trip() {
        let corpus = generate(&CorpusSpec::default_mix(80, 1, false)).unwrap();
        for i in &corpus.instances {
            let ds = parse_file(&i.bytes).unwrap_or_else(|e| panic!("{}: {e}", i.key));
            assert_eq!(ds.string(tags::ACCESSION_NUMBER).unwrap(), i.record.accession);
            assert_eq!(ds.string(tags::PATIENT_ID).unwrap(), i.record.patient_id);
            let again = parse_file(&write_file(&ds)).unwrap();
            assert_eq!(again.elements, ds.elements, "{}", i.key);
        }
    }

    #[test]
    fn markers_are_planted() {
        let class = InstanceClass::scrubbed("pt", &catalog::PET_FUSION);
        let corpus = generate(&CorpusSpec::single(class, 1, 3)).unwrap();
        let ds = parse_file(&corpus.instances[0].bytes).unwrap();
        let px = decode_pixels(&ds).unwrap();
        assert_eq!(px.sample(0, 0, 256, 0), 0x0FFF);
        assert_eq!(px.sample(0, 479, 10, 0), 0x0FFF);
        assert!((0..512).all(|x| px.sample(0, 200, x, 0) != 0));
    }

    #[test]
    fn ledger_matches_pipeline() {
        let rules = RuleSet::defaults();
        let params = ScriptParams::new("ACN1", "MRN1", 4, "s").unwrap();
        let mut classes: Vec<(InstanceClass, usize)> = filter_classes().into_iter().map(|c| (c, 1)).collect();
        classes.extend(bypass_classes().into_iter().map(|(_, c)| (c, 1)));
        classes.extend(error_classes().into_iter().map(|c| (c, 1)));
        classes.extend(ultrasound_classes().into_iter().map(|c| (c, 1)));
        let spec = CorpusSpec {
            seed: 5,
            instances_per_accession: 3,
            accessions_per_patient: 2,
            classes,
        };
        for i in generate(&spec).unwrap().instances {
            let (_, o) = deid_bytes(&i.bytes, &rules, &params);
            assert!(i.record.expected.matches(&o.kind), "{}: {:?}", i.key, o.kind);
            match o.kind {
                OutcomeKind::Error { kind, .. } => assert_eq!(Some(kind), i.record.expected_error),
                OutcomeKind::ScrubbedAndAnonymized { rects } => assert_eq!(rects, i.record.expected_rects),
                _ => {}
            }
        }
    }

    #[test]
    fn ledger_round_trip() {
        let corpus = generate(&CorpusSpec::default_mix(10, 2, false)).unwrap();
        let text = render_ledger(&corpus.ledger());
        assert_eq!(parse_ledger(&text).unwrap(), corpus.ledger());
    }

    #[test]
    fn invalid_spec() {
        let mut class = InstanceClass::plain("x", "CT", "A", "B", 10, 10);
        class.markers.push(Rect::new(5, 5, 6, 1));
        assert!(matches!(
            generate(&CorpusSpec::single(class, 1, 0)),
            Err(CorpusError::InvalidSpec(_))
        ));
        let mut class = InstanceClass::plain("x", "CT", "A", "B", 10, 10);
        class.bits = 12;
        assert!(generate(&CorpusSpec::single(class, 1, 0)).is_err());
    }

    #[test]
    fn empty_benchmark() {
        let rows = run_benchmark(&Corpus::default(), &BenchConfig::default(), |_| {
            Ok(Arc::new(MemoryStore::new()) as Arc<dyn ObjectStore>)
        })
        .unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert_eq!(r.row.bytes, 0);
            assert_eq!(r.row.throughput, 0.0);
            assert_eq!(r.efficiency, 0.0);
        }
    }
}
