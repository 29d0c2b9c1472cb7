//! A deliberately separate Part-10 encoder for synthetic files. It shares no
//! code with the main writer so that parsing its output is a real check.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Syntax {
    ImplicitLittle,
    ExplicitLittle,
    /// Explicit VR little endian framing under a JPEG Baseline UID.
    JpegBaseline,
}

impl Syntax {
    pub fn uid(self) -> &'static str {
        match self {
            Syntax::ImplicitLittle => "1.2.840.10008.1.2",
            Syntax::ExplicitLittle => "1.2.840.10008.1.2.1",
            Syntax::JpegBaseline => "1.2.840.10008.1.2.4.50",
        }
    }

    fn explicit(self) -> bool {
        self != Syntax::ImplicitLittle
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawValue {
    Bytes(Vec<u8>),
    Items(Vec<Vec<RawElement>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawElement {
    pub group: u16,
    pub element: u16,
    pub vr: [u8; 2],
    pub value: RawValue,
}

impl RawElement {
    pub fn text(group: u16, element: u16, vr: &[u8; 2], s: &str) -> Self {
        let mut b = s.as_bytes().to_vec();
        if b.len() % 2 == 1 {
            b.push(if vr == b"UI" { 0 } else { b' ' });
        }
        RawElement {
            group,
            element,
            vr: *vr,
            value: RawValue::Bytes(b),
        }
    }

    pub fn us(group: u16, element: u16, v: u16) -> Self {
        RawElement {
            group,
            element,
            vr: *b"US",
            value: RawValue::Bytes(v.to_le_bytes().to_vec()),
        }
    }

    pub fn bytes(group: u16, element: u16, vr: &[u8; 2], mut b: Vec<u8>) -> Self {
        if b.len() % 2 == 1 {
            b.push(0);
        }
        RawElement {
            group,
            element,
            vr: *vr,
            value: RawValue::Bytes(b),
        }
    }

    pub fn seq(group: u16, element: u16, items: Vec<Vec<RawElement>>) -> Self {
        RawElement {
            group,
            element,
            vr: *b"SQ",
            value: RawValue::Items(items),
        }
    }
}

fn long_form(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR"
            | b"UT" | b"UV"
    )
}

fn put_header(out: &mut Vec<u8>, g: u16, e: u16, vr: &[u8; 2], len: u32, explicit: bool) {
    out.extend_from_slice(&g.to_le_bytes());
    out.extend_from_slice(&e.to_le_bytes());
    if !explicit {
        out.extend_from_slice(&len.to_le_bytes());
    } else if long_form(vr) {
        out.extend_from_slice(vr);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&len.to_le_bytes());
    } else {
        out.extend_from_slice(vr);
        out.extend_from_slice(&(len as u16).to_le_bytes());
    }
}

fn encode_elements(elements: &[RawElement], explicit: bool, out: &mut Vec<u8>) {
    let mut sorted: Vec<&RawElement> = elements.iter().collect();
    sorted.sort_by_key(|e| (e.group, e.element));
    for el in sorted {
        match &el.value {
            RawValue::Bytes(b) => {
                put_header(out, el.group, el.element, &el.vr, b.len() as u32, explicit);
                out.extend_from_slice(b);
            }
            RawValue::Items(items) => {
                let mut body = Vec::new();
                for item in items {
                    let mut inner = Vec::new();
                    encode_elements(item, explicit, &mut inner);
                    body.extend_from_slice(&0xFFFEu16.to_le_bytes());
                    body.extend_from_slice(&0xE000u16.to_le_bytes());
                    body.extend_from_slice(&(inner.len() as u32).to_le_bytes());
                    body.extend_from_slice(&inner);
                }
                put_header(out, el.group, el.element, b"SQ", body.len() as u32, explicit);
                out.extend_from_slice(&body);
            }
        }
    }
}

/// Preamble, magic, file meta group and the dataset in `syntax`.
pub fn encode_file(elements: &[RawElement], sop_class: &str, sop_instance: &str, syntax: Syntax) -> Vec<u8> {
    let meta = [
        RawElement::bytes(0x0002, 0x0001, b"OB", vec![0, 1]),
        RawElement::text(0x0002, 0x0002, b"UI", sop_class),
        RawElement::text(0x0002, 0x0003, b"UI", sop_instance),
        RawElement::text(0x0002, 0x0010, b"UI", syntax.uid()),
        RawElement::text(0x0002, 0x0012, b"UI", "2.25.1"),
    ];
    let mut meta_body = Vec::new();
    encode_elements(&meta, true, &mut meta_body);

    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    put_header(&mut out, 0x0002, 0x0000, b"UL", 4, true);
    out.extend_from_slice(&(meta_body.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_body);
    encode_elements(elements, syntax.explicit(), &mut out);
    out
}
