use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::dict::Vr;
use super::tag::{tags, Tag};

pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";

pub fn is_supported_syntax(uid: &str) -> bool {
    uid == IMPLICIT_VR_LE || uid == EXPLICIT_VR_LE
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Bytes(Vec<u8>),
    Sequence(Vec<Item>),
}

/// One item of a sequence: a nested, tag-ordered element map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Item {
    pub elements: BTreeMap<Tag, Element>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub tag: Tag,
    pub vr: Vr,
    pub value: Value,
}

impl Element {
    pub fn new(tag: Tag, vr: Vr, bytes: Vec<u8>) -> Self {
        Element {
            tag,
            vr,
            value: Value::Bytes(bytes),
        }
    }

    /// Text element; values are joined with `\` and padded to even length.
    pub fn text(tag: Tag, vr: Vr, values: &[&str]) -> Self {
        Element::new(tag, vr, encode_text(vr, &values.join("\\")))
    }

    pub fn u16(tag: Tag, value: u16) -> Self {
        Element::new(tag, Vr::US, value.to_le_bytes().to_vec())
    }

    pub fn sequence(tag: Tag, items: Vec<Item>) -> Self {
        Element {
            tag,
            vr: Vr::SQ,
            value: Value::Sequence(items),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        match &self.value {
            Value::Bytes(b) => b,
            Value::Sequence(_) => &[],
        }
    }

    pub fn items(&self) -> Option<&[Item]> {
        match &self.value {
            Value::Sequence(items) => Some(items),
            Value::Bytes(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.value {
            Value::Bytes(b) => b.iter().all(|&c| c == b' ' || c == 0),
            Value::Sequence(items) => items.is_empty(),
        }
    }

    /// Backslash-separated components with padding trimmed.
    pub fn strings(&self) -> Vec<String> {
        if !self.vr.is_string() && self.vr != Vr::UN {
            return Vec::new();
        }
        let raw = String::from_utf8_lossy(self.bytes());
        let trimmed = raw.trim_end_matches(['\0', ' ']);
        if trimmed.is_empty() {
            return Vec::new();
        }
        trimmed
            .split('\\')
            .map(|s| s.trim_matches(|c| c == ' ' || c == '\0').to_string())
            .collect()
    }

    /// Whole value as one trimmed string, components joined by `\`.
    pub fn string(&self) -> String {
        self.strings().join("\\")
    }

    pub fn u16s(&self) -> Vec<u16> {
        if self.vr != Vr::US {
            return Vec::new();
        }
        self.bytes()
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    }

    pub fn dates(&self) -> Vec<Option<NaiveDate>> {
        self.strings().iter().map(|s| parse_da(s)).collect()
    }
}

pub fn parse_da(s: &str) -> Option<NaiveDate> {
    if s.len() != 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y%m%d").ok()
}

pub fn encode_text(vr: Vr, s: &str) -> Vec<u8> {
    let mut bytes = s.as_bytes().to_vec();
    if bytes.len() % 2 == 1 {
        bytes.push(vr.pad_byte());
    }
    bytes
}

/// A DICOM data set (without the file meta group) and the syntax it was read in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSet {
    pub elements: BTreeMap<Tag, Element>,
    pub transfer_syntax: String,
}

impl Default for DataSet {
    fn default() -> Self {
        DataSet {
            elements: BTreeMap::new(),
            transfer_syntax: EXPLICIT_VR_LE.to_string(),
        }
    }
}

impl DataSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, tag: Tag) -> Option<&Element> {
        self.elements.get(&tag)
    }

    pub fn contains(&self, tag: Tag) -> bool {
        self.elements.contains_key(&tag)
    }

    pub fn insert(&mut self, element: Element) -> Option<Element> {
        self.elements.insert(element.tag, element)
    }

    pub fn remove(&mut self, tag: Tag) -> Option<Element> {
        self.elements.remove(&tag)
    }

    pub fn put_text(&mut self, tag: Tag, vr: Vr, value: &str) {
        self.insert(Element::text(tag, vr, &[value]));
    }

    pub fn put_u16(&mut self, tag: Tag, value: u16) {
        self.insert(Element::u16(tag, value));
    }

    /// Trimmed string value, `None` when absent.
    pub fn string(&self, tag: Tag) -> Option<String> {
        self.get(tag).map(Element::string)
    }

    pub fn u16(&self, tag: Tag) -> Option<u16> {
        self.get(tag).and_then(|e| e.u16s().first().copied())
    }

    /// Integer from an IS element.
    pub fn int(&self, tag: Tag) -> Option<i64> {
        self.get(tag)
            .and_then(|e| e.strings().first().and_then(|s| s.trim().parse().ok()))
    }

    pub fn sop_instance_uid(&self) -> Option<String> {
        self.string(tags::SOP_INSTANCE_UID)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Element> {
        self.elements.values()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}
