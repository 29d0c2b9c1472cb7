use std::collections::BTreeMap;

use super::dataset::{encode_text, DataSet, Element, Item, Value, EXPLICIT_VR_LE};
use super::dict::Vr;
use super::tag::{tags, Tag};

pub const IMPLEMENTATION_CLASS_UID: &str = "2.25.160693804425899027554196209234116260";
pub const IMPLEMENTATION_VERSION_NAME: &str = "DEID_0_1";

/// Serialize as a Part-10 file in Explicit VR Little Endian. The meta group
/// is derived from the data set, so SOP identifiers never drift apart.
pub fn write_file(ds: &DataSet) -> Vec<u8> {
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");

    let mut meta = Vec::new();
    write_element(
        &mut meta,
        &Element::new(tags::FILE_META_VERSION, Vr::OB, vec![0x00, 0x01]),
    );
    if let Some(uid) = ds.string(tags::SOP_CLASS_UID) {
        write_element(
            &mut meta,
            &Element::new(tags::MEDIA_STORAGE_SOP_CLASS_UID, Vr::UI, encode_text(Vr::UI, &uid)),
        );
    }
    if let Some(uid) = ds.string(tags::SOP_INSTANCE_UID) {
        write_element(
            &mut meta,
            &Element::new(
                tags::MEDIA_STORAGE_SOP_INSTANCE_UID,
                Vr::UI,
                encode_text(Vr::UI, &uid),
            ),
        );
    }
    for (tag, vr, value) in [
        (tags::TRANSFER_SYNTAX_UID, Vr::UI, EXPLICIT_VR_LE),
        (tags::IMPLEMENTATION_CLASS_UID, Vr::UI, IMPLEMENTATION_CLASS_UID),
        (tags::IMPLEMENTATION_VERSION_NAME, Vr::SH, IMPLEMENTATION_VERSION_NAME),
    ] {
        write_element(&mut meta, &Element::new(tag, vr, encode_text(vr, value)));
    }

    write_element(
        &mut out,
        &Element::new(
            tags::FILE_META_GROUP_LENGTH,
            Vr::UL,
            (meta.len() as u32).to_le_bytes().to_vec(),
        ),
    );
    out.extend_from_slice(&meta);
    write_elements(&mut out, &ds.elements);
    out
}

fn write_elements(out: &mut Vec<u8>, elements: &BTreeMap<Tag, Element>) {
    for el in elements.values() {
        if el.tag.is_meta() {
            continue;
        }
        write_element(out, el);
    }
}

fn write_tag(out: &mut Vec<u8>, tag: Tag) {
    out.extend_from_slice(&tag.group().to_le_bytes());
    out.extend_from_slice(&tag.element().to_le_bytes());
}

fn write_element(out: &mut Vec<u8>, el: &Element) {
    match &el.value {
        Value::Bytes(bytes) => {
            let mut vr = el.vr;
            if !vr.has_long_length() && bytes.len() > u16::MAX as usize {
                vr = Vr::UN;
            }
            write_tag(out, el.tag);
            out.extend_from_slice(&vr.0);
            if vr.has_long_length() {
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            } else {
                out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            }
            out.extend_from_slice(bytes);
        }
        Value::Sequence(items) => {
            let body = encode_items(items);
            write_tag(out, el.tag);
            out.extend_from_slice(&Vr::SQ.0);
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(body.len() as u32).to_le_bytes());
            out.extend_from_slice(&body);
        }
    }
}

fn encode_items(items: &[Item]) -> Vec<u8> {
    let mut body = Vec::new();
    for item in items {
        let mut content = Vec::new();
        write_elements(&mut content, &item.elements);
        write_tag(&mut body, tags::ITEM);
        body.extend_from_slice(&(content.len() as u32).to_le_bytes());
        body.extend_from_slice(&content);
    }
    body
}
