use std::collections::BTreeMap;

use super::dataset::{is_supported_syntax, DataSet, Element, Item, Value, EXPLICIT_VR_LE};
use super::dict::{implicit_vr, Vr};
use super::tag::{tags, Tag};
use super::DicomError;

const PREAMBLE_LEN: usize = 128;
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const MAX_DEPTH: usize = 16;

/// Parse a Part-10 file into a data set. The file meta group is consumed: only
/// its transfer syntax survives, and the writer regenerates the rest.
pub fn parse_file(bytes: &[u8]) -> Result<DataSet, DicomError> {
    if bytes.len() < PREAMBLE_LEN + 4 {
        return Err(malformed(0, "file shorter than preamble and magic"));
    }
    if &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] != b"DICM" {
        return Err(malformed(PREAMBLE_LEN, "missing DICM magic"));
    }

    let mut meta = Reader::new(bytes, PREAMBLE_LEN + 4, true);
    let meta_elements = meta.read_meta()?;
    let syntax = meta_elements
        .get(&tags::TRANSFER_SYNTAX_UID)
        .map(Element::string)
        .ok_or_else(|| malformed(meta.pos, "file meta lacks TransferSyntaxUID"))?;
    if !is_supported_syntax(&syntax) {
        return Err(DicomError::UnsupportedTransferSyntax(syntax));
    }

    let explicit = syntax == EXPLICIT_VR_LE;
    let mut body = Reader::new(bytes, meta.pos, explicit);
    let end = bytes.len();
    let mut elements = body.read_elements_until(end, 0)?;
    // Group lengths are retired outside the meta group and would go stale on edit.
    elements.retain(|tag, _| tag.element() != 0x0000);

    Ok(DataSet {
        elements,
        transfer_syntax: syntax,
    })
}

fn malformed(offset: usize, msg: &str) -> DicomError {
    DicomError::MalformedFile {
        offset,
        reason: msg.to_string(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    explicit: bool,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], pos: usize, explicit: bool) -> Self {
        Reader { buf, pos, explicit }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DicomError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(self.pos, "truncated element"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tag(&mut self) -> Result<Tag, DicomError> {
        let g = self.u16()?;
        let e = self.u16()?;
        Ok(Tag(g, e))
    }

    fn peek_group(&self) -> Option<u16> {
        self.buf
            .get(self.pos..self.pos + 2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn read_meta(&mut self) -> Result<BTreeMap<Tag, Element>, DicomError> {
        let mut out = BTreeMap::new();
        while self.peek_group() == Some(0x0002) {
            let start = self.pos;
            let el = self.read_element(0)?;
            if let Some(prev) = out.keys().next_back() {
                if el.tag <= *prev {
                    return Err(malformed(start, "meta elements out of order"));
                }
            }
            out.insert(el.tag, el);
        }
        Ok(out)
    }

    fn read_elements_until(
        &mut self,
        end: usize,
        depth: usize,
    ) -> Result<BTreeMap<Tag, Element>, DicomError> {
        let mut out = BTreeMap::new();
        while self.pos < end {
            let start = self.pos;
            let el = self.read_element(depth)?;
            if self.pos > end {
                return Err(malformed(start, "element overruns its container"));
            }
            check_order(&out, el.tag, start)?;
            out.insert(el.tag, el);
        }
        Ok(out)
    }

    fn read_element(&mut self, depth: usize) -> Result<Element, DicomError> {
        let start = self.pos;
        let tag = self.tag()?;
        if tag.group() == 0xFFFE {
            return Err(malformed(start, "item or delimiter outside a sequence"));
        }
        let (vr, len) = if self.explicit {
            let code = self.take(2)?;
            let code = [code[0], code[1]];
            if !Vr::is_valid_code(code) {
                return Err(malformed(start + 4, "invalid VR code"));
            }
            let vr = Vr(code);
            if vr.has_long_length() {
                self.take(2)?;
                (vr, self.u32()?)
            } else {
                (vr, u32::from(self.u16()?))
            }
        } else {
            (implicit_vr(tag), self.u32()?)
        };

        let is_seq = vr == Vr::SQ
            || (len == UNDEFINED_LENGTH && (vr == Vr::UN || !self.explicit));
        if is_seq {
            if depth >= MAX_DEPTH {
                return Err(malformed(start, "sequence nesting too deep"));
            }
            // UN with undefined length carries implicit-VR content.
            let nested_explicit = self.explicit && vr != Vr::UN;
            let items = self.read_items(len, nested_explicit, depth + 1)?;
            return Ok(Element::sequence(tag, items));
        }
        if len == UNDEFINED_LENGTH {
            return Err(malformed(start, "undefined length on non-sequence element"));
        }
        if len % 2 == 1 {
            return Err(malformed(start, "odd value length"));
        }
        let bytes = self.take(len as usize)?.to_vec();
        Ok(Element {
            tag,
            vr,
            value: Value::Bytes(bytes),
        })
    }

    fn read_items(
        &mut self,
        len: u32,
        explicit: bool,
        depth: usize,
    ) -> Result<Vec<Item>, DicomError> {
        let saved = self.explicit;
        self.explicit = explicit;
        let result = self.read_items_inner(len, depth);
        self.explicit = saved;
        result
    }

    fn read_items_inner(&mut self, len: u32, depth: usize) -> Result<Vec<Item>, DicomError> {
        let end = if len == UNDEFINED_LENGTH {
            None
        } else {
            Some(
                self.pos
                    .checked_add(len as usize)
                    .filter(|&e| e <= self.buf.len())
                    .ok_or_else(|| malformed(self.pos, "sequence length past end of file"))?,
            )
        };
        let mut items = Vec::new();
        loop {
            if let Some(end) = end {
                if self.pos == end {
                    break;
                }
                if self.pos > end {
                    return Err(malformed(self.pos, "item overruns its sequence"));
                }
            }
            let start = self.pos;
            let tag = self.tag()?;
            let item_len = self.u32()?;
            match tag {
                tags::SEQUENCE_DELIMITATION if end.is_none() => break,
                tags::ITEM => {
                    let elements = if item_len == UNDEFINED_LENGTH {
                        self.read_item_until_delimiter(depth)?
                    } else {
                        let item_end = self
                            .pos
                            .checked_add(item_len as usize)
                            .filter(|&e| e <= self.buf.len())
                            .ok_or_else(|| malformed(start, "item length past end of file"))?;
                        self.read_elements_until(item_end, depth)?
                    };
                    items.push(Item { elements });
                }
                _ => return Err(malformed(start, "expected sequence item")),
            }
        }
        Ok(items)
    }

    fn read_item_until_delimiter(
        &mut self,
        depth: usize,
    ) -> Result<BTreeMap<Tag, Element>, DicomError> {
        let mut out = BTreeMap::new();
        loop {
            let start = self.pos;
            let next = self
                .buf
                .get(self.pos..self.pos + 4)
                .ok_or_else(|| malformed(self.pos, "unterminated item"))?;
            let tag = Tag(
                u16::from_le_bytes([next[0], next[1]]),
                u16::from_le_bytes([next[2], next[3]]),
            );
            if tag == tags::ITEM_DELIMITATION {
                self.take(8)?;
                return Ok(out);
            }
            let el = self.read_element(depth)?;
            check_order(&out, el.tag, start)?;
            out.insert(el.tag, el);
        }
    }
}

fn check_order(
    map: &BTreeMap<Tag, Element>,
    tag: Tag,
    offset: usize,
) -> Result<(), DicomError> {
    match map.keys().next_back() {
        Some(prev) if tag == *prev => Err(malformed(offset, "duplicate tag")),
        Some(prev) if tag < *prev => Err(malformed(offset, "tags out of ascending order")),
        _ => Ok(()),
    }
}
