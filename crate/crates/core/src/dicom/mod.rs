//! DICOM Part-10 reading and writing.
//!
//! Input may be Implicit or Explicit VR Little Endian; output is always
//! Explicit VR Little Endian. Compressed transfer syntaxes are rejected so
//! the pipeline can record them as errors instead of passing them through.

mod dataset;
pub mod dict;
mod parse;
mod pixel;
mod tag;
mod write;

pub use dataset::{
    encode_text, is_supported_syntax, parse_da, DataSet, Element, Item, Value, EXPLICIT_VR_LE,
    IMPLICIT_VR_LE,
};
pub use dict::Vr;
pub use parse::parse_file;
pub use pixel::{blank_region, decode_pixels, encode_pixels, PixelMatrix, Rect};
pub use tag::{tags, ParseTagError, Tag};
pub use write::{write_file, IMPLEMENTATION_CLASS_UID};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DicomError {
    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: usize, reason: String },
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("no pixel data")]
    MissingPixelData,
    #[error("pixel data is {actual} bytes, expected {expected} ({detail})")]
    InconsistentDimensions {
        expected: usize,
        actual: usize,
        detail: String,
    },
    #[error("unsupported pixel encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("rectangle {rect} outside {cols}x{rows} frame")]
    RectOutOfBounds { rect: Rect, rows: u32, cols: u32 },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DataSet {
        let mut ds = DataSet::new();
        ds.put_text(tags::SOP_CLASS_UID, Vr::UI, "1.2.840.10008.5.1.4.1.1.2");
        ds.put_text(tags::SOP_INSTANCE_UID, Vr::UI, "1.2.3.4.5");
        ds.put_text(tags::MANUFACTURER, Vr::LO, "Vidar");
        ds.insert(Element::text(tags::IMAGE_TYPE, Vr::CS, &["ORIGINAL", "PRIMARY"]));
        ds.put_u16(tags::ROWS, 4);
        ds.put_u16(tags::COLUMNS, 4);
        ds.put_u16(tags::BITS_ALLOCATED, 16);
        ds.put_u16(tags::SAMPLES_PER_PIXEL, 1);
        let mut item = Item::default();
        item.elements.insert(
            Tag(0x0008, 0x1150),
            Element::text(Tag(0x0008, 0x1150), Vr::UI, &["1.2.3"]),
        );
        ds.insert(Element::sequence(Tag(0x0008, 0x1110), vec![item, Item::default()]));
        ds.insert(Element::new(Tag(0x0009, 0x1001), Vr(*b"ZZ"), b"ab".to_vec()));
        ds.insert(Element::new(tags::PIXEL_DATA, Vr::OW, vec![1u8; 32]));
        ds
    }

    #[test]
    fn round_trip() {
        let ds = sample();
        let bytes = write_file(&ds);
        let back = parse_file(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(write_file(&back), bytes);
        assert_eq!(back.string(tags::MANUFACTURER).as_deref(), Some("Vidar"));
    }

    #[test]
    fn empty_dataset_round_trip() {
        let ds = DataSet::new();
        assert_eq!(parse_file(&write_file(&ds)).unwrap(), ds);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(parse_file(&[]), Err(DicomError::MalformedFile { .. })));
        let mut bytes = write_file(&sample());
        bytes[129] = b'X';
        assert!(matches!(parse_file(&bytes), Err(DicomError::MalformedFile { .. })));
        let bytes = write_file(&sample());
        assert!(matches!(
            parse_file(&bytes[..bytes.len() - 3]),
            Err(DicomError::MalformedFile { .. })
        ));
    }

    #[test]
    fn rejects_odd_length() {
        let mut ds = DataSet::new();
        ds.insert(Element::new(tags::MANUFACTURER, Vr::LO, b"ab".to_vec()));
        let mut bytes = write_file(&ds);
        // patch the 16-bit length of the last element from 2 to 1 and drop a byte
        let n = bytes.len();
        bytes[n - 4] = 1;
        bytes.pop();
        assert!(matches!(parse_file(&bytes), Err(DicomError::MalformedFile { .. })));
    }

    #[test]
    fn rejects_compressed_syntax() {
        let bytes = write_file(&sample());
        let text = b"1.2.840.10008.1.2.1\0";
        let pos = bytes.windows(text.len()).position(|w| w == text).unwrap();
        let mut patched = bytes.clone();
        // same length: JPEG Lossless SV1 is "1.2.840.10008.1.2.4.70"
        let jpeg = b"1.2.840.10008.1.2.4.70";
        patched.splice(pos..pos + text.len(), jpeg.iter().copied());
        // fix the element length (20 -> 22) and the group length (+2)
        patched[pos - 2] = 22;
        let gl = 128 + 4 + 8;
        let v = u32::from_le_bytes(patched[gl..gl + 4].try_into().unwrap()) + 2;
        patched[gl..gl + 4].copy_from_slice(&v.to_le_bytes());
        assert_eq!(
            parse_file(&patched),
            Err(DicomError::UnsupportedTransferSyntax("1.2.840.10008.1.2.4.70".into()))
        );
    }

    #[test]
    fn pixel_decode_and_mismatch() {
        let mut ds = sample();
        let px = decode_pixels(&ds).unwrap();
        assert_eq!(px.frames.len(), 1);
        assert_eq!(px.frames[0].len(), 32);
        ds.insert(Element::new(tags::PIXEL_DATA, Vr::OW, vec![0u8; 10]));
        assert!(matches!(
            decode_pixels(&ds),
            Err(DicomError::InconsistentDimensions { .. })
        ));
        ds.remove(tags::PIXEL_DATA);
        assert_eq!(decode_pixels(&ds), Err(DicomError::MissingPixelData));
    }
}
