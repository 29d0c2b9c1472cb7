use std::fmt;

use super::tag::Tag;

/// Two-letter value representation code.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vr(pub [u8; 2]);

impl Vr {
    pub const AE: Vr = Vr(*b"AE");
    pub const AS: Vr = Vr(*b"AS");
    pub const AT: Vr = Vr(*b"AT");
    pub const CS: Vr = Vr(*b"CS");
    pub const DA: Vr = Vr(*b"DA");
    pub const DS: Vr = Vr(*b"DS");
    pub const DT: Vr = Vr(*b"DT");
    pub const FD: Vr = Vr(*b"FD");
    pub const FL: Vr = Vr(*b"FL");
    pub const IS: Vr = Vr(*b"IS");
    pub const LO: Vr = Vr(*b"LO");
    pub const LT: Vr = Vr(*b"LT");
    pub const OB: Vr = Vr(*b"OB");
    pub const OD: Vr = Vr(*b"OD");
    pub const OF: Vr = Vr(*b"OF");
    pub const OL: Vr = Vr(*b"OL");
    pub const OV: Vr = Vr(*b"OV");
    pub const OW: Vr = Vr(*b"OW");
    pub const PN: Vr = Vr(*b"PN");
    pub const SH: Vr = Vr(*b"SH");
    pub const SL: Vr = Vr(*b"SL");
    pub const SQ: Vr = Vr(*b"SQ");
    pub const SS: Vr = Vr(*b"SS");
    pub const ST: Vr = Vr(*b"ST");
    pub const SV: Vr = Vr(*b"SV");
    pub const TM: Vr = Vr(*b"TM");
    pub const UC: Vr = Vr(*b"UC");
    pub const UI: Vr = Vr(*b"UI");
    pub const UL: Vr = Vr(*b"UL");
    pub const UN: Vr = Vr(*b"UN");
    pub const UR: Vr = Vr(*b"UR");
    pub const US: Vr = Vr(*b"US");
    pub const UT: Vr = Vr(*b"UT");
    pub const UV: Vr = Vr(*b"UV");

    /// Whether the explicit-VR header uses the 2 reserved bytes + 32-bit length form.
    /// Unrecognized codes take the long form, as every VR added since 2006 does.
    pub fn has_long_length(self) -> bool {
        !matches!(
            &self.0,
            b"AE" | b"AS" | b"AT" | b"CS" | b"DA" | b"DS" | b"DT" | b"FD" | b"FL" | b"IS"
                | b"LO" | b"LT" | b"PN" | b"SH" | b"SL" | b"SS" | b"ST" | b"TM" | b"UI"
                | b"UL" | b"US"
        )
    }

    /// Text VRs whose values are backslash-delimited strings.
    pub fn is_string(self) -> bool {
        matches!(
            &self.0,
            b"AE" | b"AS" | b"CS" | b"DA" | b"DS" | b"DT" | b"IS" | b"LO" | b"LT" | b"PN"
                | b"SH" | b"ST" | b"TM" | b"UC" | b"UI" | b"UR" | b"UT"
        )
    }

    /// Padding byte for odd-length values.
    pub fn pad_byte(self) -> u8 {
        if self == Vr::UI || !self.is_string() {
            0
        } else {
            b' '
        }
    }

    pub fn is_valid_code(bytes: [u8; 2]) -> bool {
        bytes.iter().all(|b| b.is_ascii_uppercase())
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).unwrap_or("??")
    }
}

impl fmt::Display for Vr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Vr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub struct DictEntry {
    pub tag: Tag,
    pub vr: Vr,
    pub keyword: &'static str,
}

macro_rules! dict {
    ($( ($g:literal, $e:literal, $vr:ident, $kw:literal) ),* $(,)?) => {
        &[ $( DictEntry { tag: Tag($g, $e), vr: Vr::$vr, keyword: $kw } ),* ]
    };
}

/// The attributes the rules, generator and tests touch. Everything else is
/// addressed numerically and read as UN under implicit VR.
pub static DICTIONARY: &[DictEntry] = dict![
    (0x0002, 0x0000, UL, "FileMetaInformationGroupLength"),
    (0x0002, 0x0001, OB, "FileMetaInformationVersion"),
    (0x0002, 0x0002, UI, "MediaStorageSOPClassUID"),
    (0x0002, 0x0003, UI, "MediaStorageSOPInstanceUID"),
    (0x0002, 0x0010, UI, "TransferSyntaxUID"),
    (0x0002, 0x0012, UI, "ImplementationClassUID"),
    (0x0002, 0x0013, SH, "ImplementationVersionName"),
    (0x0008, 0x0005, CS, "SpecificCharacterSet"),
    (0x0008, 0x0008, CS, "ImageType"),
    (0x0008, 0x0012, DA, "InstanceCreationDate"),
    (0x0008, 0x0013, TM, "InstanceCreationTime"),
    (0x0008, 0x0016, UI, "SOPClassUID"),
    (0x0008, 0x0018, UI, "SOPInstanceUID"),
    (0x0008, 0x0020, DA, "StudyDate"),
    (0x0008, 0x0021, DA, "SeriesDate"),
    (0x0008, 0x0022, DA, "AcquisitionDate"),
    (0x0008, 0x0023, DA, "ContentDate"),
    (0x0008, 0x002A, DT, "AcquisitionDateTime"),
    (0x0008, 0x0030, TM, "StudyTime"),
    (0x0008, 0x0031, TM, "SeriesTime"),
    (0x0008, 0x0032, TM, "AcquisitionTime"),
    (0x0008, 0x0033, TM, "ContentTime"),
    (0x0008, 0x0050, SH, "AccessionNumber"),
    (0x0008, 0x0060, CS, "Modality"),
    (0x0008, 0x0064, CS, "ConversionType"),
    (0x0008, 0x0070, LO, "Manufacturer"),
    (0x0008, 0x0080, LO, "InstitutionName"),
    (0x0008, 0x0081, ST, "InstitutionAddress"),
    (0x0008, 0x0090, PN, "ReferringPhysicianName"),
    (0x0008, 0x1010, SH, "StationName"),
    (0x0008, 0x1030, LO, "StudyDescription"),
    (0x0008, 0x103E, LO, "SeriesDescription"),
    (0x0008, 0x1040, LO, "InstitutionalDepartmentName"),
    (0x0008, 0x1048, PN, "PhysiciansOfRecord"),
    (0x0008, 0x1050, PN, "PerformingPhysicianName"),
    (0x0008, 0x1060, PN, "NameOfPhysiciansReadingStudy"),
    (0x0008, 0x1070, PN, "OperatorsName"),
    (0x0008, 0x1090, LO, "ManufacturerModelName"),
    (0x0008, 0x1110, SQ, "ReferencedStudySequence"),
    (0x0008, 0x1140, SQ, "ReferencedImageSequence"),
    (0x0008, 0x1150, UI, "ReferencedSOPClassUID"),
    (0x0008, 0x1155, UI, "ReferencedSOPInstanceUID"),
    (0x0008, 0x2111, ST, "DerivationDescription"),
    (0x0008, 0x2112, SQ, "SourceImageSequence"),
    (0x0010, 0x0010, PN, "PatientName"),
    (0x0010, 0x0020, LO, "PatientID"),
    (0x0010, 0x0030, DA, "PatientBirthDate"),
    (0x0010, 0x0040, CS, "PatientSex"),
    (0x0010, 0x1000, LO, "OtherPatientIDs"),
    (0x0010, 0x1001, PN, "OtherPatientNames"),
    (0x0010, 0x1010, AS, "PatientAge"),
    (0x0010, 0x1020, DS, "PatientSize"),
    (0x0010, 0x1030, DS, "PatientWeight"),
    (0x0010, 0x1040, LO, "PatientAddress"),
    (0x0010, 0x2154, SH, "PatientTelephoneNumbers"),
    (0x0010, 0x4000, LT, "PatientComments"),
    (0x0012, 0x0062, CS, "PatientIdentityRemoved"),
    (0x0012, 0x0063, LO, "DeidentificationMethod"),
    (0x0018, 0x0015, CS, "BodyPartExamined"),
    (0x0018, 0x0050, DS, "SliceThickness"),
    (0x0018, 0x0060, DS, "KVP"),
    (0x0018, 0x1000, LO, "DeviceSerialNumber"),
    (0x0018, 0x1020, LO, "SoftwareVersions"),
    (0x0018, 0x1030, LO, "ProtocolName"),
    (0x0020, 0x000D, UI, "StudyInstanceUID"),
    (0x0020, 0x000E, UI, "SeriesInstanceUID"),
    (0x0020, 0x0010, SH, "StudyID"),
    (0x0020, 0x0011, IS, "SeriesNumber"),
    (0x0020, 0x0013, IS, "InstanceNumber"),
    (0x0020, 0x0052, UI, "FrameOfReferenceUID"),
    (0x0020, 0x4000, LT, "ImageComments"),
    (0x0028, 0x0002, US, "SamplesPerPixel"),
    (0x0028, 0x0004, CS, "PhotometricInterpretation"),
    (0x0028, 0x0006, US, "PlanarConfiguration"),
    (0x0028, 0x0008, IS, "NumberOfFrames"),
    (0x0028, 0x0010, US, "Rows"),
    (0x0028, 0x0011, US, "Columns"),
    (0x0028, 0x0100, US, "BitsAllocated"),
    (0x0028, 0x0101, US, "BitsStored"),
    (0x0028, 0x0102, US, "HighBit"),
    (0x0028, 0x0103, US, "PixelRepresentation"),
    (0x0028, 0x0301, CS, "BurnedInAnnotation"),
    (0x0028, 0x0302, CS, "RecognizableVisualFeatures"),
    (0x0028, 0x1050, DS, "WindowCenter"),
    (0x0028, 0x1051, DS, "WindowWidth"),
    (0x0028, 0x1052, DS, "RescaleIntercept"),
    (0x0028, 0x1053, DS, "RescaleSlope"),
    (0x0032, 0x1032, PN, "RequestingPhysician"),
    (0x0032, 0x1060, LO, "RequestedProcedureDescription"),
    (0x0040, 0x0244, DA, "PerformedProcedureStepStartDate"),
    (0x0040, 0xA730, SQ, "ContentSequence"),
    (0x7FE0, 0x0010, OW, "PixelData"),
];

pub fn lookup(tag: Tag) -> Option<&'static DictEntry> {
    DICTIONARY.iter().find(|e| e.tag == tag)
}

pub fn by_keyword(keyword: &str) -> Option<&'static DictEntry> {
    DICTIONARY.iter().find(|e| e.keyword == keyword)
}

/// VR to assume for an implicit-VR element.
pub fn implicit_vr(tag: Tag) -> Vr {
    if tag.element() == 0x0000 {
        return Vr::UL;
    }
    lookup(tag).map(|e| e.vr).unwrap_or(Vr::UN)
}
