//! Devices with known burned-in annotation areas. Kept separately from the
//! shipped scrub script so the generated ledger is an independent oracle.

use crate::dicom::Rect;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Device {
    pub modality: &'static str,
    pub make: &'static str,
    pub model: &'static str,
    pub rows: u16,
    pub cols: u16,
    pub rects: &'static [Rect],
}

pub const PET_FUSION: Device = Device {
    modality: "PT",
    make: "GE",
    model: "Discovery",
    rows: 512,
    cols: 512,
    rects: &[
        Rect::new(256, 0, 256, 22),
        Rect::new(300, 22, 212, 80),
        Rect::new(10, 478, 100, 10),
    ],
};

pub const CT_DOSE_GE: Device = Device {
    modality: "CT",
    make: "GE MEDICAL SYSTEMS",
    model: "Revolution CT",
    rows: 512,
    cols: 512,
    rects: &[Rect::new(0, 0, 512, 64)],
};

pub const CT_DOSE_SIEMENS: Device = Device {
    modality: "CT",
    make: "SIEMENS",
    model: "SOMATOM Definition AS",
    rows: 512,
    cols: 512,
    rects: &[Rect::new(0, 0, 512, 48), Rect::new(0, 464, 512, 48)],
};

pub const DX_LABEL: Device = Device {
    modality: "DX",
    make: "Carestream Health",
    model: "DRX-Revolution",
    rows: 1024,
    cols: 1024,
    rects: &[Rect::new(0, 0, 1024, 40)],
};

/// Ultrasound devices and resolutions with scrub rules.
pub const ULTRASOUND: &[Device] = &[
    Device { modality: "US", make: "GE", model: "LOGIQE9", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 62), Rect::new(661, 62, 139, 150), Rect::new(0, 563, 266, 37)] },
    Device { modality: "US", make: "GE", model: "LOGIQE9", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 76), Rect::new(848, 76, 176, 192), Rect::new(0, 720, 341, 48)] },
    Device { modality: "US", make: "GE", model: "LOGIQE9", rows: 720, cols: 960, rects: &[Rect::new(0, 0, 960, 72), Rect::new(794, 72, 166, 180), Rect::new(0, 675, 320, 45)] },
    Device { modality: "US", make: "GE", model: "Voluson E8", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 62), Rect::new(661, 62, 139, 150), Rect::new(0, 563, 266, 37)] },
    Device { modality: "US", make: "GE", model: "Voluson E8", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 76), Rect::new(848, 76, 176, 192), Rect::new(0, 720, 341, 48)] },
    Device { modality: "US", make: "GE", model: "LOGIQ S8", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 62), Rect::new(661, 62, 139, 150), Rect::new(0, 563, 266, 37)] },
    Device { modality: "US", make: "Siemens", model: "ACUSON S2000", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 88), Rect::new(842, 88, 182, 192), Rect::new(0, 720, 341, 48)] },
    Device { modality: "US", make: "Siemens", model: "ACUSON S2000", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 74), Rect::new(655, 74, 145, 150), Rect::new(0, 563, 266, 37)] },
    Device { modality: "US", make: "Siemens", model: "ACUSON Sequoia", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 88), Rect::new(842, 88, 182, 192), Rect::new(0, 720, 341, 48)] },
    Device { modality: "US", make: "Acuson", model: "Sequoia", rows: 480, cols: 640, rects: &[Rect::new(0, 0, 640, 40), Rect::new(534, 40, 106, 120), Rect::new(0, 450, 213, 30)] },
    Device { modality: "US", make: "Acuson", model: "Sequoia", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 50), Rect::new(667, 50, 133, 150), Rect::new(0, 563, 266, 37)] },
    Device { modality: "US", make: "Philips", model: "EPIQ 7G", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 66), Rect::new(659, 66, 141, 150)] },
    Device { modality: "US", make: "Philips", model: "EPIQ 7G", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 80), Rect::new(846, 80, 178, 192)] },
    Device { modality: "US", make: "Philips", model: "iU22", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 66), Rect::new(659, 66, 141, 150)] },
    Device { modality: "US", make: "Philips", model: "iU22", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 80), Rect::new(846, 80, 178, 192)] },
    Device { modality: "US", make: "Toshiba", model: "Aplio 500", rows: 720, cols: 960, rects: &[Rect::new(0, 0, 960, 96), Rect::new(782, 96, 178, 180), Rect::new(0, 675, 320, 45)] },
    Device { modality: "US", make: "Toshiba", model: "Aplio 500", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 86), Rect::new(649, 86, 151, 150), Rect::new(0, 563, 266, 37)] },
    Device { modality: "US", make: "Toshiba", model: "Aplio i800", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 100), Rect::new(836, 100, 188, 192), Rect::new(0, 720, 341, 48)] },
    Device { modality: "US", make: "SonoSite", model: "M-Turbo", rows: 480, cols: 640, rects: &[Rect::new(0, 0, 640, 68), Rect::new(520, 68, 120, 120)] },
    Device { modality: "US", make: "SonoSite", model: "Edge", rows: 480, cols: 640, rects: &[Rect::new(0, 0, 640, 68), Rect::new(520, 68, 120, 120)] },
    Device { modality: "US", make: "SonoSite", model: "Edge", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 78), Rect::new(653, 78, 147, 150)] },
    Device { modality: "US", make: "Zonare", model: "Z.one", rows: 480, cols: 640, rects: &[Rect::new(0, 0, 640, 80), Rect::new(514, 80, 126, 120)] },
    Device { modality: "US", make: "Zonare", model: "Z.one", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 90), Rect::new(647, 90, 153, 150)] },
    Device { modality: "US", make: "BK Medical", model: "Flex Focus 800", rows: 576, cols: 768, rects: &[Rect::new(0, 0, 768, 56), Rect::new(636, 56, 132, 144)] },
    Device { modality: "US", make: "BK Medical", model: "Flex Focus 800", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 58), Rect::new(663, 58, 137, 150)] },
    Device { modality: "US", make: "Aloka", model: "ProSound Alpha 7", rows: 480, cols: 640, rects: &[Rect::new(0, 0, 640, 44), Rect::new(532, 44, 108, 120)] },
    Device { modality: "US", make: "Aloka", model: "ProSound Alpha 7", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 54), Rect::new(665, 54, 135, 150)] },
    Device { modality: "US", make: "Aloka", model: "ProSound F75", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 68), Rect::new(852, 68, 172, 192)] },
    Device { modality: "US", make: "SuperSonic Imaging", model: "Aixplorer", rows: 720, cols: 960, rects: &[Rect::new(0, 0, 960, 92), Rect::new(784, 92, 176, 180)] },
    Device { modality: "US", make: "SuperSonic Imaging", model: "Aixplorer", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 96), Rect::new(838, 96, 186, 192)] },
    Device { modality: "US", make: "SuperSonic Imaging", model: "Aixplorer", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 82), Rect::new(651, 82, 149, 150)] },
    Device { modality: "US", make: "Samsung", model: "RS80A", rows: 720, cols: 960, rects: &[Rect::new(0, 0, 960, 80), Rect::new(790, 80, 170, 180)] },
    Device { modality: "US", make: "Samsung", model: "RS80A", rows: 768, cols: 1024, rects: &[Rect::new(0, 0, 1024, 84), Rect::new(844, 84, 180, 192)] },
    Device { modality: "US", make: "Samsung", model: "HS70A", rows: 600, cols: 800, rects: &[Rect::new(0, 0, 800, 70), Rect::new(657, 70, 143, 150)] },
];

/// Ultrasound combinations with no scrub rule: unknown devices, and known
/// devices at resolutions the catalog does not cover.
pub const ULTRASOUND_UNLISTED: &[(&str, &str, u16, u16)] = &[
    ("GE", "LOGIQE9", 480, 640),
    ("GE", "LOGIQ P6", 600, 800),
    ("SIEMENS", "ACUSON S2000", 480, 640),
    ("Philips Medical Systems", "EPIQ 7G", 600, 800),
    ("Philips Medical Systems", "iU22", 480, 640),
    ("TOSHIBA_MEC_US", "TUS-A500", 600, 800),
    ("SonoSite", "Edge", 720, 960),
    ("Mindray", "DC-8", 768, 1024),
    ("Esaote", "MyLab Twice", 576, 720),
    ("Hitachi Aloka", "Arietta 70", 600, 800),
    ("Samsung Medison", "RS80A", 720, 960),
    ("Fujifilm", "FC1-X", 600, 800),
];

pub fn scrub_devices() -> impl Iterator<Item = &'static Device> {
    [&PET_FUSION, &CT_DOSE_GE, &CT_DOSE_SIEMENS, &DX_LABEL]
        .into_iter()
        .chain(ULTRASOUND.iter())
}
