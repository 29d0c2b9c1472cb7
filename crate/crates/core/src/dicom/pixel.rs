use serde::{Deserialize, Serialize};

use super::dataset::{DataSet, Element, Value};
use super::dict::Vr;
use super::tag::tags;
use super::DicomError;

/// A pixel rectangle: column offset, row offset, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn fits(&self, rows: u32, cols: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(cols)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(rows)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        col >= self.x && col < self.x + self.w && row >= self.y && row < self.y + self.h
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl std::str::FromStr for Rect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(format!("expected x,y,w,h but got {s:?}"));
        }
        let n = |p: &str| p.parse::<u32>().map_err(|_| format!("bad rect component {p:?}"));
        Ok(Rect::new(n(parts[0])?, n(parts[1])?, n(parts[2])?, n(parts[3])?))
    }
}

/// Decoded native pixel frames. Samples of a frame are stored row-major in
/// the encoded byte order (little endian for 16-bit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMatrix {
    pub rows: u32,
    pub cols: u32,
    pub bits_allocated: u16,
    pub samples_per_pixel: u16,
    /// Colour-by-plane layout (PlanarConfiguration = 1).
    pub planar: bool,
    pub frames: Vec<Vec<u8>>,
}

impl PixelMatrix {
    pub fn bytes_per_sample(&self) -> usize {
        usize::from(self.bits_allocated / 8)
    }

    pub fn frame_len(&self) -> usize {
        self.rows as usize
            * self.cols as usize
            * usize::from(self.samples_per_pixel)
            * self.bytes_per_sample()
    }

    /// Value of one sample, widened to u16.
    pub fn sample(&self, frame: usize, row: u32, col: u32, sample: u16) -> u16 {
        let off = self.sample_offset(row, col, sample);
        let f = &self.frames[frame];
        match self.bits_allocated {
            8 => u16::from(f[off]),
            _ => u16::from_le_bytes([f[off], f[off + 1]]),
        }
    }

    fn sample_offset(&self, row: u32, col: u32, sample: u16) -> usize {
        let bps = self.bytes_per_sample();
        let spp = usize::from(self.samples_per_pixel);
        let (rows, cols) = (self.rows as usize, self.cols as usize);
        let (row, col, sample) = (row as usize, col as usize, usize::from(sample));
        if self.planar {
            ((sample * rows + row) * cols + col) * bps
        } else {
            ((row * cols + col) * spp + sample) * bps
        }
    }

    /// Zero every sample inside `r` in every frame.
    pub fn blank(&mut self, r: Rect) -> Result<(), DicomError> {
        if !r.fits(self.rows, self.cols) {
            return Err(DicomError::RectOutOfBounds {
                rect: r,
                rows: self.rows,
                cols: self.cols,
            });
        }
        if r.w == 0 || r.h == 0 {
            return Ok(());
        }
        let bps = self.bytes_per_sample();
        let spp = self.samples_per_pixel;
        let planes: Vec<u16> = if self.planar { (0..spp).collect() } else { vec![0] };
        // In interleaved layout one row span covers all samples of each pixel.
        let span = if self.planar {
            r.w as usize * bps
        } else {
            r.w as usize * usize::from(spp) * bps
        };
        let offsets: Vec<usize> = planes
            .iter()
            .flat_map(|&p| (r.y..r.y + r.h).map(move |row| (row, p)))
            .map(|(row, p)| self.sample_offset(row, r.x, p))
            .collect();
        for frame in &mut self.frames {
            for &off in &offsets {
                frame[off..off + span].fill(0);
            }
        }
        Ok(())
    }
}

/// Returns a new matrix with `r` zeroed in every frame.
pub fn blank_region(mut px: PixelMatrix, r: Rect) -> Result<PixelMatrix, DicomError> {
    px.blank(r)?;
    Ok(px)
}

pub fn decode_pixels(ds: &DataSet) -> Result<PixelMatrix, DicomError> {
    let pixel = ds.get(tags::PIXEL_DATA).ok_or(DicomError::MissingPixelData)?;
    let data = match &pixel.value {
        Value::Bytes(b) => b,
        Value::Sequence(_) => {
            return Err(DicomError::UnsupportedEncoding(
                "encapsulated pixel data".into(),
            ))
        }
    };
    let need = |tag| ds.u16(tag).ok_or(DicomError::MissingPixelData);
    let rows = u32::from(need(tags::ROWS)?);
    let cols = u32::from(need(tags::COLUMNS)?);
    let bits_allocated = need(tags::BITS_ALLOCATED)?;
    let samples_per_pixel = ds.u16(tags::SAMPLES_PER_PIXEL).unwrap_or(1);
    if bits_allocated != 8 && bits_allocated != 16 {
        return Err(DicomError::UnsupportedEncoding(format!(
            "BitsAllocated = {bits_allocated}"
        )));
    }
    if samples_per_pixel != 1 && samples_per_pixel != 3 {
        return Err(DicomError::UnsupportedEncoding(format!(
            "SamplesPerPixel = {samples_per_pixel}"
        )));
    }
    let frames = match ds.int(tags::NUMBER_OF_FRAMES) {
        None => 1,
        Some(n) if n >= 1 => n as usize,
        Some(n) => {
            return Err(DicomError::InconsistentDimensions {
                expected: 0,
                actual: data.len(),
                detail: format!("NumberOfFrames = {n}"),
            })
        }
    };
    let planar = samples_per_pixel > 1 && ds.u16(tags::PLANAR_CONFIGURATION) == Some(1);

    let mut px = PixelMatrix {
        rows,
        cols,
        bits_allocated,
        samples_per_pixel,
        planar,
        frames: Vec::with_capacity(frames),
    };
    let frame_len = px.frame_len();
    let total = frame_len * frames;
    // one trailing pad byte is allowed when the payload is odd
    if data.len() != total && data.len() != total + (total % 2) {
        return Err(DicomError::InconsistentDimensions {
            expected: total,
            actual: data.len(),
            detail: format!("{rows}x{cols}x{samples_per_pixel}, {bits_allocated} bit, {frames} frame(s)"),
        });
    }
    if frame_len == 0 {
        px.frames = vec![Vec::new(); frames];
    } else {
        px.frames = data[..total].chunks(frame_len).map(<[u8]>::to_vec).collect();
    }
    Ok(px)
}

/// Store `px` back into the PixelData element, keeping its VR.
pub fn encode_pixels(ds: &mut DataSet, px: &PixelMatrix) {
    let vr = ds
        .get(tags::PIXEL_DATA)
        .map(|e| e.vr)
        .unwrap_or(if px.bits_allocated == 8 { Vr::OB } else { Vr::OW });
    let mut bytes: Vec<u8> = px.frames.concat();
    if bytes.len() % 2 == 1 {
        bytes.push(0);
    }
    ds.insert(Element::new(tags::PIXEL_DATA, vr, bytes));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: u32, cols: u32, bits: u16, spp: u16, frames: usize, fill: u8) -> PixelMatrix {
        let mut px = PixelMatrix {
            rows,
            cols,
            bits_allocated: bits,
            samples_per_pixel: spp,
            planar: false,
            frames: Vec::new(),
        };
        px.frames = vec![vec![fill; px.frame_len()]; frames];
        px
    }

    fn zero_count(px: &PixelMatrix, frame: usize) -> usize {
        let mut n = 0;
        for r in 0..px.rows {
            for c in 0..px.cols {
                if (0..px.samples_per_pixel).all(|s| px.sample(frame, r, c, s) == 0) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn blanks_exact_area() {
        let px = matrix(512, 512, 16, 1, 2, 1);
        let out = blank_region(px, Rect::new(256, 0, 256, 22)).unwrap();
        for f in 0..2 {
            assert_eq!(zero_count(&out, f), 5_632);
        }
    }

    #[test]
    fn full_and_empty_cover() {
        let px = matrix(8, 6, 8, 3, 1, 7);
        let full = blank_region(px.clone(), Rect::new(0, 0, 6, 8)).unwrap();
        assert!(full.frames[0].iter().all(|&b| b == 0));
        let same = blank_region(px.clone(), Rect::new(0, 0, 0, 0)).unwrap();
        assert_eq!(same, px);
    }

    #[test]
    fn out_of_bounds() {
        let px = matrix(10, 10, 8, 1, 1, 1);
        assert!(matches!(
            blank_region(px, Rect::new(5, 5, 6, 1)),
            Err(DicomError::RectOutOfBounds { .. })
        ));
    }

    #[test]
    fn planar_rgb() {
        let mut px = matrix(4, 4, 8, 3, 1, 9);
        px.planar = true;
        let out = blank_region(px, Rect::new(1, 1, 2, 2)).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let inside = (1..3).contains(&r) && (1..3).contains(&c);
                for s in 0..3 {
                    assert_eq!(out.sample(0, r, c, s) == 0, inside);
                }
            }
        }
    }

    #[test]
    fn rect_parsing() {
        assert_eq!("256,0,256,22".parse::<Rect>().unwrap(), Rect::new(256, 0, 256, 22));
        assert!("1,2,3".parse::<Rect>().is_err());
        assert!("1,2,3,x".parse::<Rect>().is_err());
    }
}
