//! Frame byte format.
//!
//! A frame is a fixed 43-byte little-endian header followed by the
//! entropy-coded payload:
//!
//! ```text
//! offset size field
//!      0    4 magic "RIMC"
//!      4    1 version
//!      5    2 width W            7    2 height H
//!      9    4 Δθ (f32 rad)      13    4 Δφ (f32 rad)
//!     17    4 h_offset (f32)    21    4 v_offset (f32)
//!     25    4 Δr (f32 m)        29    4 q_step (f32 m, 0 = raw unfit ranges)
//!     33    1 block size        34    4 surface count
//!     38    4 point count       42    1 level id (255 = custom)
//! ```
//!
//! The decoded payload is `occupancy bitmap ‖ surface tuples ‖ unfit values`.
//! Tuples are 18 bytes each: `row, col, len: u16` then `α, β, γ: f32`. Unfit
//! values are varints: zig-zag quantized coefficients in packed row-major
//! order when `q_step > 0`, otherwise unsigned ranges in micrometers over the
//! unfit pixels in row-major order.

mod container;
mod entropy;
mod varint;

pub use container::{read_container, write_container, ContainerReader};
pub use entropy::{entropy_decode, entropy_encode, EntropyBackend, DEFAULT_ZSTD_LEVEL};

use crate::mask::ShapeMask;
use crate::range_image::ProjectionConfig;
use crate::sadct::{PackedShape, QuantizedCoefficients};
use crate::surface::{fitted_mask_from_tuples, SurfaceCoefficients, SurfaceTuple};

pub const MAGIC: [u8; 4] = *b"RIMC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 43;
pub const TUPLE_LEN: usize = 18;
/// Level id recorded for frames encoded with ad-hoc parameters.
pub const CUSTOM_LEVEL: u8 = u8::MAX;
/// Upper bound on `W·H` accepted by the decoder.
pub const MAX_CELLS: usize = 1 << 24;
/// Resolution of raw unfit ranges.
pub const RAW_RANGE_UNIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BitstreamError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("inconsistent shape: {0}")]
    InconsistentShape(String),
    #[error("entropy coder failure: {0}")]
    Entropy(String),
}

fn corrupt(msg: impl Into<String>) -> BitstreamError {
    BitstreamError::CorruptStream(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameHeader {
    pub width: u16,
    pub height: u16,
    pub delta_theta: f32,
    pub delta_phi: f32,
    pub h_offset: f32,
    pub v_offset: f32,
    pub delta_r: f32,
    pub q_step: f32,
    pub block_size: u8,
    pub surface_count: u32,
    pub point_count: u32,
    pub level_id: u8,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        let mut w = Writer { buf: &mut out, pos: 0 };
        w.put(&MAGIC);
        w.put(&[VERSION]);
        w.put(&self.width.to_le_bytes());
        w.put(&self.height.to_le_bytes());
        for v in [
            self.delta_theta,
            self.delta_phi,
            self.h_offset,
            self.v_offset,
            self.delta_r,
            self.q_step,
        ] {
            w.put(&v.to_le_bytes());
        }
        w.put(&[self.block_size]);
        w.put(&self.surface_count.to_le_bytes());
        w.put(&self.point_count.to_le_bytes());
        w.put(&[self.level_id]);
        debug_assert_eq!(w.pos, HEADER_LEN);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, BitstreamError> {
        if bytes.len() < 4 {
            return Err(corrupt("truncated header"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(BitstreamError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if bytes[4] != VERSION {
            return Err(BitstreamError::UnsupportedVersion(bytes[4]));
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = Self {
            width: u16_at(5),
            height: u16_at(7),
            delta_theta: f32_at(9),
            delta_phi: f32_at(13),
            h_offset: f32_at(17),
            v_offset: f32_at(21),
            delta_r: f32_at(25),
            q_step: f32_at(29),
            block_size: bytes[33],
            surface_count: u32_at(34),
            point_count: u32_at(38),
            level_id: bytes[42],
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<(), BitstreamError> {
        let cells = self.width as usize * self.height as usize;
        if cells == 0 || cells > MAX_CELLS {
            return Err(corrupt(format!("image {}x{} out of range", self.width, self.height)));
        }
        let positive = |v: f32| v.is_finite() && v > 0.0;
        if !positive(self.delta_theta) || !positive(self.delta_phi) || !positive(self.delta_r) {
            return Err(corrupt("non-positive resolution or threshold"));
        }
        if !self.h_offset.is_finite() || !self.v_offset.is_finite() {
            return Err(corrupt("non-finite offset"));
        }
        if !(self.q_step.is_finite() && self.q_step >= 0.0) {
            return Err(corrupt("negative or non-finite q_step"));
        }
        if self.block_size < 2 {
            return Err(corrupt("block size below 2"));
        }
        if self.point_count as usize > cells || self.surface_count as usize > cells {
            return Err(corrupt("counts exceed image size"));
        }
        Ok(())
    }

    pub fn projection(&self) -> Result<ProjectionConfig, BitstreamError> {
        ProjectionConfig::from_radians(
            self.delta_theta as f64,
            self.delta_phi as f64,
            self.h_offset as f64,
            self.v_offset as f64,
            self.width as usize,
            self.height as usize,
        )
        .map_err(|e| corrupt(e.to_string()))
    }

    pub fn is_raw(&self) -> bool {
        self.q_step == 0.0
    }

    /// Largest decoded payload a well-formed frame with this header can have.
    fn max_payload_len(&self) -> usize {
        let cells = self.width as usize * self.height as usize;
        cells.div_ceil(8) + TUPLE_LEN * self.surface_count as usize + 10 * self.point_count as usize
    }
}

struct Writer<'a> {
    buf: &'a mut [u8],
    pos: usize,
}

impl Writer<'_> {
    fn put(&mut self, bytes: &[u8]) {
        self.buf[self.pos..self.pos + bytes.len()].copy_from_slice(bytes);
        self.pos += bytes.len();
    }
}

/// Values stored for the pixels no surface absorbed.
#[derive(Debug, Clone, PartialEq)]
pub enum UnfitSection {
    /// Ranges in units of [`RAW_RANGE_UNIT`], row-major over the unfit pixels.
    Raw(Vec<u64>),
    Quantized(QuantizedCoefficients),
}

/// Everything a frame carries besides the header.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSections {
    pub occupancy: ShapeMask,
    pub tuples: Vec<SurfaceTuple>,
    pub unfit: UnfitSection,
}

/// Writes the raw (pre-entropy) payload.
pub fn serialize_sections(sections: &FrameSections, block_size: usize) -> Result<Vec<u8>, BitstreamError> {
    let occ = &sections.occupancy;
    let fitted = fitted_mask_from_tuples(&sections.tuples, occ, block_size)
        .map_err(|e| BitstreamError::InconsistentShape(e.to_string()))?;
    let unfit_mask = occ.difference(&fitted);

    let mut out = occ.to_bitmap();
    out.reserve(sections.tuples.len() * TUPLE_LEN + unfit_mask.count() * 2);
    for t in &sections.tuples {
        out.extend_from_slice(&t.row.to_le_bytes());
        out.extend_from_slice(&t.col.to_le_bytes());
        out.extend_from_slice(&t.len.to_le_bytes());
        let c = &t.coefficients;
        for v in [c.alpha, c.beta, c.gamma] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    match &sections.unfit {
        UnfitSection::Raw(values) => {
            if values.len() != unfit_mask.count() {
                return Err(BitstreamError::InconsistentShape(format!(
                    "{} raw ranges for {} unfit pixels",
                    values.len(),
                    unfit_mask.count()
                )));
            }
            for &v in values {
                varint::write_u64(&mut out, v);
            }
        }
        UnfitSection::Quantized(q) => {
            if *q.shape() != PackedShape::from_mask(&unfit_mask) {
                return Err(BitstreamError::InconsistentShape(
                    "coefficient support differs from occupancy minus fitted pixels".into(),
                ));
            }
            for v in q.support_values() {
                varint::write_u64(&mut out, varint::zigzag(v));
            }
        }
    }
    Ok(out)
}

/// Parses a raw payload using the dimensions and counts from `header`.
pub fn deserialize_sections(raw: &[u8], header: &FrameHeader) -> Result<FrameSections, BitstreamError> {
    let (w, h) = (header.width as usize, header.height as usize);
    let bitmap_len = (w * h).div_ceil(8);
    let bitmap = raw.get(..bitmap_len).ok_or_else(|| corrupt("truncated occupancy bitmap"))?;
    let occupancy =
        ShapeMask::from_bitmap(w, h, bitmap).ok_or_else(|| corrupt("occupancy padding bits set"))?;
    if occupancy.count() != header.point_count as usize {
        return Err(corrupt(format!(
            "occupancy has {} points, header says {}",
            occupancy.count(),
            header.point_count
        )));
    }
    let mut pos = bitmap_len;

    let n_tuples = header.surface_count as usize;
    let tuple_bytes = raw
        .get(pos..pos + n_tuples * TUPLE_LEN)
        .ok_or_else(|| corrupt("truncated surface tuples"))?;
    let tuples: Vec<SurfaceTuple> = tuple_bytes
        .chunks_exact(TUPLE_LEN)
        .map(|t| {
            let u = |o: usize| u16::from_le_bytes(t[o..o + 2].try_into().unwrap());
            let f = |o: usize| f32::from_le_bytes(t[o..o + 4].try_into().unwrap()) as f64;
            SurfaceTuple {
                row: u(0),
                col: u(2),
                len: u(4),
                coefficients: SurfaceCoefficients::new(f(6), f(10), f(14)),
            }
        })
        .collect();
    pos += n_tuples * TUPLE_LEN;

    let fitted = fitted_mask_from_tuples(&tuples, &occupancy, header.block_size as usize)
        .map_err(|e| corrupt(e.to_string()))?;
    let unfit_mask = occupancy.difference(&fitted);
    let n_values = unfit_mask.count();
    let mut values = Vec::with_capacity(n_values);
    for _ in 0..n_values {
        values.push(varint::read_u64(raw, &mut pos).ok_or_else(|| corrupt("truncated unfit values"))?);
    }
    if pos != raw.len() {
        return Err(corrupt(format!("{} trailing payload bytes", raw.len() - pos)));
    }

    let unfit = if header.is_raw() {
        UnfitSection::Raw(values)
    } else {
        let signed: Vec<i64> = values.into_iter().map(varint::unzigzag).collect();
        let q = QuantizedCoefficients::from_support_values(
            PackedShape::from_mask(&unfit_mask),
            header.q_step as f64,
            &signed,
        )
        .map_err(|e| corrupt(e.to_string()))?;
        UnfitSection::Quantized(q)
    };
    Ok(FrameSections {
        occupancy,
        tuples,
        unfit,
    })
}

/// A serialized frame: header plus entropy-coded payload.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFrame {
    pub header: FrameHeader,
    pub payload: Vec<u8>,
}

impl CompressedFrame {
    pub fn len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BitstreamError> {
        let header = FrameHeader::parse(bytes)?;
        Ok(Self {
            header,
            payload: bytes[HEADER_LEN..].to_vec(),
        })
    }
}

pub fn encode_frame(
    header: FrameHeader,
    sections: &FrameSections,
    backend: EntropyBackend,
) -> Result<CompressedFrame, BitstreamError> {
    header.validate().map_err(|e| BitstreamError::InconsistentShape(e.to_string()))?;
    let occ = &sections.occupancy;
    if occ.width() != header.width as usize || occ.height() != header.height as usize {
        return Err(BitstreamError::InconsistentShape("occupancy does not match header grid".into()));
    }
    if occ.count() != header.point_count as usize || sections.tuples.len() != header.surface_count as usize {
        return Err(BitstreamError::InconsistentShape("header counts disagree with sections".into()));
    }
    let raw_mode = matches!(sections.unfit, UnfitSection::Raw(_));
    if raw_mode != header.is_raw() {
        return Err(BitstreamError::InconsistentShape(
            "q_step of 0 must pair with raw unfit ranges".into(),
        ));
    }
    if let UnfitSection::Quantized(q) = &sections.unfit {
        if q.q_step() != header.q_step as f64 {
            return Err(BitstreamError::InconsistentShape("q_step differs from header".into()));
        }
    }
    let raw = serialize_sections(sections, header.block_size as usize)?;
    Ok(CompressedFrame {
        header,
        payload: backend.encode(&raw)?,
    })
}

/// Parses and fully validates a frame.
pub fn decode_frame(bytes: &[u8], backend: EntropyBackend) -> Result<(FrameHeader, FrameSections), BitstreamError> {
    let header = FrameHeader::parse(bytes)?;
    let raw = backend.decode(&bytes[HEADER_LEN..], header.max_payload_len())?;
    let sections = deserialize_sections(&raw, &header)?;
    Ok((header, sections))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(w: u16, h: u16) -> FrameHeader {
        FrameHeader {
            width: w,
            height: h,
            delta_theta: 0.01,
            delta_phi: 0.01,
            h_offset: 3.0,
            v_offset: 0.4,
            delta_r: 0.3,
            q_step: 0.0,
            block_size: 4,
            surface_count: 0,
            point_count: 0,
            level_id: 2,
        }
    }

    #[test]
    fn header_round_trip_and_layout() {
        let h = header(720, 56);
        let b = h.to_bytes();
        assert_eq!(&b[..4], b"RIMC");
        assert_eq!(u16::from_le_bytes([b[5], b[6]]), 720);
        assert_eq!(b[42], 2);
        assert_eq!(FrameHeader::parse(&b).unwrap(), h);
    }

    #[test]
    fn header_errors() {
        let mut b = header(8, 8).to_bytes();
        b[4] = 9;
        assert_eq!(FrameHeader::parse(&b), Err(BitstreamError::UnsupportedVersion(9)));
        b[0] = b'X';
        assert!(matches!(FrameHeader::parse(&b), Err(BitstreamError::BadMagic(_))));
        assert!(matches!(
            FrameHeader::parse(&header(8, 8).to_bytes()[..20]),
            Err(BitstreamError::CorruptStream(_))
        ));
    }

    #[test]
    fn empty_frame_size() {
        let s = FrameSections {
            occupancy: ShapeMask::new(20, 3),
            tuples: vec![],
            unfit: UnfitSection::Raw(vec![]),
        };
        let raw = serialize_sections(&s, 4).unwrap();
        assert_eq!(raw, vec![0u8; 8]);
        let f = encode_frame(header(20, 3), &s, EntropyBackend::Identity).unwrap();
        assert_eq!(f.len(), HEADER_LEN + 8);
        let (_, back) = decode_frame(&f.to_bytes(), EntropyBackend::Identity).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn tuple_record_offset() {
        // 16x16 grid, block (row 2, col 3) fully occupied.
        let mut occ = ShapeMask::new(16, 16);
        for j in 8..12 {
            for i in 12..16 {
                occ.set(i, j, true);
            }
        }
        let t = SurfaceTuple {
            row: 2,
            col: 3,
            len: 1,
            coefficients: SurfaceCoefficients::new(0.0, 0.0, 0.1),
        };
        let s = FrameSections {
            occupancy: occ,
            tuples: vec![t],
            unfit: UnfitSection::Raw(vec![]),
        };
        let raw = serialize_sections(&s, 4).unwrap();
        let at = 256 / 8;
        assert_eq!(raw.len(), at + TUPLE_LEN);
        assert_eq!(&raw[at..at + 6], &[2, 0, 3, 0, 1, 0]);
        assert_eq!(&raw[at + 14..at + 18], &0.1f32.to_le_bytes());
    }

    #[test]
    fn inconsistent_support_rejected() {
        let mut occ = ShapeMask::new(4, 4);
        occ.set(1, 1, true);
        let s = FrameSections {
            occupancy: occ,
            tuples: vec![],
            unfit: UnfitSection::Raw(vec![]),
        };
        assert!(matches!(serialize_sections(&s, 4), Err(BitstreamError::InconsistentShape(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let s = FrameSections {
            occupancy: ShapeMask::new(8, 1),
            tuples: vec![],
            unfit: UnfitSection::Raw(vec![]),
        };
        let mut bytes = encode_frame(header(8, 1), &s, EntropyBackend::Identity).unwrap().to_bytes();
        bytes.push(0);
        assert!(matches!(
            decode_frame(&bytes, EntropyBackend::Identity),
            Err(BitstreamError::CorruptStream(_))
        ));
    }
}
