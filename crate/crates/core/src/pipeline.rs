//! End-to-end encoder and decoder.
//!
//! ```text
//! cloud → project → encode_surfaces → SA-DCT → quantize → encode_frame
//! frame → decode_frame → decode_surfaces → dequantize → SA-IDCT → back_project
//! ```
//!
//! A `q_step` of zero selects the raw path: unfit ranges are stored at
//! micrometer resolution instead of being transformed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::bitstream::{
    decode_frame, encode_frame, BitstreamError, CompressedFrame, EntropyBackend, FrameHeader,
    FrameSections, UnfitSection, CUSTOM_LEVEL, RAW_RANGE_UNIT,
};
use crate::mask::ShapeMask;
use crate::metrics::ratio_of;
use crate::range_image::{back_project, project, Point3, ProjectionConfig, ProjectionStats, RangeImage};
use crate::sadct::{dequantize, quantize, sa_dct_forward, sa_idct_inverse, SadctError};
use crate::surface::{decode_surfaces, encode_surfaces, FitConfig, SurfaceError};

/// Bytes per point of the uncompressed input (KITTI `x, y, z, intensity`).
pub const RAW_POINT_BYTES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Sadct(#[from] SadctError),
}

/// One rung of the quality ladder: `(Δθ, Δφ, Δr, q_step)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionLevel {
    pub id: u8,
    pub delta_theta_deg: f64,
    pub delta_phi_deg: f64,
    pub delta_r: f64,
    pub q_step: f64,
}

impl CompressionLevel {
    pub const fn new(id: u8, delta_theta_deg: f64, delta_phi_deg: f64, delta_r: f64, q_step: f64) -> Self {
        Self {
            id,
            delta_theta_deg,
            delta_phi_deg,
            delta_r,
            q_step,
        }
    }

    /// Parameters outside the ladder.
    pub const fn custom(delta_theta_deg: f64, delta_phi_deg: f64, delta_r: f64, q_step: f64) -> Self {
        Self::new(CUSTOM_LEVEL, delta_theta_deg, delta_phi_deg, delta_r, q_step)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.delta_theta_deg) || !pos(self.delta_phi_deg) {
            return Err(CodecError::Config("angular resolution must be positive".into()));
        }
        if !pos(self.delta_r) {
            return Err(CodecError::Config("delta_r must be positive".into()));
        }
        if !(self.q_step.is_finite() && self.q_step >= 0.0) {
            return Err(CodecError::Config("q_step must be non-negative".into()));
        }
        Ok(())
    }

    fn as_tuple(&self) -> [f64; 4] {
        [self.delta_theta_deg, self.delta_phi_deg, self.delta_r, self.q_step]
    }
}

impl fmt::Display for CompressionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.delta_theta_deg, self.delta_phi_deg, self.delta_r, self.q_step
        )
    }
}

impl FromStr for CompressionLevel {
    type Err = String;

    /// `Δθ,Δφ,Δr,q_step` with angles in degrees.
    fn from_str(s: &str) -> Result<Self, String> {
        let vals = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let [a, b, c, d] = vals[..] else {
            return Err(format!("expected four comma-separated values, got {}", vals.len()));
        };
        let level = Self::custom(a, b, c, d);
        level.validate().map_err(|e| e.to_string())?;
        Ok(level)
    }
}

/// Six levels from fine (0) to coarse (5). Level 2 is `(0.5, 0.5, 0.3, 0.2)`.
pub fn default_ladder() -> Vec<CompressionLevel> {
    vec![
        CompressionLevel::new(0, 0.4, 0.4, 0.2, 0.1),
        CompressionLevel::new(1, 0.45, 0.45, 0.25, 0.15),
        CompressionLevel::new(2, 0.5, 0.5, 0.3, 0.2),
        CompressionLevel::new(3, 0.7, 0.7, 0.4, 0.4),
        CompressionLevel::new(4, 1.0, 1.0, 0.5, 0.7),
        CompressionLevel::new(5, 1.4, 1.4, 0.6, 1.0),
    ]
}

/// Checks ids `0..n` in order with every parameter non-decreasing.
pub fn validate_ladder(ladder: &[CompressionLevel]) -> Result<(), CodecError> {
    if ladder.is_empty() {
        return Err(CodecError::Config("empty ladder".into()));
    }
    for (k, level) in ladder.iter().enumerate() {
        level.validate()?;
        if level.id as usize != k {
            return Err(CodecError::Config(format!("ladder entry {k} has id {}", level.id)));
        }
    }
    for pair in ladder.windows(2) {
        let (a, b) = (pair[0].as_tuple(), pair[1].as_tuple());
        if a.iter().zip(&b).any(|(x, y)| y < x) {
            return Err(CodecError::Config(format!(
                "level {} is finer than level {} in some parameter",
                pair[1].id, pair[0].id
            )));
        }
    }
    Ok(())
}

/// Sensor geometry and coding options shared by encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub h_offset_deg: f64,
    pub v_offset_deg: f64,
    pub block_size: usize,
    pub min_points: usize,
    pub backend: EntropyBackend,
    pub raw_point_bytes: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            h_fov_deg: 360.0,
            v_fov_deg: 28.0,
            h_offset_deg: 180.0,
            v_offset_deg: 25.0,
            block_size: 4,
            min_points: 4,
            backend: EntropyBackend::default(),
            raw_point_bytes: RAW_POINT_BYTES,
        }
    }
}

impl CodecConfig {
    /// Grid for `level`, at the precision stored in the frame header.
    pub fn projection(&self, level: &CompressionLevel) -> Result<ProjectionConfig, CodecError> {
        ProjectionConfig::from_degrees(
            level.delta_theta_deg,
            level.delta_phi_deg,
            self.h_fov_deg,
            self.v_fov_deg,
            self.h_offset_deg,
            self.v_offset_deg,
        )
        .map(|p| p.to_wire_precision())
        .map_err(|e| CodecError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub raw_bytes: usize,
    pub compressed_bytes: usize,
    pub compression_ratio: f64,
    pub fitted_fraction: f64,
    pub encode_time_ms: f64,
    pub surface_count: usize,
    pub projection: ProjectionStats,
}

/// Encoder output with the intermediate images kept for evaluation.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub frame: CompressedFrame,
    pub report: EncodeReport,
    /// The range image actually coded (after projection).
    pub image: RangeImage,
    pub fitted_mask: ShapeMask,
}

/// Decoder output before back-projection.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub header: FrameHeader,
    pub image: RangeImage,
    pub fitted_mask: ShapeMask,
}

impl Reconstruction {
    pub fn points(&self) -> Vec<Point3> {
        back_project(&self.image)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Codec {
    pub config: CodecConfig,
}

impl Codec {
    pub fn new(config: CodecConfig) -> Self {
        Self { config }
    }

    pub fn encode(&self, cloud: &[Point3], level: &CompressionLevel) -> Result<Encoded, CodecError> {
        let started = Instant::now();
        level.validate()?;
        let projection = self.config.projection(level)?;
        let delta_r = level.delta_r;
        let q_step = level.q_step as f32 as f64;
        let fit = FitConfig::new(self.config.block_size, delta_r, self.config.min_points)?;

        let (image, stats) = project(cloud, &projection);
        let surfaces = encode_surfaces(&image, &fit);
        let occupancy = image.occupancy();
        let unfit_mask = occupancy.difference(&surfaces.fitted_mask);

        let unfit = if q_step == 0.0 {
            UnfitSection::Raw(
                surfaces
                    .unfit_image
                    .iter_occupied()
                    .map(|(_, _, r)| ((r / RAW_RANGE_UNIT).round() as u64).max(1))
                    .collect(),
            )
        } else {
            let coeffs = sa_dct_forward(&surfaces.unfit_image, &unfit_mask)?;
            UnfitSection::Quantized(quantize(&coeffs, q_step)?)
        };

        let header = FrameHeader {
            width: projection.width as u16,
            height: projection.height as u16,
            delta_theta: projection.delta_theta as f32,
            delta_phi: projection.delta_phi as f32,
            h_offset: projection.h_offset as f32,
            v_offset: projection.v_offset as f32,
            delta_r: delta_r as f32,
            q_step: q_step as f32,
            block_size: self.config.block_size as u8,
            surface_count: surfaces.tuples.len() as u32,
            point_count: stats.projected as u32,
            level_id: level.id,
        };
        let surface_count = surfaces.tuples.len();
        let fitted_mask = surfaces.fitted_mask;
        let sections = FrameSections {
            occupancy,
            tuples: surfaces.tuples,
            unfit,
        };
        let frame = encode_frame(header, &sections, self.config.backend)?;

        let compressed_bytes = frame.len();
        let fitted_fraction = if stats.projected == 0 {
            0.0
        } else {
            fitted_mask.count() as f64 / stats.projected as f64
        };
        let raw_bytes = cloud.len() * self.config.raw_point_bytes;
        let report = EncodeReport {
            raw_bytes,
            compressed_bytes,
            compression_ratio: ratio_of(raw_bytes, compressed_bytes),
            fitted_fraction,
            encode_time_ms: started.elapsed().as_secs_f64() * 1e3,
            surface_count,
            projection: stats,
        };
        Ok(Encoded {
            frame,
            report,
            image,
            fitted_mask,
        })
    }

    pub fn compress(
        &self,
        cloud: &[Point3],
        level: &CompressionLevel,
    ) -> Result<(CompressedFrame, EncodeReport), CodecError> {
        let e = self.encode(cloud, level)?;
        Ok((e.frame, e.report))
    }

    /// Decodes frame bytes to a range image.
    pub fn reconstruct(&self, bytes: &[u8]) -> Result<Reconstruction, CodecError> {
        let (header, sections) = decode_frame(bytes, self.config.backend)?;
        let projection = header.projection()?;
        let (mut image, fitted_mask) = decode_surfaces(
            &sections.tuples,
            &sections.occupancy,
            header.block_size as usize,
            &projection,
        )?;
        let unfit_mask = sections.occupancy.difference(&fitted_mask);
        match &sections.unfit {
            UnfitSection::Raw(values) => {
                for ((i, j), &v) in unfit_mask.iter_set().zip(values) {
                    image.set(i, j, v as f64 * RAW_RANGE_UNIT);
                }
            }
            UnfitSection::Quantized(q) => {
                let unfit = sa_idct_inverse(&dequantize(q), &unfit_mask, &projection)?;
                for (i, j, r) in unfit.iter_occupied() {
                    image.set(i, j, r);
                }
            }
        }
        Ok(Reconstruction {
            header,
            image,
            fitted_mask,
        })
    }

    pub fn decompress_bytes(&self, bytes: &[u8]) -> Result<Vec<Point3>, CodecError> {
        Ok(self.reconstruct(bytes)?.points())
    }

    pub fn decompress(&self, frame: &CompressedFrame) -> Result<Vec<Point3>, CodecError> {
        self.decompress_bytes(&frame.to_bytes())
    }
}

pub fn compress(cloud: &[Point3], level: &CompressionLevel) -> Result<(CompressedFrame, EncodeReport), CodecError> {
    Codec::default().compress(cloud, level)
}

pub fn decompress(frame: &CompressedFrame) -> Result<Vec<Point3>, CodecError> {
    Codec::default().decompress(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_shape() {
        let ladder = default_ladder();
        assert_eq!(ladder.len(), 6);
        validate_ladder(&ladder).unwrap();
        assert_eq!(ladder[2].as_tuple(), [0.5, 0.5, 0.3, 0.2]);
    }

    #[test]
    fn ladder_validation_catches_inversions() {
        let mut ladder = default_ladder();
        ladder[3].q_step = 0.05;
        assert!(validate_ladder(&ladder).is_err());
        let mut ladder = default_ladder();
        ladder.swap(0, 1);
        assert!(validate_ladder(&ladder).is_err());
    }

    #[test]
    fn parse_params() {
        let l: CompressionLevel = "0.5, 0.5,0.3,0.2".parse().unwrap();
        assert_eq!(l.id, CUSTOM_LEVEL);
        assert_eq!(l.as_tuple(), [0.5, 0.5, 0.3, 0.2]);
        assert!("0.5,0.5,0.3".parse::<CompressionLevel>().is_err());
        assert!("0.5,0.5,-1,0.2".parse::<CompressionLevel>().is_err());
    }

    #[test]
    fn empty_cloud() {
        let level = default_ladder()[2];
        let (frame, report) = compress(&[], &level).unwrap();
        assert_eq!(report.compression_ratio, 0.0);
        assert_eq!(report.compressed_bytes, frame.len());
        assert!(decompress(&frame).unwrap().is_empty());
    }

    #[test]
    fn single_point_round_trip() {
        let p = Point3::new(12.0, -3.0, -1.0);
        for q in [0.0, 0.2] {
            let level = CompressionLevel::custom(0.5, 0.5, 0.3, q);
            let (frame, report) = compress(&[p], &level).unwrap();
            assert_eq!(report.raw_bytes, 16);
            let out = decompress(&frame).unwrap();
            assert_eq!(out.len(), 1);
            let err = (out[0].range() - p.range()).abs();
            assert!(err < if q == 0.0 { 1e-6 } else { q }, "q={q} err={err}");
        }
    }
}
