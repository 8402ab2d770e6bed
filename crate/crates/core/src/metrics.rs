//! Range-domain error and rate measurements.

use std::fmt;
use std::io::Write;

use crate::mask::ShapeMask;
use crate::pipeline::RAW_POINT_BYTES;
use crate::range_image::RangeImage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("images have different projection configs")]
    ConfigMismatch,
}

/// Sum of absolute range errors and the number of cells compared.
fn abs_error(
    original: &RangeImage,
    reconstructed: &RangeImage,
    mask: Option<&ShapeMask>,
) -> Result<(f64, usize), MetricsError> {
    if original.config() != reconstructed.config() {
        return Err(MetricsError::ConfigMismatch);
    }
    if let Some(m) = mask {
        if m.width() != original.width() || m.height() != original.height() {
            return Err(MetricsError::ConfigMismatch);
        }
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (i, j, r) in original.iter_occupied() {
        if mask.is_some_and(|m| !m.get(i, j)) {
            continue;
        }
        if let Some(rr) = reconstructed.get(i, j) {
            sum += (r - rr).abs();
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Mean absolute range error in centimeters over cells occupied in both
/// images (and in `mask`, when given). Zero when nothing overlaps.
pub fn range_mae(
    original: &RangeImage,
    reconstructed: &RangeImage,
    mask: Option<&ShapeMask>,
) -> Result<f64, MetricsError> {
    let (sum, n) = abs_error(original, reconstructed, mask)?;
    Ok(if n == 0 { 0.0 } else { 100.0 * sum / n as f64 })
}

/// `raw / compressed`, or 0 when there is nothing to compress.
pub fn ratio_of(raw_bytes: usize, compressed_bytes: usize) -> f64 {
    if raw_bytes == 0 || compressed_bytes == 0 {
        0.0
    } else {
        raw_bytes as f64 / compressed_bytes as f64
    }
}

/// `(points × 16) / compressed_bytes`; 0 for an empty cloud.
pub fn compression_ratio(point_count: usize, compressed_bytes: usize) -> f64 {
    ratio_of(point_count * RAW_POINT_BYTES, compressed_bytes)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QualityReport {
    pub overall_mae: f64,
    pub fitted_mae: f64,
    pub unfit_mae: f64,
    pub compression_ratio: f64,
    pub dropped_fraction: f64,
    pub fitted_fraction: f64,
}

impl QualityReport {
    /// Compares a decoded image to the coded one. `input_points` is the size
    /// of the cloud before projection.
    pub fn evaluate(
        original: &RangeImage,
        reconstructed: &RangeImage,
        fitted_mask: &ShapeMask,
        input_points: usize,
        compressed_bytes: usize,
    ) -> Result<Self, MetricsError> {
        let occupied = original.occupied_count();
        let unfit_mask = original.occupancy().difference(fitted_mask);
        Ok(Self {
            overall_mae: range_mae(original, reconstructed, None)?,
            fitted_mae: range_mae(original, reconstructed, Some(fitted_mask))?,
            unfit_mae: range_mae(original, reconstructed, Some(&unfit_mask))?,
            compression_ratio: compression_ratio(input_points, compressed_bytes),
            dropped_fraction: if input_points == 0 {
                0.0
            } else {
                (input_points - occupied) as f64 / input_points as f64
            },
            fitted_fraction: if occupied == 0 {
                0.0
            } else {
                fitted_mask.count() as f64 / occupied as f64
            },
        })
    }

    pub const CSV_HEADER: &'static str =
        "overall_mae_cm,fitted_mae_cm,unfit_mae_cm,compression_ratio,dropped_fraction,fitted_fraction";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.6},{:.6}",
            self.overall_mae,
            self.fitted_mae,
            self.unfit_mae,
            self.compression_ratio,
            self.dropped_fraction,
            self.fitted_fraction
        )
    }

    pub fn write_csv<W: Write>(reports: &[QualityReport], mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in reports {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }

    /// Field-wise mean.
    pub fn mean(reports: &[QualityReport]) -> QualityReport {
        if reports.is_empty() {
            return QualityReport::default();
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&QualityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        QualityReport {
            overall_mae: avg(|r| r.overall_mae),
            fitted_mae: avg(|r| r.fitted_mae),
            unfit_mae: avg(|r| r.unfit_mae),
            compression_ratio: avg(|r| r.compression_ratio),
            dropped_fraction: avg(|r| r.dropped_fraction),
            fitted_fraction: avg(|r| r.fitted_fraction),
        }
    }
}

impl fmt::Display for QualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>10}", "metric", "value")?;
        writeln!(f, "{:<18} {:>10.3}", "MAE (cm)", self.overall_mae)?;
        writeln!(f, "{:<18} {:>10.3}", "fitted MAE (cm)", self.fitted_mae)?;
        writeln!(f, "{:<18} {:>10.3}", "unfit MAE (cm)", self.unfit_mae)?;
        writeln!(f, "{:<18} {:>10.2}", "CR", self.compression_ratio)?;
        writeln!(f, "{:<18} {:>10.4}", "dropped", self.dropped_fraction)?;
        write!(f, "{:<18} {:>10.4}", "fitted", self.fitted_fraction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::range_image::ProjectionConfig;

    fn img(vals: &[(usize, usize, f64)]) -> RangeImage {
        let cfg = ProjectionConfig::from_radians(0.01, 0.01, 0.0, 0.0, 4, 4).unwrap();
        let mut im = RangeImage::empty(cfg);
        for &(i, j, r) in vals {
            im.set(i, j, r);
        }
        im
    }

    #[test]
    fn identical_is_zero() {
        let a = img(&[(0, 0, 3.0), (1, 2, 7.5)]);
        assert_eq!(range_mae(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let a = img(&[(0, 0, 3.0), (1, 2, 7.5), (3, 3, 10.0)]);
        let b = img(&[(0, 0, 3.05), (1, 2, 7.55), (3, 3, 10.05)]);
        assert!((range_mae(&a, &b, None).unwrap() - 5.0).abs() < 1e-9);
        assert!((range_mae(&b, &a, None).unwrap() - 5.0).abs() < 1e-9);
        let mut m = ShapeMask::new(4, 4);
        m.set(0, 0, true);
        assert!((range_mae(&a, &b, Some(&m)).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn config_mismatch() {
        let a = img(&[]);
        let cfg = ProjectionConfig::from_radians(0.02, 0.01, 0.0, 0.0, 4, 4).unwrap();
        let b = RangeImage::empty(cfg);
        assert_eq!(range_mae(&a, &b, None), Err(MetricsError::ConfigMismatch));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(compression_ratio(120_000, 48_000), 40.0);
        assert_eq!(compression_ratio(0, 100), 0.0);
    }

    #[test]
    fn report_fractions() {
        let a = img(&[(0, 0, 3.0), (1, 0, 3.0), (2, 0, 3.0), (3, 0, 3.0)]);
        let mut fitted = ShapeMask::new(4, 4);
        fitted.set(0, 0, true);
        let r = QualityReport::evaluate(&a, &a, &fitted, 5, 8).unwrap();
        assert!((r.fitted_fraction - 0.25).abs() < 1e-12);
        assert!((r.dropped_fraction - 0.2).abs() < 1e-12);
        assert_eq!(r.compression_ratio, 10.0);
        assert!(r.to_string().contains("CR"));
    }
}
