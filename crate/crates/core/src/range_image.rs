//! Spherical projection between Cartesian point clouds and 2D range images.
//!
//! Column index `i` follows azimuth, row index `j` follows elevation. Both
//! are shifted by the configured offsets so that every in-FOV point lands on a
//! non-negative index.

use crate::mask::ShapeMask;

/// Tolerance added before flooring so that angles sitting exactly on a pixel
/// edge are not pushed into the previous cell by rounding.
const FLOOR_EPS: f64 = 1e-9;

/// A LiDAR return in sensor-origin Cartesian coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: Option<f32>,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: None,
        }
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Azimuth `atan2(y, x)` in radians.
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Elevation `atan2(z, sqrt(x² + y²))` in radians.
    pub fn elevation(&self) -> f64 {
        self.z.atan2(self.x.hypot(self.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ProjectionConfigError {
    #[error("angular resolution must be finite and positive, got {0}")]
    BadResolution(f64),
    #[error("field of view must be finite and positive, got {0}")]
    BadFov(f64),
    #[error("offset must be finite, got {0}")]
    BadOffset(f64),
    #[error("image dimensions {width}x{height} out of range")]
    BadDimensions { width: usize, height: usize },
}

/// Angular grid of a range image. All angles are radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub delta_theta: f64,
    pub delta_phi: f64,
    pub h_offset: f64,
    pub v_offset: f64,
    pub width: usize,
    pub height: usize,
}

impl ProjectionConfig {
    /// Builds a grid from degree-valued parameters; `W = ⌈h_fov/Δθ⌉`,
    /// `H = ⌈v_fov/Δφ⌉`.
    pub fn from_degrees(
        delta_theta: f64,
        delta_phi: f64,
        h_fov: f64,
        v_fov: f64,
        h_offset: f64,
        v_offset: f64,
    ) -> Result<Self, ProjectionConfigError> {
        for r in [delta_theta, delta_phi] {
            if !(r.is_finite() && r > 0.0) {
                return Err(ProjectionConfigError::BadResolution(r));
            }
        }
        for f in [h_fov, v_fov] {
            if !(f.is_finite() && f > 0.0) {
                return Err(ProjectionConfigError::BadFov(f));
            }
        }
        for o in [h_offset, v_offset] {
            if !o.is_finite() {
                return Err(ProjectionConfigError::BadOffset(o));
            }
        }
        let width = (h_fov / delta_theta - FLOOR_EPS).ceil().max(1.0) as usize;
        let height = (v_fov / delta_phi - FLOOR_EPS).ceil().max(1.0) as usize;
        Self::from_radians(
            delta_theta.to_radians(),
            delta_phi.to_radians(),
            h_offset.to_radians(),
            v_offset.to_radians(),
            width,
            height,
        )
    }

    /// KITTI HDL-64E layout: full 360° sweep, elevation in [-25°, +3°].
    pub fn kitti(delta_theta_deg: f64, delta_phi_deg: f64) -> Result<Self, ProjectionConfigError> {
        Self::from_degrees(delta_theta_deg, delta_phi_deg, 360.0, 28.0, 180.0, 25.0)
    }

    pub fn from_radians(
        delta_theta: f64,
        delta_phi: f64,
        h_offset: f64,
        v_offset: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, ProjectionConfigError> {
        for r in [delta_theta, delta_phi] {
            if !(r.is_finite() && r > 0.0) {
                return Err(ProjectionConfigError::BadResolution(r));
            }
        }
        for o in [h_offset, v_offset] {
            if !o.is_finite() {
                return Err(ProjectionConfigError::BadOffset(o));
            }
        }
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(ProjectionConfigError::BadDimensions { width, height });
        }
        Ok(Self {
            delta_theta,
            delta_phi,
            h_offset,
            v_offset,
            width,
            height,
        })
    }

    /// Rounds every angle through `f32`, the precision carried by the frame
    /// header, so encoder and decoder agree on the grid exactly.
    pub fn to_wire_precision(&self) -> Self {
        let r = |v: f64| v as f32 as f64;
        Self {
            delta_theta: r(self.delta_theta),
            delta_phi: r(self.delta_phi),
            h_offset: r(self.h_offset),
            v_offset: r(self.v_offset),
            ..*self
        }
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    /// Pixel index of a point, or `None` when it falls outside the grid.
    pub fn pixel_of(&self, p: &Point3) -> Option<(usize, usize)> {
        let i = ((p.azimuth() + self.h_offset) / self.delta_theta + FLOOR_EPS).floor();
        let j = ((p.elevation() + self.v_offset) / self.delta_phi + FLOOR_EPS).floor();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    /// Azimuth of the center of column `i`.
    pub fn azimuth_of(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.delta_theta - self.h_offset
    }

    /// Elevation of the center of row `j`.
    pub fn elevation_of(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.delta_phi - self.v_offset
    }

    /// Unit ray direction through the center of pixel `(i, j)`.
    pub fn ray(&self, i: usize, j: usize) -> [f64; 3] {
        let (st, ct) = self.azimuth_of(i).sin_cos();
        let (sp, cp) = self.elevation_of(j).sin_cos();
        [cp * ct, cp * st, sp]
    }
}

/// Counters describing what happened to each input point during projection.
///
/// `points_in = projected + out_of_fov + collided + skipped` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub points_in: usize,
    /// Occupied cells after projection.
    pub projected: usize,
    pub out_of_fov: usize,
    /// Points that lost a cell to a nearer return.
    pub collided: usize,
    /// Non-finite or zero-range points.
    pub skipped: usize,
}

impl ProjectionStats {
    pub fn dropped(&self) -> usize {
        self.out_of_fov + self.collided + self.skipped
    }
}

/// H×W grid of optional ranges. Empty cells are stored as `0.0`, which can
/// never be a valid range.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    config: ProjectionConfig,
    cells: Vec<f64>,
}

impl RangeImage {
    pub fn empty(config: ProjectionConfig) -> Self {
        Self {
            cells: vec![0.0; config.cell_count()],
            config,
        }
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.config.width && j < self.config.height);
        j * self.config.width + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let r = self.cells[self.index(i, j)];
        (r > 0.0).then_some(r)
    }

    /// Stores a range. Non-positive or non-finite values clear the cell.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, r: f64) {
        let idx = self.index(i, j);
        self.cells[idx] = if r.is_finite() && r > 0.0 { r } else { 0.0 };
    }

    #[inline]
    pub fn clear(&mut self, i: usize, j: usize) {
        let idx = self.index(i, j);
        self.cells[idx] = 0.0;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&r| r > 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied_count() == 0
    }

    /// Occupied cells as `(i, j, r)` in row-major order.
    pub fn iter_occupied(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.config.width;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0)
            .map(move |(idx, &r)| (idx % w, idx / w, r))
    }

    pub fn occupancy(&self) -> ShapeMask {
        let mut mask = ShapeMask::new(self.config.width, self.config.height);
        for (i, j, _) in self.iter_occupied() {
            mask.set(i, j, true);
        }
        mask
    }

    /// Copy of `self` restricted to the cells set in `mask`.
    pub fn masked(&self, mask: &ShapeMask) -> RangeImage {
        let mut out = RangeImage::empty(self.config);
        for (i, j, r) in self.iter_occupied() {
            if mask.get(i, j) {
                out.set(i, j, r);
            }
        }
        out
    }

    /// Raw row-major cell storage; `0.0` marks empty cells.
    pub fn cells(&self) -> &[f64] {
        &self.cells
    }
}

/// Projects a cloud onto the grid. On collision the nearer return wins.
pub fn project(cloud: &[Point3], config: &ProjectionConfig) -> (RangeImage, ProjectionStats) {
    let mut image = RangeImage::empty(*config);
    let mut stats = ProjectionStats {
        points_in: cloud.len(),
        ..Default::default()
    };
    for p in cloud {
        let r = p.range();
        if !p.is_finite() || !(r > 0.0) {
            stats.skipped += 1;
            continue;
        }
        let Some((i, j)) = config.pixel_of(p) else {
            stats.out_of_fov += 1;
            continue;
        };
        match image.get(i, j) {
            Some(existing) => {
                stats.collided += 1;
                if r < existing {
                    image.set(i, j, r);
                }
            }
            None => image.set(i, j, r),
        }
    }
    stats.projected = image.occupied_count();
    (image, stats)
}

/// Emits one point per occupied cell, placed on the ray through the pixel
/// center.
pub fn back_project(image: &RangeImage) -> Vec<Point3> {
    let cfg = image.config();
    let cols: Vec<(f64, f64)> = (0..cfg.width).map(|i| cfg.azimuth_of(i).sin_cos()).collect();
    let rows: Vec<(f64, f64)> = (0..cfg.height).map(|j| cfg.elevation_of(j).sin_cos()).collect();
    image
        .iter_occupied()
        .map(|(i, j, r)| {
            let (st, ct) = cols[i];
            let (sp, cp) = rows[j];
            Point3::new(r * cp * ct, r * cp * st, r * sp)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_degree() -> ProjectionConfig {
        ProjectionConfig::from_degrees(1.0, 1.0, 360.0, 28.0, 180.0, 25.0).unwrap()
    }

    #[test]
    fn dimensions_follow_fov() {
        let cfg = ProjectionConfig::kitti(0.5, 0.5).unwrap();
        assert_eq!((cfg.width, cfg.height), (720, 56));
        let cfg = ProjectionConfig::kitti(0.35, 0.35).unwrap();
        assert_eq!((cfg.width, cfg.height), (1029, 80));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(ProjectionConfig::kitti(0.0, 0.5).is_err());
        assert!(ProjectionConfig::kitti(0.5, -1.0).is_err());
        assert!(ProjectionConfig::from_degrees(0.5, 0.5, f64::NAN, 28.0, 180.0, 25.0).is_err());
    }

    #[test]
    fn forward_axis_lands_on_offset_cell() {
        let cfg = one_degree();
        assert_eq!(cfg.pixel_of(&Point3::new(1.0, 0.0, 0.0)), Some((180, 25)));
        assert_eq!(cfg.pixel_of(&Point3::new(0.0, 1.0, 0.0)), Some((270, 25)));
        let (img, stats) = project(&[Point3::new(1.0, 0.0, 0.0)], &cfg);
        assert_eq!(img.get(180, 25), Some(1.0));
        assert_eq!(stats.projected, 1);
    }

    #[test]
    fn collision_keeps_nearest() {
        let cfg = one_degree();
        let cloud = [
            Point3::new(10.0, 0.0, 0.0),
            Point3::new(4.0, 0.001, 0.0),
            Point3::new(7.0, 0.0, 0.001),
        ];
        let (img, stats) = project(&cloud, &cfg);
        assert_eq!(img.occupied_count(), 1);
        assert!((img.get(180, 25).unwrap() - Point3::new(4.0, 0.001, 0.0).range()).abs() < 1e-12);
        assert_eq!(stats.collided, 2);
    }

    #[test]
    fn drops_are_counted() {
        let cfg = one_degree();
        let cloud = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(f64::NAN, 1.0, 0.0),
            Point3::new(1.0, 0.0, 5.0), // far above the +3° limit
            Point3::new(1.0, 0.0, 0.0),
        ];
        let (_, s) = project(&cloud, &cfg);
        assert_eq!(s.skipped, 2);
        assert_eq!(s.out_of_fov, 1);
        assert_eq!(s.projected, 1);
        assert_eq!(s.points_in, s.projected + s.out_of_fov + s.collided + s.skipped);
    }

    #[test]
    fn empty_image_back_projects_to_nothing() {
        assert!(back_project(&RangeImage::empty(one_degree())).is_empty());
    }

    #[test]
    fn center_pixel_back_projects_on_axis() {
        // Offsets chosen so that the center of pixel (0, 0) sits at θ = φ = 0.
        let d = 1f64.to_radians();
        let cfg = ProjectionConfig::from_radians(d, d, d / 2.0, d / 2.0, 4, 4).unwrap();
        let mut img = RangeImage::empty(cfg);
        img.set(0, 0, 5.0);
        let p = back_project(&img)[0];
        assert!((p.x - 5.0).abs() < 1e-12 && p.y.abs() < 1e-12 && p.z.abs() < 1e-12);
    }

    #[test]
    fn round_trip_preserves_range_and_bounds_angle() {
        let cfg = ProjectionConfig::kitti(0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud: Vec<Point3> = (0..1000)
            .map(|_| {
                let az: f64 = rng.random_range(-179.0f64..179.0).to_radians();
                let el: f64 = rng.random_range(-24.0f64..2.5).to_radians();
                let r: f64 = rng.random_range(1.0..80.0);
                Point3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin())
            })
            .collect();
        let (img, _) = project(&cloud, &cfg);
        let half = cfg.delta_theta.max(cfg.delta_phi) / 2.0 + 1e-12;
        for (i, j, r) in img.iter_occupied() {
            // Find the source point that won this cell.
            let src = cloud
                .iter()
                .filter(|p| cfg.pixel_of(p) == Some((i, j)))
                .min_by(|a, b| a.range().total_cmp(&b.range()))
                .unwrap();
            assert_eq!(r, src.range());
            let dth = (src.azimuth() - cfg.azimuth_of(i)).abs();
            let dph = (src.elevation() - cfg.elevation_of(j)).abs();
            assert!(dth <= half && dph <= half, "angular error {dth} {dph}");
        }
    }

    #[test]
    fn reprojection_is_idempotent() {
        let cfg = ProjectionConfig::kitti(0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut img = RangeImage::empty(cfg);
        for _ in 0..3000 {
            let i = rng.random_range(0..cfg.width);
            let j = rng.random_range(0..cfg.height);
            img.set(i, j, rng.random_range(0.5..120.0));
        }
        let (again, stats) = project(&back_project(&img), &cfg);
        assert_eq!(stats.dropped(), 0);
        assert_eq!(again.occupancy(), img.occupancy());
        for (i, j, r) in img.iter_occupied() {
            assert!((again.get(i, j).unwrap() - r).abs() <= 1e-6 * r);
        }
    }
}
