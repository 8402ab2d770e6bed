//! Euclidean plane model, kept as a baseline for the fitted-error harness.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{block_pixels, max_residual, BlockCoord, BlockModel, FitConfig, NoFit, SurfaceError};
use crate::range_image::{ProjectionConfig, RangeImage};

/// `a·x + b·y + c·z + d = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PlaneCoefficients {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    fn along(&self, dir: [f64; 3]) -> Result<f64, SurfaceError> {
        let den = self.a * dir[0] + self.b * dir[1] + self.c * dir[2];
        if den.abs() < 1e-12 || !den.is_finite() {
            return Err(SurfaceError::DegeneratePlane);
        }
        Ok(-self.d / den)
    }
}

/// Range at which the ray with azimuth `theta` and elevation `phi` meets the
/// plane.
pub fn predict_range_plane(plane: &PlaneCoefficients, theta: f64, phi: f64) -> Result<f64, SurfaceError> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    plane.along([cp * ct, cp * st, sp])
}

/// Total least-squares plane through the block's back-projected pixels.
pub fn fit_plane_block(
    image: &RangeImage,
    block: BlockCoord,
    config: &FitConfig,
) -> Result<PlaneCoefficients, NoFit> {
    let cfg = image.config();
    let pts: Vec<Vector3<f64>> = block_pixels(image, block, config.block_size)
        .map(|(i, j, r)| Vector3::from(cfg.ray(i, j)) * r)
        .collect();
    if pts.len() < config.min_points {
        return Err(NoFit::TooFewPoints {
            found: pts.len(),
            required: config.min_points,
        });
    }
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    // Collinear points leave two near-zero eigenvalues and no unique plane.
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE) {
        return Err(NoFit::Singular);
    }
    let n = eig.eigenvectors.column(order[0]).into_owned();
    let plane = PlaneCoefficients::new(n.x, n.y, n.z, -n.dot(&centroid));
    let worst = max_residual(block_pixels(image, block, config.block_size), |i, j| {
        plane.along(cfg.ray(i, j)).ok().filter(|r| *r > 0.0)
    });
    if worst < config.delta_r {
        Ok(plane)
    } else {
        Err(NoFit::Threshold {
            max_residual: worst,
        })
    }
}

pub(crate) struct PlaneModel {
    config: ProjectionConfig,
}

impl PlaneModel {
    pub(crate) fn new(config: &ProjectionConfig) -> Self {
        Self { config: *config }
    }
}

impl BlockModel for PlaneModel {
    type Coeffs = PlaneCoefficients;

    fn fit(&self, image: &RangeImage, block: BlockCoord, config: &FitConfig) -> Option<Self::Coeffs> {
        fit_plane_block(image, block, config).ok()
    }

    fn predict(&self, coeffs: &Self::Coeffs, i: usize, j: usize) -> Option<f64> {
        coeffs.along(self.config.ray(i, j)).ok().filter(|r| *r > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn axis_planes() {
        let z5 = PlaneCoefficients::new(0.0, 0.0, 1.0, -5.0);
        assert!((predict_range_plane(&z5, 0.0, FRAC_PI_2).unwrap() - 5.0).abs() < 1e-12);
        let x2 = PlaneCoefficients::new(1.0, 0.0, 0.0, -2.0);
        assert!((predict_range_plane(&x2, 0.0, 0.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(
            predict_range_plane(&x2, FRAC_PI_2, 0.0),
            Err(SurfaceError::DegeneratePlane)
        );
    }

    #[test]
    fn matches_ray_plane_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let p0 = Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-5.0..5.0),
            );
            let plane = PlaneCoefficients::new(n.x, n.y, n.z, -n.dot(&p0));
            let theta: f64 = rng.random_range(-3.0..3.0);
            let phi: f64 = rng.random_range(-1.0..1.0);
            let dir = Vector3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
            let den = n.dot(&dir);
            if den.abs() < 1e-3 {
                continue;
            }
            // Distance t with (t·dir − p0)·n = 0.
            let t = p0.dot(&n) / den;
            let got = predict_range_plane(&plane, theta, phi).unwrap();
            assert!((got - t).abs() < 1e-9 * t.abs().max(1.0), "{got} vs {t}");
        }
    }

    #[test]
    fn fits_a_wall() {
        let d = 0.5f64.to_radians();
        let cfg = ProjectionConfig::from_radians(d, d, 4.0 * d, 4.0 * d, 8, 8).unwrap();
        let wall = PlaneCoefficients::new(1.0, 0.0, 0.0, -10.0);
        let mut img = RangeImage::empty(cfg);
        for j in 0..8 {
            for i in 0..8 {
                img.set(i, j, wall.along(cfg.ray(i, j)).unwrap());
            }
        }
        let fc = FitConfig::with_delta_r(1e-6).unwrap();
        let p = fit_plane_block(&img, BlockCoord { row: 1, col: 0 }, &fc).unwrap();
        let scale = -10.0 / p.d;
        assert!((p.a * scale - 1.0).abs() < 1e-9);
    }
}
