//! Ray-cast street scenes seen by a 64-beam spinning LiDAR, for tests and
//! benchmarks when no recorded scans are at hand.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::range_image::Point3;

type V3 = Vector3<f64>;

/// Beam layout and noise of the simulated scanner.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub elevations_deg: Vec<f64>,
    pub azimuth_steps: usize,
    pub height: f64,
    pub range_sigma: f64,
    pub dropout: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl SensorModel {
    /// 64 lasers: 32 from +2° down to -8.33° in 1/3° steps, 32 from -8.83°
    /// down to -24.33° in 0.5° steps; 2083 firings per revolution; 2 cm
    /// range noise.
    pub fn hdl64() -> Self {
        let mut elevations_deg = Vec::with_capacity(64);
        for k in 0..32 {
            elevations_deg.push(2.0 - k as f64 / 3.0);
        }
        for k in 0..32 {
            elevations_deg.push(-8.83 - 0.5 * k as f64);
        }
        Self {
            elevations_deg,
            azimuth_steps: 2083,
            height: 1.73,
            range_sigma: 0.02,
            dropout: 0.02,
            min_range: 2.0,
            max_range: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Material {
    Asphalt,
    Concrete,
    Facade,
    Metal,
    Foliage,
    Bark,
    Grass,
}

const WALK_SLOPE: f64 = 0.02;
const MAX_TRACE: f64 = 130.0;
const AZIMUTH_BINS: usize = 720;
/// Per-laser range offset bound, as left by imperfect calibration.
const LASER_BIAS: f64 = 0.02;
const GRASS_ROUGHNESS: f64 = 0.03;

impl Material {
    fn reflectivity(self) -> f32 {
        match self {
            Material::Asphalt => 0.15,
            Material::Concrete => 0.3,
            Material::Facade => 0.35,
            Material::Metal => 0.6,
            Material::Foliage => 0.25,
            Material::Bark => 0.2,
            Material::Grass => 0.3,
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    /// Box rotated by `yaw` about the vertical axis through `center`.
    Cuboid { center: V3, half: V3, yaw: f64 },
    /// Vertical cylinder between `z0` and `z1`.
    Cylinder { x: f64, y: f64, radius: f64, z0: f64, z1: f64 },
    /// Ellipsoid that stops a ray part way through with exponential
    /// penetration depth, like a tree crown.
    Porous { center: V3, radii: V3, density: f64 },
}

#[derive(Debug, Clone)]
struct Object {
    shape: Shape,
    material: Material,
    bound_center: V3,
    bound_radius: f64,
}

impl Object {
    fn new(shape: Shape, material: Material) -> Self {
        let (bound_center, bound_radius) = match &shape {
            Shape::Cuboid { center, half, .. } => (*center, half.norm()),
            Shape::Cylinder { x, y, radius, z0, z1 } => {
                let h = 0.5 * (z1 - z0);
                (V3::new(*x, *y, z0 + h), (radius * radius + h * h).sqrt())
            }
            Shape::Porous { center, radii, .. } => (*center, radii.max()),
        };
        Self {
            shape,
            material,
            bound_center,
            bound_radius,
        }
    }

    /// Distance along the unit ray `o + t d` to the first hit.
    fn intersect(&self, o: &V3, d: &V3, rng: &mut ChaCha8Rng) -> Option<f64> {
        let oc = self.bound_center - o;
        let tc = oc.dot(d);
        if oc.norm_squared() - tc * tc > self.bound_radius * self.bound_radius {
            return None;
        }
        match &self.shape {
            Shape::Cuboid { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let rel = o - center;
                let lo = V3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
                let ld = V3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
                slab(&lo, &ld, half)
            }
            Shape::Cylinder { x, y, radius, z0, z1 } => {
                let (px, py) = (o.x - x, o.y - y);
                let a = d.x * d.x + d.y * d.y;
                if a < 1e-12 {
                    return None;
                }
                let b = px * d.x + py * d.y;
                let cc = px * px + py * py - radius * radius;
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                let z = o.z + t * d.z;
                (t > 0.0 && z >= *z0 && z <= *z1).then_some(t)
            }
            Shape::Porous {
                center,
                radii,
                density,
            } => {
                let lo = (o - center).component_div(radii);
                let ld = d.component_div(radii);
                let a = ld.norm_squared();
                let b = lo.dot(&ld);
                let cc = lo.norm_squared() - 1.0;
                let disc = b * b - a * cc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = ((-b - sq) / a).max(0.0);
                let t1 = (-b + sq) / a;
                if t1 <= t0 {
                    return None;
                }
                let depth = -rng.random::<f64>().max(1e-12).ln() / density;
                (t0 + depth < t1).then_some(t0 + depth)
            }
        }
    }
}

fn slab(o: &V3, d: &V3, half: &V3) -> Option<f64> {
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let t0 = (-half[k] - o[k]) / d[k];
        let t1 = (half[k] - o[k]) / d[k];
        tmin = tmin.max(t0.min(t1));
        tmax = tmax.min(t0.max(t1));
    }
    (tmax >= tmin && tmax > 0.0).then_some(if tmin > 0.0 { tmin } else { tmax })
}

/// A straight street along +x: road, raised sidewalks, facades, parked
/// cars, poles and trees.
#[derive(Debug, Clone)]
pub struct Scene {
    ground_z: f64,
    curb_height: f64,
    road_right: f64,
    road_left: f64,
    walk_right: f64,
    walk_left: f64,
    crown: f64,
    /// `[amplitude, kx, ky, phase]` terms of the terrain undulation.
    waves: Vec<[f64; 4]>,
    objects: Vec<Object>,
}

impl Scene {
    /// Random street covering `x ∈ [x0, x1]`.
    pub fn street(rng: &mut ChaCha8Rng, x0: f64, x1: f64, ground_z: f64) -> Self {
        let road_right = rng.random_range(3.5..7.0);
        let road_left = rng.random_range(3.5..9.0);
        let curb_height = rng.random_range(0.1..0.2);
        let leafy = rng.random_bool(0.5);
        let sidewalk_z = ground_z + curb_height;
        let crown = rng.random_range(0.001..0.005);
        let waves = (0..3)
            .map(|_| {
                let wavelength = rng.random_range(8.0..40.0);
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                [
                    rng.random_range(0.005..0.025),
                    k * heading.cos(),
                    k * heading.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        let mut walks = [0.0; 2];
        let mut objects = Vec::new();
        for (s, side) in [-1.0, 1.0].into_iter().enumerate() {
            let edge = if side < 0.0 { road_right } else { road_left };
            let walk = rng.random_range(2.0..4.5);
            walks[s] = walk;
            let setback = edge + walk + rng.random_range(0.0..4.0);

            let mut x = x0 - rng.random_range(0.0..15.0);
            while x < x1 {
                let len = rng.random_range(8.0..30.0);
                if rng.random_bool(0.8) {
                    let depth = rng.random_range(8.0..16.0);
                    let height = rng.random_range(4.0..20.0);
                    let yaw = rng.random_range(-0.05..0.05);
                    let inset = rng.random_range(0.0..2.0);
                    objects.push(Object::new(
                        Shape::Cuboid {
                            center: V3::new(
                                x + len / 2.0,
                                side * (setback + inset + depth / 2.0),
                                sidewalk_z + height / 2.0,
                            ),
                            half: V3::new(len / 2.0, depth / 2.0, height / 2.0),
                            yaw,
                        },
                        Material::Facade,
                    ));
                }
                x += len + if rng.random_bool(0.3) { rng.random_range(2.0..12.0) } else { 0.0 };
            }

            let mut x = x0 + rng.random_range(0.0..6.0);
            while x < x1 {
                if rng.random_bool(0.6) {
                    let y = side * (edge - rng.random_range(0.9..1.3));
                    push_car(&mut objects, rng, x, y, ground_z);
                }
                x += rng.random_range(5.0..8.0);
            }

            let mut x = x0 + rng.random_range(0.0..20.0);
            while x < x1 {
                let y = side * (edge + rng.random_range(0.3..0.8));
                objects.push(Object::new(
                    Shape::Cylinder {
                        x,
                        y,
                        radius: rng.random_range(0.06..0.15),
                        z0: sidewalk_z,
                        z1: sidewalk_z + rng.random_range(3.0..8.0),
                    },
                    Material::Metal,
                ));
                x += rng.random_range(15.0..35.0);
            }

            let spacing = if leafy { 6.0..14.0 } else { 20.0..50.0 };
            let mut x = x0 + rng.random_range(0.0..10.0);
            while x < x1 {
                let y = side * (edge + walk * rng.random_range(0.4..0.9));
                let trunk = rng.random_range(1.8..3.0);
                let crown = rng.random_range(1.5..3.2);
                objects.push(Object::new(
                    Shape::Cylinder {
                        x,
                        y,
                        radius: rng.random_range(0.12..0.3),
                        z0: sidewalk_z,
                        z1: sidewalk_z + trunk + crown,
                    },
                    Material::Bark,
                ));
                objects.push(Object::new(
                    Shape::Porous {
                        center: V3::new(x, y, sidewalk_z + trunk + crown * 0.8),
                        radii: V3::new(crown, crown, crown * 0.8),
                        density: rng.random_range(0.8..3.0),
                    },
                    Material::Foliage,
                ));
                x += rng.random_range(spacing.clone());
            }

            let mut x = x0 + rng.random_range(0.0..30.0);
            while x < x1 {
                let y = side * (edge + walk * rng.random_range(0.2..0.8));
                objects.push(Object::new(
                    Shape::Cylinder {
                        x,
                        y,
                        radius: rng.random_range(0.2..0.3),
                        z0: sidewalk_z,
                        z1: sidewalk_z + rng.random_range(1.5..1.9),
                    },
                    Material::Facade,
                ));
                x += rng.random_range(10.0..60.0);
            }

            if leafy {
                let mut x = x0 + rng.random_range(0.0..10.0);
                while x < x1 {
                    let len = rng.random_range(2.0..8.0);
                    let r = rng.random_range(0.5..1.0);
                    objects.push(Object::new(
                        Shape::Porous {
                            center: V3::new(x + len / 2.0, side * (setback - r), sidewalk_z + r * 0.7),
                            radii: V3::new(len / 2.0, r, r),
                            density: rng.random_range(2.0..6.0),
                        },
                        Material::Foliage,
                    ));
                    x += len + rng.random_range(3.0..15.0);
                }
            }
        }

        let mut x = x0 + rng.random_range(0.0..30.0);
        while x < x1 {
            let lane = rng.random_range(-road_right + 1.5..road_left - 1.5);
            push_car(&mut objects, rng, x, lane, ground_z);
            x += rng.random_range(15.0..60.0);
        }

        Self {
            ground_z,
            curb_height,
            road_right,
            road_left,
            walk_right: walks[0],
            walk_left: walks[1],
            crown,
            waves,
            objects,
        }
    }

    fn height(&self, x: f64, y: f64) -> (f64, Material) {
        let undulation: f64 = self.waves.iter().map(|w| w[0] * (w[1] * x + w[2] * y + w[3]).sin()).sum();
        if y > -self.road_right && y < self.road_left {
            let mid = 0.5 * (self.road_left - self.road_right);
            return (
                self.ground_z - self.crown * (y - mid) * (y - mid) + undulation,
                Material::Asphalt,
            );
        }
        let (edge, walk) = if y < 0.0 {
            (self.road_right, self.walk_right)
        } else {
            (self.road_left, self.walk_left)
        };
        let out = y.abs() - edge;
        let base = self.ground_z + self.curb_height + WALK_SLOPE * out.min(walk);
        if out < walk {
            (base + undulation, Material::Concrete)
        } else {
            (base + 2.0 * undulation, Material::Grass)
        }
    }

    /// March along the ray inside the slab that bounds the terrain, then
    /// bisect the first sign change. Curb faces come out of the jump in
    /// `height` at the road edge.
    fn ground_hit(&self, o: &V3, d: &V3, limit: f64) -> Option<(f64, Material)> {
        if d.z > -1e-6 {
            return None;
        }
        let amp: f64 = self.waves.iter().map(|w| w[0].abs()).sum::<f64>() * 2.0;
        let span = self.road_left.max(self.road_right);
        let z_lo = self.ground_z - self.crown * span * span * 4.0 - amp;
        let z_hi = self.ground_z + self.curb_height + WALK_SLOPE * self.walk_left.max(self.walk_right) + amp;
        let mut t = ((z_hi - o.z) / d.z).max(0.0);
        let t_end = ((z_lo - o.z) / d.z).min(limit);
        if t > t_end {
            return None;
        }
        let above = |t: f64| {
            let p = o + d * t;
            p.z - self.height(p.x, p.y).0
        };
        let mut lo = t;
        loop {
            if above(t) <= 0.0 {
                break;
            }
            if t >= t_end {
                return None;
            }
            lo = t;
            t = (t + 0.25 + 0.01 * t).min(t_end);
        }
        let mut hi = t;
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            if above(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = o + d * hi;
        Some((hi, self.height(p.x, p.y).1))
    }

    #[cfg(test)]
    fn cast(&self, o: &V3, d: &V3, rng: &mut ChaCha8Rng) -> Option<(f64, Material)> {
        let all: Vec<usize> = (0..self.objects.len()).collect();
        self.cast_among(o, d, &all, rng)
    }

    fn cast_among(&self, o: &V3, d: &V3, candidates: &[usize], rng: &mut ChaCha8Rng) -> Option<(f64, Material)> {
        let mut best: Option<(f64, Material)> = None;
        for obj in candidates.iter().map(|&k| &self.objects[k]) {
            if let Some(t) = obj.intersect(o, d, rng) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, obj.material));
                }
            }
        }
        let limit = best.map_or(MAX_TRACE, |(t, _)| t);
        self.ground_hit(o, d, limit).or(best)
    }

    /// Objects whose bounding sphere may be hit within each azimuth bin as
    /// seen from `origin`.
    fn azimuth_bins(&self, origin: &V3) -> Vec<Vec<usize>> {
        let mut bins = vec![Vec::new(); AZIMUTH_BINS];
        let width = std::f64::consts::TAU / AZIMUTH_BINS as f64;
        for (k, obj) in self.objects.iter().enumerate() {
            let rel = obj.bound_center - origin;
            let dist = rel.x.hypot(rel.y);
            if dist <= obj.bound_radius + 1e-9 {
                bins.iter_mut().for_each(|b| b.push(k));
                continue;
            }
            let center = rel.y.atan2(rel.x) + std::f64::consts::PI;
            let half = (obj.bound_radius / dist).asin();
            let first = ((center - half) / width).floor() as i64 - 1;
            let last = ((center + half) / width).floor() as i64 + 1;
            for b in first..=last {
                bins[b.rem_euclid(AZIMUTH_BINS as i64) as usize].push(k);
            }
        }
        bins
    }

    /// One revolution of `sensor` placed at `(x, y)` at sensor height above
    /// the road, in sensor coordinates.
    pub fn scan(&self, sensor: &SensorModel, x: f64, y: f64, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        let origin = V3::new(x, y, self.ground_z + sensor.height);
        let noise = Normal::new(0.0, sensor.range_sigma.max(1e-12)).unwrap();
        let laser_jitter: Vec<(f64, f64, f64)> = sensor
            .elevations_deg
            .iter()
            .map(|_| {
                (
                    rng.random_range(-0.05..0.05),
                    rng.random_range(0.0..1.0),
                    LASER_BIAS * rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let step = std::f64::consts::TAU / sensor.azimuth_steps as f64;
        let bins = self.azimuth_bins(&origin);
        let mut out = Vec::with_capacity(sensor.elevations_deg.len() * sensor.azimuth_steps);
        for (&elev, &(de, phase, bias)) in sensor.elevations_deg.iter().zip(&laser_jitter) {
            let (se, ce) = (elev + de).to_radians().sin_cos();
            for k in 0..sensor.azimuth_steps {
                let az = (k as f64 + phase) * step - std::f64::consts::PI;
                let (sa, ca) = az.sin_cos();
                let d = V3::new(ce * ca, ce * sa, se);
                let bin = (((az + std::f64::consts::PI) / std::f64::consts::TAU * AZIMUTH_BINS as f64) as usize)
                    .min(AZIMUTH_BINS - 1);
                let Some((t, mat)) = self.cast_among(&origin, &d, &bins[bin], rng) else {
                    continue;
                };
                if rng.random_bool(sensor.dropout) {
                    continue;
                }
                let mut r = t + bias + noise.sample(rng);
                if mat == Material::Grass {
                    r += GRASS_ROUGHNESS * noise.sample(rng) / sensor.range_sigma.max(1e-12);
                }
                if r < sensor.min_range || r > sensor.max_range {
                    continue;
                }
                let p = d * r;
                let intensity = (mat.reflectivity() + rng.random_range(-0.05f32..0.05)).clamp(0.0, 1.0);
                out.push(Point3::new(p.x, p.y, p.z).with_intensity(intensity));
            }
        }
        out
    }
}

fn push_car(objects: &mut Vec<Object>, rng: &mut ChaCha8Rng, x: f64, y: f64, ground_z: f64) {
    let len = rng.random_range(3.8..4.8);
    let width = rng.random_range(1.6..1.9);
    let yaw = rng.random_range(-0.08..0.08);
    let body = rng.random_range(0.7..0.9);
    objects.push(Object::new(
        Shape::Cuboid {
            center: V3::new(x, y, ground_z + 0.3 + body / 2.0),
            half: V3::new(len / 2.0, width / 2.0, body / 2.0),
            yaw,
        },
        Material::Metal,
    ));
    let cabin = rng.random_range(0.45..0.65);
    objects.push(Object::new(
        Shape::Cuboid {
            center: V3::new(x - len * 0.05, y, ground_z + 0.3 + body + cabin / 2.0),
            half: V3::new(len * 0.28, width * 0.45, cabin / 2.0),
            yaw,
        },
        Material::Metal,
    ));
}

/// A drive down one street: `frames` scans `spacing` meters apart.
pub fn synth_sequence(seed: u64, frames: usize, spacing: f64) -> Vec<Vec<Point3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sensor = SensorModel::hdl64();
    let travel = spacing * frames as f64;
    let scene = Scene::street(&mut rng, -130.0, travel + 130.0, -sensor.height);
    let lane = rng.random_range(-1.5..1.5);
    (0..frames)
        .map(|k| scene.scan(&sensor, k as f64 * spacing, lane, &mut rng))
        .collect()
}

/// `count` scans drawn from consecutive drives of ten frames each, 0.8 m
/// apart.
pub fn synth_dataset(seed: u64, count: usize) -> Vec<Vec<Point3>> {
    let mut frames = Vec::with_capacity(count);
    let mut s = 0;
    while frames.len() < count {
        let n = (count - frames.len()).min(10);
        frames.extend(synth_sequence(seed.wrapping_mul(1_000_003).wrapping_add(s), n, 0.8));
        s += 1;
    }
    frames
}

/// A single scan.
pub fn synth_frame(seed: u64) -> Vec<Point3> {
    synth_sequence(seed, 1, 0.0).pop().unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beam_layout() {
        let s = SensorModel::hdl64();
        assert_eq!(s.elevations_deg.len(), 64);
        assert!((s.elevations_deg[0] - 2.0).abs() < 1e-12);
        assert!((s.elevations_deg[31] + 8.3333).abs() < 1e-3);
        assert!((s.elevations_deg[63] + 24.33).abs() < 1e-9);
    }

    #[test]
    fn slab_hits_unit_box() {
        let half = V3::new(1.0, 1.0, 1.0);
        let t = slab(&V3::new(-5.0, 0.0, 0.0), &V3::new(1.0, 0.0, 0.0), &half).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!(slab(&V3::new(-5.0, 2.0, 0.0), &V3::new(1.0, 0.0, 0.0), &half).is_none());
        assert!(slab(&V3::new(5.0, 0.0, 0.0), &V3::new(1.0, 0.0, 0.0), &half).is_none());
    }

    #[test]
    fn flat_ground_range() {
        let scene = Scene {
            ground_z: -1.73,
            curb_height: 0.15,
            road_right: 1e9,
            road_left: 1e9,
            walk_right: 3.0,
            walk_left: 3.0,
            crown: 0.0,
            waves: vec![],
            objects: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = V3::new(30f64.to_radians().cos(), 0.0, -30f64.to_radians().sin());
        let (t, m) = scene.cast(&V3::zeros(), &d, &mut rng).unwrap();
        assert!((t - 3.46).abs() < 1e-6);
        assert_eq!(m, Material::Asphalt);
    }

    #[test]
    fn curb_face_is_hit() {
        let scene = Scene {
            ground_z: -1.73,
            curb_height: 0.15,
            road_right: 5.0,
            road_left: 5.0,
            walk_right: 3.0,
            walk_left: 3.0,
            crown: 0.0,
            waves: vec![],
            objects: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Aim at y = 5 at height -1.65, inside the curb face.
        let o = V3::new(0.0, 0.0, 0.0);
        let d = V3::new(0.0, 5.0, -1.65).normalize();
        let (t, m) = scene.cast(&o, &d, &mut rng).unwrap();
        let p = o + d * t;
        assert!((p.y - 5.0).abs() < 1e-4, "{p:?}");
        assert_eq!(m, Material::Concrete);
    }

    #[test]
    fn scan_looks_like_a_street() {
        let pts = synth_frame(7);
        assert!(pts.len() > 60_000 && pts.len() < 133_312, "{}", pts.len());
        assert!(pts.iter().all(|p| p.is_finite() && p.range() >= 2.0 && p.range() <= 120.0));
        let ground = pts.iter().filter(|p| (p.z + 1.73).abs() < 0.1).count();
        assert!(ground > pts.len() / 10);
    }

    #[test]
    fn deterministic() {
        let a = synth_dataset(3, 2);
        let b = synth_dataset(3, 2);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].len(), b[0].len());
        assert!(a[1].iter().zip(&b[1]).all(|(p, q)| p.x == q.x && p.y == q.y && p.z == q.z));
    }
}
