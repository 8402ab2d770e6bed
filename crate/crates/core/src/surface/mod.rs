//! Macroblock surface fitting on range images.
//!
//! Each `B×B` block is fitted with the model `1/r̂ = α·i + β·j + γ`, linear in
//! the pixel indices. A block is accepted when every occupied pixel satisfies
//! `|r − r̂| < Δr`. Within a block-row, the next block is first tested against
//! the running coefficients and merged into the run on success, so one
//! [`SurfaceTuple`] can cover several blocks.

mod plane;

pub use plane::{fit_plane_block, predict_range_plane, PlaneCoefficients};

use crate::mask::ShapeMask;
use crate::range_image::{ProjectionConfig, RangeImage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurfaceError {
    #[error("surface denominator {0} is not positive")]
    NonPositiveDenominator(f64),
    #[error("plane is parallel to the ray")]
    DegeneratePlane,
    #[error("malformed surface tuple {index}: {reason}")]
    MalformedTuple { index: usize, reason: String },
    #[error("invalid fit config: {0}")]
    BadConfig(&'static str),
}

/// Why a block could not be represented by a surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoFit {
    TooFewPoints { found: usize, required: usize },
    Singular,
    /// Largest `|r − r̂|` seen, `f64::INFINITY` if a prediction was not positive.
    Threshold { max_residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub block_size: usize,
    pub delta_r: f64,
    pub min_points: usize,
}

impl FitConfig {
    pub fn new(block_size: usize, delta_r: f64, min_points: usize) -> Result<Self, SurfaceError> {
        if block_size < 2 || block_size > u8::MAX as usize {
            return Err(SurfaceError::BadConfig("block size must be in 2..=255"));
        }
        if !(delta_r.is_finite() && delta_r > 0.0) {
            return Err(SurfaceError::BadConfig("delta_r must be positive"));
        }
        if min_points < 3 {
            return Err(SurfaceError::BadConfig("min_points must be at least 3"));
        }
        Ok(Self {
            block_size,
            delta_r,
            min_points,
        })
    }

    pub fn with_delta_r(delta_r: f64) -> Result<Self, SurfaceError> {
        Self::new(4, delta_r, 4)
    }
}

/// Coefficients of `1/r̂ = α·i + β·j + γ` at absolute pixel indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SurfaceCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    #[inline]
    pub fn denominator(&self, i: usize, j: usize) -> f64 {
        self.alpha * i as f64 + self.beta * j as f64 + self.gamma
    }

    /// Rounds through `f32`, the precision stored in the bitstream.
    pub fn to_wire(&self) -> Self {
        Self {
            alpha: self.alpha as f32 as f64,
            beta: self.beta as f32 as f64,
            gamma: self.gamma as f32 as f64,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()
    }
}

/// `r̂ = 1 / (α·i + β·j + γ)`.
pub fn predict_range_surface(
    coeffs: &SurfaceCoefficients,
    i: usize,
    j: usize,
) -> Result<f64, SurfaceError> {
    let den = coeffs.denominator(i, j);
    if den > 0.0 && den.is_finite() {
        Ok(1.0 / den)
    } else {
        Err(SurfaceError::NonPositiveDenominator(den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockCoord {
    pub row: usize,
    pub col: usize,
}

/// One run of merged blocks sharing a surface: `len` blocks starting at
/// block `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceTuple {
    pub row: u16,
    pub col: u16,
    pub len: u16,
    pub coefficients: SurfaceCoefficients,
}

/// Number of block rows and block columns covering the image.
pub fn block_grid(width: usize, height: usize, block_size: usize) -> (usize, usize) {
    (height.div_ceil(block_size), width.div_ceil(block_size))
}

fn block_bounds(
    width: usize,
    height: usize,
    block: BlockCoord,
    b: usize,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let i0 = block.col * b;
    let j0 = block.row * b;
    (i0..(i0 + b).min(width), j0..(j0 + b).min(height))
}

/// Occupied pixels `(i, j, r)` of a block, row-major.
pub(crate) fn block_pixels(
    image: &RangeImage,
    block: BlockCoord,
    b: usize,
) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let (cols, rows) = block_bounds(image.width(), image.height(), block, b);
    rows.flat_map(move |j| cols.clone().map(move |i| (i, j)))
        .filter_map(move |(i, j)| image.get(i, j).map(|r| (i, j, r)))
}

/// Least-squares solution of `α·i + β·j + γ ≈ 1/r` over the given samples,
/// computed in block-centered coordinates.
fn solve_inverse_range(samples: &[(usize, usize, f64)]) -> Option<SurfaceCoefficients> {
    let n = samples.len() as f64;
    let (mut si, mut sj, mut sy) = (0.0, 0.0, 0.0);
    for &(i, j, r) in samples {
        si += i as f64;
        sj += j as f64;
        sy += 1.0 / r;
    }
    let (mi, mj, my) = (si / n, sj / n, sy / n);
    let (mut sii, mut sjj, mut sij, mut siy, mut sjy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, j, r) in samples {
        let di = i as f64 - mi;
        let dj = j as f64 - mj;
        let dy = 1.0 / r - my;
        sii += di * di;
        sjj += dj * dj;
        sij += di * dj;
        siy += di * dy;
        sjy += dj * dy;
    }
    let det = sii * sjj - sij * sij;
    if !(det > 1e-10 * sii * sjj) {
        return None;
    }
    let alpha = (siy * sjj - sjy * sij) / det;
    let beta = (sjy * sii - siy * sij) / det;
    let c = SurfaceCoefficients::new(alpha, beta, my - alpha * mi - beta * mj);
    c.is_finite().then_some(c)
}

/// Largest range residual of `predict` over `pixels`; infinite when a
/// prediction is unavailable.
fn max_residual<F>(pixels: impl Iterator<Item = (usize, usize, f64)>, predict: F) -> f64
where
    F: Fn(usize, usize) -> Option<f64>,
{
    let mut worst: f64 = 0.0;
    for (i, j, r) in pixels {
        match predict(i, j) {
            Some(rh) => worst = worst.max((r - rh).abs()),
            None => return f64::INFINITY,
        }
    }
    worst
}

/// Fits one block. Returns the exact least-squares coefficients when the
/// block has enough points and every occupied pixel passes the `Δr` test.
pub fn fit_block(
    image: &RangeImage,
    block: BlockCoord,
    config: &FitConfig,
) -> Result<SurfaceCoefficients, NoFit> {
    let samples: Vec<_> = block_pixels(image, block, config.block_size).collect();
    if samples.len() < config.min_points {
        return Err(NoFit::TooFewPoints {
            found: samples.len(),
            required: config.min_points,
        });
    }
    let coeffs = solve_inverse_range(&samples).ok_or(NoFit::Singular)?;
    let worst = max_residual(samples.iter().copied(), |i, j| {
        predict_range_surface(&coeffs, i, j).ok()
    });
    if worst < config.delta_r {
        Ok(coeffs)
    } else {
        Err(NoFit::Threshold {
            max_residual: worst,
        })
    }
}

/// A per-block predictive model used by the run scanner.
pub(crate) trait BlockModel {
    type Coeffs: Copy;
    fn fit(&self, image: &RangeImage, block: BlockCoord, config: &FitConfig) -> Option<Self::Coeffs>;
    fn predict(&self, coeffs: &Self::Coeffs, i: usize, j: usize) -> Option<f64>;

    fn passes(
        &self,
        coeffs: &Self::Coeffs,
        image: &RangeImage,
        block: BlockCoord,
        config: &FitConfig,
    ) -> bool {
        max_residual(block_pixels(image, block, config.block_size), |i, j| {
            self.predict(coeffs, i, j)
        }) < config.delta_r
    }
}

/// The inverse-range surface, with coefficients at bitstream precision.
pub(crate) struct InverseRangeSurface;

impl BlockModel for InverseRangeSurface {
    type Coeffs = SurfaceCoefficients;

    fn fit(&self, image: &RangeImage, block: BlockCoord, config: &FitConfig) -> Option<Self::Coeffs> {
        let wire = fit_block(image, block, config).ok()?.to_wire();
        // f32 rounding can push a borderline pixel over the threshold.
        self.passes(&wire, image, block, config).then_some(wire)
    }

    fn predict(&self, coeffs: &Self::Coeffs, i: usize, j: usize) -> Option<f64> {
        predict_range_surface(coeffs, i, j).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Run<C> {
    pub row: usize,
    pub col: usize,
    pub len: usize,
    pub coeffs: C,
}

/// Row-major block scan with intra-row run merging. Empty blocks end a run.
pub(crate) fn scan_runs<M: BlockModel>(
    model: &M,
    image: &RangeImage,
    config: &FitConfig,
) -> Vec<Run<M::Coeffs>> {
    let (block_rows, block_cols) = block_grid(image.width(), image.height(), config.block_size);
    let mut runs = Vec::new();
    for row in 0..block_rows {
        let mut current: Option<Run<M::Coeffs>> = None;
        for col in 0..block_cols {
            let block = BlockCoord { row, col };
            if block_pixels(image, block, config.block_size).next().is_none() {
                runs.extend(current.take());
                continue;
            }
            if let Some(run) = current.as_mut() {
                if model.passes(&run.coeffs, image, block, config) {
                    run.len += 1;
                    continue;
                }
            }
            runs.extend(current.take());
            current = model.fit(image, block, config).map(|coeffs| Run {
                row,
                col,
                len: 1,
                coeffs,
            });
        }
        runs.extend(current);
    }
    runs
}

/// Output of [`encode_surfaces`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceEncoding {
    pub tuples: Vec<SurfaceTuple>,
    pub fitted_mask: ShapeMask,
    pub unfit_image: RangeImage,
}

impl SurfaceEncoding {
    pub fn fitted_count(&self) -> usize {
        self.fitted_mask.count()
    }
}

fn mark_run(mask: &mut ShapeMask, occupancy: &ShapeMask, row: usize, col: usize, len: usize, b: usize) {
    let (w, h) = (occupancy.width(), occupancy.height());
    for c in col..col + len {
        let (cols, rows) = block_bounds(w, h, BlockCoord { row, col: c }, b);
        for j in rows {
            for i in cols.clone() {
                if occupancy.get(i, j) {
                    mask.set(i, j, true);
                }
            }
        }
    }
}

/// Splits the image into surface runs and the remaining unfit pixels.
pub fn encode_surfaces(image: &RangeImage, config: &FitConfig) -> SurfaceEncoding {
    let runs = scan_runs(&InverseRangeSurface, image, config);
    let occupancy = image.occupancy();
    let mut fitted_mask = ShapeMask::new(image.width(), image.height());
    let tuples = runs
        .iter()
        .map(|run| {
            mark_run(&mut fitted_mask, &occupancy, run.row, run.col, run.len, config.block_size);
            SurfaceTuple {
                row: run.row as u16,
                col: run.col as u16,
                len: run.len as u16,
                coefficients: run.coeffs,
            }
        })
        .collect();
    let unfit_image = image.masked(&occupancy.difference(&fitted_mask));
    SurfaceEncoding {
        tuples,
        fitted_mask,
        unfit_image,
    }
}

fn check_tuples(
    tuples: &[SurfaceTuple],
    width: usize,
    height: usize,
    block_size: usize,
) -> Result<(), SurfaceError> {
    let (block_rows, block_cols) = block_grid(width, height, block_size);
    let mut prev_end: Option<(usize, usize)> = None;
    for (index, t) in tuples.iter().enumerate() {
        let bad = |reason: String| SurfaceError::MalformedTuple { index, reason };
        let (row, col, len) = (t.row as usize, t.col as usize, t.len as usize);
        if len == 0 {
            return Err(bad("zero-length run".into()));
        }
        if row >= block_rows || col + len > block_cols {
            return Err(bad(format!(
                "run ({row}, {col}, {len}) exceeds {block_rows}x{block_cols} block grid"
            )));
        }
        if !t.coefficients.is_finite() {
            return Err(bad("non-finite coefficients".into()));
        }
        if let Some(end) = prev_end {
            if (row, col) < end {
                return Err(bad("runs overlap or are not sorted by (row, col)".into()));
            }
        }
        prev_end = Some((row, col + len));
    }
    Ok(())
}

/// Pixels covered by `tuples` that are also occupied. Both encoder and
/// decoder derive the fitted mask this way.
pub fn fitted_mask_from_tuples(
    tuples: &[SurfaceTuple],
    occupancy: &ShapeMask,
    block_size: usize,
) -> Result<ShapeMask, SurfaceError> {
    check_tuples(tuples, occupancy.width(), occupancy.height(), block_size)?;
    let mut mask = ShapeMask::new(occupancy.width(), occupancy.height());
    for t in tuples {
        mark_run(&mut mask, occupancy, t.row as usize, t.col as usize, t.len as usize, block_size);
    }
    Ok(mask)
}

/// Reconstructs fitted ranges from surface tuples and the occupancy mask.
pub fn decode_surfaces(
    tuples: &[SurfaceTuple],
    occupancy: &ShapeMask,
    block_size: usize,
    projection: &ProjectionConfig,
) -> Result<(RangeImage, ShapeMask), SurfaceError> {
    if occupancy.width() != projection.width || occupancy.height() != projection.height {
        return Err(SurfaceError::BadConfig("occupancy does not match projection grid"));
    }
    let mask = fitted_mask_from_tuples(tuples, occupancy, block_size)?;
    let mut image = RangeImage::empty(*projection);
    for (index, t) in tuples.iter().enumerate() {
        for c in t.col as usize..(t.col + t.len) as usize {
            let block = BlockCoord {
                row: t.row as usize,
                col: c,
            };
            let (cols, rows) = block_bounds(projection.width, projection.height, block, block_size);
            for j in rows {
                for i in cols.clone() {
                    if !occupancy.get(i, j) {
                        continue;
                    }
                    let r = predict_range_surface(&t.coefficients, i, j).map_err(|e| {
                        SurfaceError::MalformedTuple {
                            index,
                            reason: e.to_string(),
                        }
                    })?;
                    image.set(i, j, r);
                }
            }
        }
    }
    Ok((image, mask))
}

/// Which predictive model the fitted-error harness uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Euclidean plane, range predicted along the pixel-center ray.
    Plane,
    /// Inverse-range surface linear in pixel indices.
    Surface,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "plane" => Ok(Self::Plane),
            "surface" => Ok(Self::Surface),
            _ => Err(format!("unknown model {s:?} (expected plane or surface)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Plane => "plane",
            Self::Surface => "surface",
        })
    }
}

/// Accumulated absolute range error over fitted pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitErrorStats {
    pub fitted_points: usize,
    pub occupied_points: usize,
    pub abs_error_sum: f64,
    pub runs: usize,
}

impl FitErrorStats {
    pub fn mae_cm(&self) -> f64 {
        if self.fitted_points == 0 {
            0.0
        } else {
            100.0 * self.abs_error_sum / self.fitted_points as f64
        }
    }

    pub fn merge(&mut self, other: &FitErrorStats) {
        self.fitted_points += other.fitted_points;
        self.occupied_points += other.occupied_points;
        self.abs_error_sum += other.abs_error_sum;
        self.runs += other.runs;
    }
}

/// Runs the block scan with the chosen model and measures the range error of
/// every pixel it absorbs.
pub fn fitted_range_errors(image: &RangeImage, config: &FitConfig, kind: ModelKind) -> FitErrorStats {
    fn measure<M: BlockModel>(model: &M, image: &RangeImage, config: &FitConfig) -> FitErrorStats {
        let runs = scan_runs(model, image, config);
        let mut stats = FitErrorStats {
            occupied_points: image.occupied_count(),
            runs: runs.len(),
            ..Default::default()
        };
        for run in &runs {
            for c in run.col..run.col + run.len {
                let block = BlockCoord { row: run.row, col: c };
                for (i, j, r) in block_pixels(image, block, config.block_size) {
                    let rh = model
                        .predict(&run.coeffs, i, j)
                        .expect("accepted runs predict every pixel");
                    stats.fitted_points += 1;
                    stats.abs_error_sum += (r - rh).abs();
                }
            }
        }
        stats
    }
    match kind {
        ModelKind::Surface => measure(&InverseRangeSurface, image, config),
        ModelKind::Plane => measure(&plane::PlaneModel::new(image.config()), image, config),
    }
}
