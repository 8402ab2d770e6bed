//! Shape-adaptive DCT over the unfit pixels of a range image.
//!
//! Forward: every column's masked values are packed to the top and transformed
//! with a DCT of their own length; then each packed row is gathered left over
//! the columns that reach it and transformed again. Both passes use the scale
//! `A_L = √(2/L)`, which makes every 1D transform orthonormal.
//!
//! The packed layout depends only on the per-column counts of the mask, so a
//! decoder that knows the mask can rebuild it without side information.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::mask::ShapeMask;
use crate::range_image::{ProjectionConfig, RangeImage};

/// Smallest range written back by the inverse transform; quantization noise
/// can otherwise produce non-positive values that have no point.
pub const MIN_RECONSTRUCTED_RANGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SadctError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("quantization step must be finite and positive, got {0}")]
    BadStep(f64),
}

/// `DCT_L(p, k) = a₀(p)·cos(p(k+½)π/L)`, `a₀(0) = √½`, else 1.
pub fn dct_matrix(len: usize) -> DMatrix<f64> {
    assert!(len >= 1, "DCT length must be positive");
    DMatrix::from_fn(len, len, |p, k| {
        let a0 = if p == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        a0 * (p as f64 * (k as f64 + 0.5) * std::f64::consts::PI / len as f64).cos()
    })
}

/// `cos(m·π/(2L))` for `m` in `0..4L`; entry `p(2k+1) mod 4L` is the DCT
/// kernel at `(p, k)`.
fn cos_table(len: usize) -> Arc<[f64]> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<[f64]>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(len)
        .or_insert_with(|| {
            let step = std::f64::consts::PI / (2 * len) as f64;
            (0..4 * len).map(|m| (m as f64 * step).cos()).collect()
        })
        .clone()
}

struct Tables(HashMap<usize, Arc<[f64]>>);

impl Tables {
    fn new() -> Self {
        Self(HashMap::new())
    }

    fn get(&mut self, len: usize) -> Arc<[f64]> {
        self.0.entry(len).or_insert_with(|| cos_table(len)).clone()
    }
}

/// `c = A_L · DCT_L · x` with `A_L = √(2/L)`.
fn forward_1d(x: &[f64], out: &mut [f64], table: &[f64]) {
    let len = x.len();
    let modulus = 4 * len;
    let scale = (2.0 / len as f64).sqrt();
    for (p, o) in out.iter_mut().enumerate() {
        let step = 2 * p % modulus;
        let mut idx = p % modulus;
        let mut acc = 0.0;
        for &v in x {
            acc += v * table[idx];
            idx += step;
            if idx >= modulus {
                idx -= modulus;
            }
        }
        let a0 = if p == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        *o = scale * a0 * acc;
    }
}

/// `x = 2/(A_L·L) · DCT_Lᵀ · c`, which equals `√(2/L) · DCT_Lᵀ · c`.
fn inverse_1d(c: &[f64], out: &mut [f64], table: &[f64]) {
    let len = c.len();
    let modulus = 4 * len;
    let scale = (2.0 / len as f64).sqrt();
    out.fill(0.0);
    for (p, &cp) in c.iter().enumerate() {
        if cp == 0.0 {
            continue;
        }
        let w = if p == 0 { std::f64::consts::FRAC_1_SQRT_2 * cp } else { cp };
        let step = 2 * p % modulus;
        let mut idx = p % modulus;
        for o in out.iter_mut() {
            *o += w * table[idx];
            idx += step;
            if idx >= modulus {
                idx -= modulus;
            }
        }
    }
    for o in out.iter_mut() {
        *o *= scale;
    }
}

/// Packed coefficient layout shared by the float and quantized forms.
///
/// Packed row `p` holds `row_support(p)` coefficients at the left, where the
/// support is the number of columns with more than `p` masked pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedShape {
    width: usize,
    height: usize,
    col_lengths: Vec<usize>,
    row_supports: Vec<usize>,
}

impl PackedShape {
    pub fn from_mask(mask: &ShapeMask) -> Self {
        Self::from_column_lengths(mask.width(), mask.height(), mask.column_lengths())
    }

    pub fn from_column_lengths(width: usize, height: usize, col_lengths: Vec<usize>) -> Self {
        assert_eq!(col_lengths.len(), width);
        let mut row_supports = vec![0; height];
        for &l in &col_lengths {
            assert!(l <= height);
            for s in &mut row_supports[..l] {
                *s += 1;
            }
        }
        Self {
            width,
            height,
            col_lengths,
            row_supports,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn column_lengths(&self) -> &[usize] {
        &self.col_lengths
    }

    pub fn row_support(&self, p: usize) -> usize {
        self.row_supports[p]
    }

    /// Total number of packed slots; equals the mask's set count.
    pub fn support_count(&self) -> usize {
        self.row_supports.iter().sum()
    }

    /// Slots `(p, m)` of the structural support in packed row-major order.
    pub fn iter_support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_supports
            .iter()
            .enumerate()
            .flat_map(|(p, &s)| (0..s).map(move |m| (p, m)))
    }

    #[inline]
    fn slot(&self, p: usize, m: usize) -> usize {
        p * self.width + m
    }
}

/// Float SA-DCT coefficients in the packed layout. Slots outside the support
/// are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedCoefficients {
    shape: PackedShape,
    data: Vec<f64>,
}

impl PackedCoefficients {
    pub fn zeros(shape: PackedShape) -> Self {
        let n = shape.width * shape.height;
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &PackedShape {
        &self.shape
    }

    pub fn get(&self, p: usize, m: usize) -> f64 {
        self.data[self.shape.slot(p, m)]
    }

    pub fn set(&mut self, p: usize, m: usize, v: f64) {
        let s = self.shape.slot(p, m);
        self.data[s] = v;
    }

    /// Coefficients over the support, packed row-major.
    pub fn support_values(&self) -> Vec<f64> {
        self.shape.iter_support().map(|(p, m)| self.get(p, m)).collect()
    }

    fn check_outside_support_is_zero(&self) -> Result<(), SadctError> {
        for p in 0..self.shape.height {
            let s = self.shape.row_support(p);
            let row = &self.data[p * self.shape.width..(p + 1) * self.shape.width];
            if row[s..].iter().any(|&v| v != 0.0) {
                return Err(SadctError::ShapeMismatch(format!(
                    "nonzero coefficient beyond support {s} in packed row {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Integer coefficients `round(C / q_step)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCoefficients {
    shape: PackedShape,
    q_step_bits: u64,
    data: Vec<i64>,
}

impl QuantizedCoefficients {
    /// Builds from support values in packed row-major order.
    pub fn from_support_values(shape: PackedShape, q_step: f64, values: &[i64]) -> Result<Self, SadctError> {
        if !(q_step.is_finite() && q_step > 0.0) {
            return Err(SadctError::BadStep(q_step));
        }
        if values.len() != shape.support_count() {
            return Err(SadctError::ShapeMismatch(format!(
                "{} values for a support of {}",
                values.len(),
                shape.support_count()
            )));
        }
        let mut data = vec![0; shape.width * shape.height];
        for ((p, m), &v) in shape.iter_support().zip(values) {
            data[shape.slot(p, m)] = v;
        }
        Ok(Self {
            shape,
            q_step_bits: q_step.to_bits(),
            data,
        })
    }

    pub fn shape(&self) -> &PackedShape {
        &self.shape
    }

    pub fn q_step(&self) -> f64 {
        f64::from_bits(self.q_step_bits)
    }

    pub fn get(&self, p: usize, m: usize) -> i64 {
        self.data[self.shape.slot(p, m)]
    }

    pub fn support_values(&self) -> Vec<i64> {
        self.shape.iter_support().map(|(p, m)| self.get(p, m)).collect()
    }
}

/// Forward SA-DCT of the values of `unfit` under `shape`.
pub fn sa_dct_forward(unfit: &RangeImage, shape: &ShapeMask) -> Result<PackedCoefficients, SadctError> {
    if unfit.width() != shape.width() || unfit.height() != shape.height() {
        return Err(SadctError::ShapeMismatch("image and mask dimensions differ".into()));
    }
    let (w, h) = (shape.width(), shape.height());
    let packed_shape = PackedShape::from_mask(shape);
    let mut tables = Tables::new();

    // Column pass, results top-aligned in their own column.
    let mut cols = vec![0.0; w * h];
    let mut x = Vec::with_capacity(h);
    let mut c = vec![0.0; h.max(w)];
    for k in 0..w {
        x.clear();
        for j in 0..h {
            if shape.get(k, j) {
                let r = unfit.get(k, j).ok_or_else(|| {
                    SadctError::ShapeMismatch(format!("mask covers empty pixel ({k}, {j})"))
                })?;
                x.push(r);
            }
        }
        if x.is_empty() {
            continue;
        }
        let len = x.len();
        forward_1d(&x, &mut c[..len], &tables.get(len));
        for (p, &v) in c[..len].iter().enumerate() {
            cols[p * w + k] = v;
        }
    }

    // Row pass over the columns reaching each packed row.
    let mut out = PackedCoefficients::zeros(packed_shape);
    for p in 0..h {
        let support = out.shape.row_support(p);
        if support == 0 {
            continue;
        }
        x.clear();
        for k in 0..w {
            if out.shape.col_lengths[k] > p {
                x.push(cols[p * w + k]);
            }
        }
        forward_1d(&x, &mut c[..support], &tables.get(support));
        let base = p * w;
        out.data[base..base + support].copy_from_slice(&c[..support]);
    }
    Ok(out)
}

/// Inverse SA-DCT; writes the reconstructed values back to the pixels of
/// `shape`.
pub fn sa_idct_inverse(
    coeffs: &PackedCoefficients,
    shape: &ShapeMask,
    config: &ProjectionConfig,
) -> Result<RangeImage, SadctError> {
    let (w, h) = (shape.width(), shape.height());
    if config.width != w || config.height != h {
        return Err(SadctError::ShapeMismatch("mask does not match projection grid".into()));
    }
    let expected = PackedShape::from_mask(shape);
    if expected != coeffs.shape {
        return Err(SadctError::ShapeMismatch(
            "coefficient layout differs from the layout implied by the mask".into(),
        ));
    }
    coeffs.check_outside_support_is_zero()?;
    let mut tables = Tables::new();
    let mut cols = vec![0.0; w * h];
    let mut x = vec![0.0; h.max(w)];

    for p in 0..h {
        let support = expected.row_support(p);
        if support == 0 {
            continue;
        }
        let base = p * w;
        inverse_1d(&coeffs.data[base..base + support], &mut x[..support], &tables.get(support));
        let mut m = 0;
        for k in 0..w {
            if expected.col_lengths[k] > p {
                cols[base + k] = x[m];
                m += 1;
            }
        }
    }

    let mut image = RangeImage::empty(*config);
    let mut c = Vec::with_capacity(h);
    for k in 0..w {
        let len = expected.col_lengths[k];
        if len == 0 {
            continue;
        }
        c.clear();
        c.extend((0..len).map(|p| cols[p * w + k]));
        inverse_1d(&c, &mut x[..len], &tables.get(len));
        let mut p = 0;
        for j in 0..h {
            if shape.get(k, j) {
                image.set(k, j, x[p].max(MIN_RECONSTRUCTED_RANGE));
                p += 1;
            }
        }
    }
    Ok(image)
}

/// `round(C / q_step)`, half away from zero.
pub fn quantize(coeffs: &PackedCoefficients, q_step: f64) -> Result<QuantizedCoefficients, SadctError> {
    if !(q_step.is_finite() && q_step > 0.0) {
        return Err(SadctError::BadStep(q_step));
    }
    Ok(QuantizedCoefficients {
        shape: coeffs.shape.clone(),
        q_step_bits: q_step.to_bits(),
        data: coeffs.data.iter().map(|&v| (v / q_step).round() as i64).collect(),
    })
}

pub fn dequantize(q: &QuantizedCoefficients) -> PackedCoefficients {
    let step = q.q_step();
    PackedCoefficients {
        shape: q.shape.clone(),
        data: q.data.iter().map(|&v| v as f64 * step).collect(),
    }
}
