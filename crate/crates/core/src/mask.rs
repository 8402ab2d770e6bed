/// H×W boolean grid, indexed `(i, j)` = (column, row) like [`RangeImage`].
///
/// [`RangeImage`]: crate::range_image::RangeImage
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShapeMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ShapeMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[j * self.width + i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_dims(&self, other: &ShapeMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `self \ other`.
    pub fn difference(&self, other: &ShapeMask) -> ShapeMask {
        assert!(self.same_dims(other), "mask dimensions differ");
        ShapeMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &ShapeMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &ShapeMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Number of set cells in each column.
    pub fn column_lengths(&self) -> Vec<usize> {
        let mut out = vec![0; self.width];
        for (idx, &b) in self.bits.iter().enumerate() {
            if b {
                out[idx % self.width] += 1;
            }
        }
        out
    }

    /// Row-major bitmap, LSB first within each byte, `⌈W·H/8⌉` bytes.
    pub fn to_bitmap(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (idx, &b) in self.bits.iter().enumerate() {
            if b {
                out[idx / 8] |= 1 << (idx % 8);
            }
        }
        out
    }

    /// Inverse of [`ShapeMask::to_bitmap`]; `None` if `bytes` has the wrong
    /// length or padding bits are set.
    pub fn from_bitmap(width: usize, height: usize, bytes: &[u8]) -> Option<Self> {
        let n = width * height;
        if bytes.len() != n.div_ceil(8) {
            return None;
        }
        if n % 8 != 0 && bytes[n / 8] >> (n % 8) != 0 {
            return None;
        }
        let bits = (0..n).map(|idx| bytes[idx / 8] >> (idx % 8) & 1 == 1).collect();
        Some(Self {
            width,
            height,
            bits,
        })
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(idx, _)| (idx % w, idx / w))
    }
}
