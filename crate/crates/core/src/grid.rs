//! Row-major pixel grids and the domain mask.
//!
//! All pixel data is stored in double precision. Masked-out pixels hold a
//! quiet NaN sentinel and are excluded from every norm, inner product and
//! solver unknown. Grids are immutable once built by the pipelines, which
//! makes per-pixel evaluation safe to parallelize.

use crate::error::{Error, Result};

/// A `height x width` grid stored row-major, origin at the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                context: "grid data length",
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat row-major index of `(row, col)`.
    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[self.idx(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.idx(row, col);
        self.data[i] = value;
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_size<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Grid<f64> {
    /// Bit-exact comparison; NaN sentinels compare equal to themselves.
    pub fn bits_eq(&self, other: &Grid<f64>) -> bool {
        self.same_size(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Boolean domain membership over a grid, with a precomputed packed index.
///
/// The packed index lists masked-in pixels in row-major order; solvers use
/// it to pack grid fields into contiguous unknown vectors.
#[derive(Debug, Clone)]
pub struct Mask {
    grid: Grid<bool>,
    packed: Vec<usize>,
    lookup: Vec<usize>,
}

const UNSET: usize = usize::MAX;

impl Mask {
    pub fn new(grid: Grid<bool>) -> Self {
        let mut packed = Vec::new();
        let mut lookup = vec![UNSET; grid.len()];
        for (i, &m) in grid.data().iter().enumerate() {
            if m {
                lookup[i] = packed.len();
                packed.push(i);
            }
        }
        Mask {
            grid,
            packed,
            lookup,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask::new(Grid::filled(width, height, true))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> bool) -> Self {
        Mask::new(Grid::from_fn(width, height, f))
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// Number of masked-in pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.packed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    #[inline]
    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.grid.get(row, col)
    }

    #[inline]
    pub fn is_set_idx(&self, idx: usize) -> bool {
        self.lookup[idx] != UNSET
    }

    /// Flat grid indices of masked-in pixels, row-major.
    #[inline]
    pub fn packed(&self) -> &[usize] {
        &self.packed
    }

    /// Packed slot of a flat grid index, or `None` when masked out.
    #[inline]
    pub fn slot(&self, idx: usize) -> Option<usize> {
        match self.lookup[idx] {
            UNSET => None,
            s => Some(s),
        }
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.grid
    }

    pub fn require_nonempty(&self, context: &'static str) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyMask { context })
        } else {
            Ok(())
        }
    }

    /// Packs masked-in values of a scalar grid into a contiguous vector.
    pub fn pack(&self, grid: &Grid<f64>) -> Vec<f64> {
        self.packed.iter().map(|&i| grid.data()[i]).collect()
    }

    /// Unpacks a contiguous vector back into a grid; masked-out pixels NaN.
    pub fn unpack(&self, values: &[f64]) -> Grid<f64> {
        debug_assert_eq!(values.len(), self.packed.len());
        let mut grid = Grid::filled(self.width(), self.height(), f64::NAN);
        for (slot, &i) in self.packed.iter().enumerate() {
            grid.data_mut()[i] = values[slot];
        }
        grid
    }

    /// Packs a 3-vector grid as three stacked component blocks
    /// `[c0 | c1 | c2]`, each of length `self.len()`.
    pub fn pack_vec3(&self, grid: &Grid<[f64; 3]>) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; 3 * n];
        for (slot, &i) in self.packed.iter().enumerate() {
            let v = grid.data()[i];
            out[slot] = v[0];
            out[n + slot] = v[1];
            out[2 * n + slot] = v[2];
        }
        out
    }

    pub fn unpack_vec3(&self, values: &[f64]) -> Grid<[f64; 3]> {
        let n = self.len();
        debug_assert_eq!(values.len(), 3 * n);
        let mut grid = Grid::filled(self.width(), self.height(), [f64::NAN; 3]);
        for (slot, &i) in self.packed.iter().enumerate() {
            grid.data_mut()[i] = [values[slot], values[n + slot], values[2 * n + slot]];
        }
        grid
    }
}

/// Masked Euclidean norm of packed vectors.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Inner product of packed vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
