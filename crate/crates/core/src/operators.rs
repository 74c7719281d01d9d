//! Discrete linear operators on masked grids.
//!
//! Everything works on packed vectors (see [`Mask`]): the downsampling
//! operator `K` maps packed HR scalars to packed LR scalars, the gradient
//! maps packed HR scalars to two stacked difference blocks, and the depth
//! lift maps a depth vector to the `(gradient, depth)` triple the splitting
//! variable lives in. Adjoints are exact by construction and verified by
//! randomized probes in the tests.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// A linear map with an exactly matching adjoint.
pub trait LinearOperator: Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;

    /// `out = A x`. `out` is overwritten.
    fn apply(&self, x: &[f64], out: &mut [f64]);

    /// `out = A^T y`. `out` is overwritten.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        self.apply(x, &mut out);
        out
    }

    fn apply_adjoint_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_len()];
        self.apply_adjoint(y, &mut out);
        out
    }
}

/// Block-averaging downsampler from the HR grid to the LR grid.
///
/// Each LR pixel averages the masked-in HR pixels of its `s x s` block; an
/// LR pixel whose block holds no masked-in HR pixel is masked out. When HR
/// dimensions are not divisible by `s` the LR grid takes the floor and the
/// trailing rows/columns are dropped.
#[derive(Debug, Clone)]
pub struct Downsampler {
    scale: usize,
    hr_len: usize,
    lr_mask: Mask,
    /// CSR layout: HR packed slots of block `q` are `entries[offsets[q]..offsets[q+1]]`.
    offsets: Vec<usize>,
    entries: Vec<usize>,
}

impl Downsampler {
    pub fn new(scale: usize, hr_mask: &Mask) -> Result<Self> {
        if !matches!(scale, 1 | 2 | 4 | 8) {
            return Err(Error::InvalidInput(format!(
                "downsampling scale must be one of 1, 2, 4, 8 (got {scale})"
            )));
        }
        hr_mask.require_nonempty("downsampler construction")?;
        let lr_w = hr_mask.width() / scale;
        let lr_h = hr_mask.height() / scale;

        let mut lr_grid = Grid::filled(lr_w, lr_h, false);
        let mut offsets = vec![0usize];
        let mut entries = Vec::new();
        for lr_row in 0..lr_h {
            for lr_col in 0..lr_w {
                let start = entries.len();
                for dr in 0..scale {
                    for dc in 0..scale {
                        let (r, c) = (lr_row * scale + dr, lr_col * scale + dc);
                        if hr_mask.is_set(r, c) {
                            let idx = r * hr_mask.width() + c;
                            entries.push(hr_mask.slot(idx).expect("masked-in pixel has a slot"));
                        }
                    }
                }
                if entries.len() > start {
                    lr_grid.set(lr_row, lr_col, true);
                    offsets.push(entries.len());
                } else {
                    entries.truncate(start);
                }
            }
        }
        let lr_mask = Mask::new(lr_grid);
        lr_mask.require_nonempty("downsampler LR grid")?;
        Ok(Downsampler {
            scale,
            hr_len: hr_mask.len(),
            lr_mask,
            offsets,
            entries,
        })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn lr_mask(&self) -> &Mask {
        &self.lr_mask
    }

    /// Restricts the operator rows to LR pixels satisfying `keep`.
    ///
    /// Used to drop data rows whose LR observation is missing (NaN in the
    /// depth file) while keeping the HR unknown set intact.
    pub fn retain_rows(&self, keep: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut lr_grid = Grid::filled(self.lr_mask.width(), self.lr_mask.height(), false);
        let mut offsets = vec![0usize];
        let mut entries = Vec::new();
        for (q, &idx) in self.lr_mask.packed().iter().enumerate() {
            let (row, col) = (idx / self.lr_mask.width(), idx % self.lr_mask.width());
            if keep(row, col) {
                lr_grid.set(row, col, true);
                entries.extend_from_slice(&self.entries[self.offsets[q]..self.offsets[q + 1]]);
                offsets.push(entries.len());
            }
        }
        let lr_mask = Mask::new(lr_grid);
        lr_mask.require_nonempty("downsampler row restriction")?;
        Ok(Downsampler {
            scale: self.scale,
            hr_len: self.hr_len,
            lr_mask,
            offsets,
            entries,
        })
    }
}

impl LinearOperator for Downsampler {
    fn input_len(&self) -> usize {
        self.hr_len
    }

    fn output_len(&self) -> usize {
        self.lr_mask.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.hr_len);
        for q in 0..self.output_len() {
            let block = &self.entries[self.offsets[q]..self.offsets[q + 1]];
            let sum: f64 = block.iter().map(|&s| x[s]).sum();
            out[q] = sum / block.len() as f64;
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.output_len());
        out.fill(0.0);
        for q in 0..self.output_len() {
            let block = &self.entries[self.offsets[q]..self.offsets[q + 1]];
            let v = y[q] / block.len() as f64;
            for &s in block {
                out[s] += v;
            }
        }
    }
}

/// Forward-difference gradient restricted to a mask.
///
/// Output is `[dx | dy]`, two stacked blocks of length `mask.len()`. A
/// difference whose neighbor is out of bounds or masked out is zero
/// (homogeneous Neumann); the adjoint is the matching negative divergence.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    n: usize,
    /// (packed source, packed right neighbor) pairs, both masked-in.
    x_edges: Vec<(usize, usize)>,
    /// (packed source, packed down neighbor) pairs, both masked-in.
    y_edges: Vec<(usize, usize)>,
}

impl GradientOperator {
    pub fn new(mask: &Mask) -> Result<Self> {
        mask.require_nonempty("gradient construction")?;
        let (w, h) = (mask.width(), mask.height());
        let mut x_edges = Vec::new();
        let mut y_edges = Vec::new();
        for (slot, &idx) in mask.packed().iter().enumerate() {
            let (row, col) = (idx / w, idx % w);
            if col + 1 < w {
                if let Some(right) = mask.slot(idx + 1) {
                    x_edges.push((slot, right));
                }
            }
            if row + 1 < h {
                if let Some(down) = mask.slot(idx + w) {
                    y_edges.push((slot, down));
                }
            }
        }
        Ok(GradientOperator {
            n: mask.len(),
            x_edges,
            y_edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

impl LinearOperator for GradientOperator {
    fn input_len(&self) -> usize {
        self.n
    }

    fn output_len(&self) -> usize {
        2 * self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        out.fill(0.0);
        for &(p, right) in &self.x_edges {
            out[p] = x[right] - x[p];
        }
        for &(p, down) in &self.y_edges {
            out[self.n + p] = x[down] - x[p];
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), 2 * self.n);
        out.fill(0.0);
        for &(p, right) in &self.x_edges {
            let g = y[p];
            out[right] += g;
            out[p] -= g;
        }
        for &(p, down) in &self.y_edges {
            let g = y[self.n + p];
            out[down] += g;
            out[p] -= g;
        }
    }
}

/// Lifts a packed depth vector to the splitting layout `[dx | dy | z]`.
///
/// This is the linear map `z -> (grad z, z)` the ADMM constraint couples the
/// auxiliary variable to.
#[derive(Debug, Clone)]
pub struct DepthToTheta {
    grad: GradientOperator,
}

impl DepthToTheta {
    pub fn new(mask: &Mask) -> Result<Self> {
        Ok(DepthToTheta {
            grad: GradientOperator::new(mask)?,
        })
    }

    pub fn gradient(&self) -> &GradientOperator {
        &self.grad
    }
}

impl LinearOperator for DepthToTheta {
    fn input_len(&self) -> usize {
        self.grad.n()
    }

    fn output_len(&self) -> usize {
        3 * self.grad.n()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.grad.n();
        self.grad.apply(x, &mut out[..2 * n]);
        out[2 * n..].copy_from_slice(x);
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let n = self.grad.n();
        self.grad.apply_adjoint(&y[..2 * n], out);
        for (o, &v) in out.iter_mut().zip(&y[2 * n..]) {
            *o += v;
        }
    }
}

/// Vertical stack of weighted operators sharing one input space.
///
/// `apply` concatenates `w_i * (A_i x)`; the adjoint sums `w_i * A_i^T y_i`.
pub struct StackedOperator<'a> {
    blocks: Vec<(f64, &'a dyn LinearOperator)>,
    input_len: usize,
    output_len: usize,
}

impl<'a> StackedOperator<'a> {
    pub fn new(blocks: Vec<(f64, &'a dyn LinearOperator)>) -> Result<Self> {
        let input_len = blocks
            .first()
            .map(|(_, op)| op.input_len())
            .ok_or_else(|| Error::InvalidInput("stacked operator needs blocks".into()))?;
        for (_, op) in &blocks {
            if op.input_len() != input_len {
                return Err(Error::DimensionMismatch {
                    context: "stacked operator input",
                    expected: input_len,
                    actual: op.input_len(),
                });
            }
        }
        let output_len = blocks.iter().map(|(_, op)| op.output_len()).sum();
        Ok(StackedOperator {
            blocks,
            input_len,
            output_len,
        })
    }
}

impl LinearOperator for StackedOperator<'_> {
    fn input_len(&self) -> usize {
        self.input_len
    }

    fn output_len(&self) -> usize {
        self.output_len
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut at = 0;
        for (w, op) in &self.blocks {
            let m = op.output_len();
            op.apply(x, &mut out[at..at + m]);
            for v in &mut out[at..at + m] {
                *v *= w;
            }
            at += m;
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut at = 0;
        let mut scratch = vec![0.0; self.input_len];
        for (w, op) in &self.blocks {
            let m = op.output_len();
            op.apply_adjoint(&y[at..at + m], &mut scratch);
            for (o, &s) in out.iter_mut().zip(&scratch) {
                *o += w * s;
            }
            at += m;
        }
    }
}
