//! Camera model, pixel-grid field types, and the differential-geometric
//! quantities derived from a depth map.
//!
//! The perspective parameterization maps a depth `z` and its gradient to the
//! unit surface normal
//!
//! ```text
//! n = [ f * dz ; -z - p . dz ] / d,   d = | [ f * dz ; -z - p . dz ] |
//! ```
//!
//! with `p` the pixel coordinate relative to the principal point,
//! `p = (col - cx, row - cy)`, rows growing downward. The splitting variable
//! theta stores `(theta1, theta2) = dz` and `theta3 = z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::operators::GradientOperator;

/// Pinhole intrinsics of the color camera over the HR grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels, strictly positive.
    pub f: f64,
    /// Principal point, pixels.
    pub cx: f64,
    pub cy: f64,
    /// HR grid dimensions.
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal length must be finite and > 0 (got {f})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("camera grid must be at least 1x1".into()));
        }
        Ok(CameraIntrinsics {
            f,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera with the principal point at the grid center.
    pub fn centered(f: f64, width: usize, height: usize) -> Result<Self> {
        CameraIntrinsics::new(
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Pixel coordinate relative to the principal point.
    #[inline]
    pub fn p(&self, row: usize, col: usize) -> (f64, f64) {
        (col as f64 - self.cx, row as f64 - self.cy)
    }
}

/// Which pixel domain a depth map lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Resolution {
    Hr,
    Lr,
}

/// Depth in meters, strictly positive on masked-in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    grid: Grid<f64>,
    resolution: Resolution,
}

impl DepthMap {
    pub fn new(grid: Grid<f64>, resolution: Resolution) -> Self {
        DepthMap { grid, resolution }
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Grid<f64> {
        &mut self.grid
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.grid
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// Checks finiteness and strict positivity on the mask.
    pub fn validate(&self, mask: &Mask) -> Result<()> {
        for &idx in mask.packed() {
            let z = self.grid.data()[idx];
            if !z.is_finite() || z <= 0.0 {
                return Err(Error::NonPositiveDepth {
                    row: idx / self.width(),
                    col: idx % self.width(),
                    value: z,
                });
            }
        }
        Ok(())
    }
}

/// Three-channel radiance (or albedo) in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    grid: Grid<[f64; 3]>,
}

impl Image {
    pub fn new(grid: Grid<[f64; 3]>) -> Self {
        Image { grid }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Image {
            grid: Grid::filled(width, height, value),
        }
    }

    pub fn grid(&self) -> &Grid<[f64; 3]> {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Grid<[f64; 3]> {
        &mut self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    /// Pixelwise mean of several equally sized images.
    pub fn mean(images: &[Image]) -> Result<Image> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("mean of zero images".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut acc = Grid::filled(w, h, [0.0; 3]);
        for img in images {
            if img.width() != w || img.height() != h {
                return Err(Error::DimensionMismatch {
                    context: "image mean",
                    expected: w * h,
                    actual: img.width() * img.height(),
                });
            }
            for (a, v) in acc.data_mut().iter_mut().zip(img.grid.data()) {
                for c in 0..3 {
                    a[c] += v[c];
                }
            }
        }
        let n = images.len() as f64;
        for a in acc.data_mut() {
            for c in a.iter_mut() {
                *c /= n;
            }
        }
        Ok(Image::new(acc))
    }

    /// Bit-exact comparison, NaN-safe.
    pub fn bits_eq(&self, other: &Image) -> bool {
        self.grid.same_size(&other.grid)
            && self
                .grid
                .data()
                .iter()
                .zip(other.grid.data())
                .all(|(a, b)| (0..3).all(|c| a[c].to_bits() == b[c].to_bits()))
    }
}

/// Unit surface normals.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    grid: Grid<[f64; 3]>,
}

impl NormalField {
    pub fn new(grid: Grid<[f64; 3]>) -> Self {
        NormalField { grid }
    }

    pub fn grid(&self) -> &Grid<[f64; 3]> {
        &self.grid
    }
}

/// The splitting variable `theta = (dz, z)` (also reused for the dual).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaField {
    grid: Grid<[f64; 3]>,
}

impl ThetaField {
    pub fn new(grid: Grid<[f64; 3]>) -> Self {
        ThetaField { grid }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ThetaField {
            grid: Grid::filled(width, height, [0.0; 3]),
        }
    }

    pub fn grid(&self) -> &Grid<[f64; 3]> {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Grid<[f64; 3]> {
        &mut self.grid
    }
}

/// First-order spherical-harmonics lighting, `shading = <(n, 1), l>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lighting(pub [f64; 4]);

impl Lighting {
    /// The solver initialization value.
    pub fn frontal() -> Self {
        Lighting([0.0, 0.0, -1.0, 0.0])
    }

    #[inline]
    pub fn dot_aug(&self, m: [f64; 4]) -> f64 {
        self.0[0] * m[0] + self.0[1] * m[1] + self.0[2] * m[2] + self.0[3] * m[3]
    }
}

/// Un-normalized normal direction and its length at one pixel.
///
/// Returns `(w, d)` with `w = (f*t1, f*t2, -t3 - p.(t1,t2))`, `d = |w|`.
#[inline]
pub fn direction_at(theta: [f64; 3], p: (f64, f64), f: f64) -> ([f64; 3], f64) {
    let w = [
        f * theta[0],
        f * theta[1],
        -theta[2] - p.0 * theta[0] - p.1 * theta[1],
    ];
    let d = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    (w, d)
}

const DEGENERATE_TOL: f64 = 1e-12;

/// Unit normals from the splitting variable.
pub fn normals_from_theta(
    theta: &ThetaField,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<NormalField> {
    let mut out = Grid::filled(mask.width(), mask.height(), [f64::NAN; 3]);
    for &idx in mask.packed() {
        let (row, col) = (idx / mask.width(), idx % mask.width());
        let (w, d) = direction_at(theta.grid().data()[idx], cam.p(row, col), cam.f);
        if d < DEGENERATE_TOL {
            return Err(Error::DegenerateNormal {
                row,
                col,
                length: d,
            });
        }
        out.data_mut()[idx] = [w[0] / d, w[1] / d, w[2] / d];
    }
    Ok(NormalField::new(out))
}

/// Augments unit normals to the 4-vector paired with the light vector.
pub fn aug_normal(normals: &NormalField) -> Grid<[f64; 4]> {
    normals.grid().map(|n| [n[0], n[1], n[2], 1.0])
}

/// Per-pixel surface-area element `dA = t3 * d / f^2`.
pub fn surface_element(
    theta: &ThetaField,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<Grid<f64>> {
    let mut out = Grid::filled(mask.width(), mask.height(), f64::NAN);
    let f2 = cam.f * cam.f;
    for &idx in mask.packed() {
        let (row, col) = (idx / mask.width(), idx % mask.width());
        let t = theta.grid().data()[idx];
        if t[2] <= 0.0 {
            return Err(Error::NonPositiveDepth {
                row,
                col,
                value: t[2],
            });
        }
        let (_, d) = direction_at(t, cam.p(row, col), cam.f);
        out.data_mut()[idx] = t[2] * d / f2;
    }
    Ok(out)
}

/// Splits the augmented normal into direction `m~ = (w, 1)` and length `d`,
/// so that the unit augmented normal is `(w/d, 1)`.
pub fn direction_and_length(
    theta: &ThetaField,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<(Grid<[f64; 4]>, Grid<f64>)> {
    let mut dir = Grid::filled(mask.width(), mask.height(), [f64::NAN; 4]);
    let mut len = Grid::filled(mask.width(), mask.height(), f64::NAN);
    for &idx in mask.packed() {
        let (row, col) = (idx / mask.width(), idx % mask.width());
        let (w, d) = direction_at(theta.grid().data()[idx], cam.p(row, col), cam.f);
        if d < DEGENERATE_TOL {
            return Err(Error::DegenerateNormal {
                row,
                col,
                length: d,
            });
        }
        dir.data_mut()[idx] = [w[0], w[1], w[2], 1.0];
        len.data_mut()[idx] = d;
    }
    Ok((dir, len))
}

/// Builds the splitting variable `(grad z, z)` from a depth map using the
/// same difference stencil as the solvers.
pub fn theta_from_depth(depth: &DepthMap, grad: &GradientOperator, mask: &Mask) -> ThetaField {
    let z = mask.pack(depth.grid());
    let g = grad.apply_vec(&z);
    let n = mask.len();
    let mut out = Grid::filled(mask.width(), mask.height(), [f64::NAN; 3]);
    for (slot, &idx) in mask.packed().iter().enumerate() {
        out.data_mut()[idx] = [g[slot], g[n + slot], z[slot]];
    }
    ThetaField::new(out)
}

/// Unit normals of a depth map (shared stencil with the solvers, so the
/// evaluation metrics and the optimization agree on discretization).
pub fn normals_from_depth(
    depth: &DepthMap,
    cam: &CameraIntrinsics,
    grad: &GradientOperator,
    mask: &Mask,
) -> Result<NormalField> {
    normals_from_theta(&theta_from_depth(depth, grad, mask), cam, mask)
}
