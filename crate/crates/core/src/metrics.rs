//! Evaluation metrics: RMSE on depth/reflectance, mean angular error on
//! normals (degrees), and the bicubic upsampling baseline.

use crate::error::{Error, Result};
use crate::filters::{bicubic_upsample, inpaint_nearest};
use crate::geometry::{DepthMap, Image, NormalField, Resolution};
use crate::grid::{Grid, Mask};

/// Root mean squared error over masked pixels of two scalar grids.
pub fn rmse(a: &Grid<f64>, b: &Grid<f64>, mask: &Mask) -> Result<f64> {
    mask.require_nonempty("rmse")?;
    if !a.same_size(b) || a.width() != mask.width() || a.height() != mask.height() {
        return Err(Error::DimensionMismatch {
            context: "rmse grids",
            expected: mask.width() * mask.height(),
            actual: a.len().min(b.len()),
        });
    }
    let mut acc = 0.0;
    for &idx in mask.packed() {
        let d = a.data()[idx] - b.data()[idx];
        acc += d * d;
    }
    Ok((acc / mask.len() as f64).sqrt())
}

/// RMSE over masked pixels and all three channels.
pub fn rmse_rgb(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    mask.require_nonempty("rmse")?;
    let mut acc = 0.0;
    for &idx in mask.packed() {
        let (av, bv) = (a.grid().data()[idx], b.grid().data()[idx]);
        for c in 0..3 {
            let d = av[c] - bv[c];
            acc += d * d;
        }
    }
    Ok((acc / (3 * mask.len()) as f64).sqrt())
}

/// Mean angular error between two unit normal fields, in degrees.
pub fn mae_normals(n1: &NormalField, n2: &NormalField, mask: &Mask) -> Result<f64> {
    mask.require_nonempty("mae")?;
    let mut acc = 0.0;
    for &idx in mask.packed() {
        let (a, b) = (n1.grid().data()[idx], n2.grid().data()[idx]);
        let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        acc += dot.acos();
    }
    Ok((acc / mask.len() as f64).to_degrees())
}

/// Plain bicubic upsampling of an LR depth map; the quality baseline the
/// solvers are scored against (no guided pre-smoothing).
pub fn bicubic_baseline(z0: &DepthMap, scale: usize, hr_mask: &Mask) -> DepthMap {
    let lr_mask = Mask::from_fn(z0.width(), z0.height(), |r, c| {
        z0.grid().get(r, c).is_finite()
    });
    let filled = inpaint_nearest(z0.grid(), &lr_mask);
    let hr = bicubic_upsample(&filled, scale, hr_mask.width(), hr_mask.height());
    let mut out = Grid::filled(hr_mask.width(), hr_mask.height(), f64::NAN);
    for &idx in hr_mask.packed() {
        out.data_mut()[idx] = hr.data()[idx];
    }
    DepthMap::new(out, Resolution::Hr)
}
