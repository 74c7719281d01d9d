//! Forward image formation and the two closed-form estimation bricks.
//!
//! The image model is `I_c = rho_c * <m, l>` per pixel and channel, with
//! `m = (n, 1)` the augmented unit normal and `l` the achromatic 4-vector
//! of first-order spherical-harmonics coefficients. One `l` is shared by
//! all three channels. Rendered intensities are never clamped here;
//! clamping to [0, 1] happens only at file export.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{aug_normal, normals_from_theta, CameraIntrinsics, Image, Lighting, ThetaField};
use crate::grid::{Grid, Mask};

/// Renders an image from albedo, geometry and lighting.
pub fn render(
    rho: &Image,
    theta: &ThetaField,
    l: &Lighting,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<Image> {
    let m = aug_normal(&normals_from_theta(theta, cam, mask)?);
    let mut out = Grid::filled(mask.width(), mask.height(), [f64::NAN; 3]);
    for &idx in mask.packed() {
        let shade = l.dot_aug(m.data()[idx]);
        let r = rho.grid().data()[idx];
        out.data_mut()[idx] = [r[0] * shade, r[1] * shade, r[2] * shade];
    }
    Ok(Image::new(out))
}

/// Per-pixel shading coefficients `<m, l>` for a fixed geometry.
pub fn shading_coefficients(
    theta: &ThetaField,
    l: &Lighting,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<Grid<f64>> {
    let m = aug_normal(&normals_from_theta(theta, cam, mask)?);
    let mut out = Grid::filled(mask.width(), mask.height(), f64::NAN);
    for &idx in mask.packed() {
        out.data_mut()[idx] = l.dot_aug(m.data()[idx]);
    }
    Ok(out)
}

/// Singular values of the 4x4 normal matrix below `max_sv * RANK_TOL`
/// count as zero when deciding rank deficiency.
const RANK_TOL: f64 = 1e-10;

/// Least-squares lighting estimate over all masked pixels and channels.
///
/// Minimizes `sum |rho <m, l> - I|^2` by accumulating the 4x4 normal
/// equations and solving them once; fails with `RankDeficient` when the
/// stacked system has rank below 4 (flat geometry, zero albedo).
pub fn estimate_lighting(
    rho: &Image,
    theta: &ThetaField,
    image: &Image,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<Lighting> {
    mask.require_nonempty("lighting estimation")?;
    let m = aug_normal(&normals_from_theta(theta, cam, mask)?);
    let mut ata = Matrix4::<f64>::zeros();
    let mut atb = Vector4::<f64>::zeros();
    for &idx in mask.packed() {
        let mv = Vector4::from_column_slice(&m.data()[idx]);
        let rv = rho.grid().data()[idx];
        let iv = image.grid().data()[idx];
        for c in 0..3 {
            // row rho_c * m^T with target I_c
            let w = rv[c];
            ata.ger(w * w, &mv, &mv, 1.0);
            atb += mv * (w * iv[c]);
        }
    }
    // rank(A) = rank(A^T A) for the stacked system
    let svd = ata.svd(true, true);
    let s_max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > s_max * RANK_TOL)
        .count();
    if s_max == 0.0 || rank < 4 {
        return Err(Error::RankDeficient { rank });
    }
    let sol = svd
        .solve(&atb, 0.0)
        .map_err(|e| Error::InvalidInput(format!("lighting solve failed: {e}")))?;
    Ok(Lighting([sol[0], sol[1], sol[2], sol[3]]))
}

/// Pointwise albedo estimate from per-image shading fields.
#[derive(Debug, Clone)]
pub struct AlbedoEstimate {
    pub albedo: Image,
    /// Pixels whose shading energy fell below the 1e-12 guard and were
    /// filled with the plain image mean instead.
    pub degenerate_pixels: usize,
}

/// `rho_c = sum_i s_i I_{i,c} / sum_i s_i^2`, with a mean fallback where
/// the denominator vanishes.
pub fn estimate_albedo_pointwise(
    shadings: &[Grid<f64>],
    images: &[Image],
    mask: &Mask,
) -> Result<AlbedoEstimate> {
    if shadings.is_empty() || shadings.len() != images.len() {
        return Err(Error::DimensionMismatch {
            context: "albedo estimation inputs",
            expected: shadings.len().max(1),
            actual: images.len(),
        });
    }
    let mut grid = Grid::filled(mask.width(), mask.height(), [f64::NAN; 3]);
    let mut degenerate = 0usize;
    for &idx in mask.packed() {
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for (s, img) in shadings.iter().zip(images) {
            let sv = s.data()[idx];
            let iv = img.grid().data()[idx];
            for c in 0..3 {
                num[c] += sv * iv[c];
            }
            den += sv * sv;
        }
        grid.data_mut()[idx] = if den > 1e-12 {
            [num[0] / den, num[1] / den, num[2] / den]
        } else {
            degenerate += 1;
            let n = images.len() as f64;
            let mut mean = [0.0; 3];
            for img in images {
                let iv = img.grid().data()[idx];
                for c in 0..3 {
                    mean[c] += iv[c] / n;
                }
            }
            mean
        };
    }
    Ok(AlbedoEstimate {
        albedo: Image::new(grid),
        degenerate_pixels: degenerate,
    })
}

/// Photometric least-squares term `sum |rho <m_theta, l> - I|^2`.
pub fn photometric_residual(
    rho: &Image,
    theta: &ThetaField,
    l: &Lighting,
    image: &Image,
    cam: &CameraIntrinsics,
    mask: &Mask,
) -> Result<f64> {
    let m = aug_normal(&normals_from_theta(theta, cam, mask)?);
    let mut total = 0.0;
    for &idx in mask.packed() {
        let shade = l.dot_aug(m.data()[idx]);
        let rv = rho.grid().data()[idx];
        let iv = image.grid().data()[idx];
        for c in 0..3 {
            let r = rv[c] * shade - iv[c];
            total += r * r;
        }
    }
    Ok(total)
}
