//! Single-shot pipeline: joint depth super-resolution and shape-from-shading.
//!
//! Minimizes
//!
//! ```text
//! |rho <m, l> - I|^2 + mu |K z - z0|^2 + nu |dA|_1 + lambda |grad rho|_0
//! ```
//!
//! by a multi-block ADMM over (rho, l, theta, z) with dual u and growing
//! step kappa. The splitting variable theta carries `(grad z, z)`, which
//! decouples the nonlinear shading and area terms from the depth gradient:
//! the rho-update is a Potts problem, the lighting update a pseudo-inverse,
//! the theta-update independent 3-dimensional problems per pixel, and the
//! z-update a sparse linear least-squares solved by conjugate gradient.
//!
//! Convergence follows the relative depth change `r_rel < 1e-5` together
//! with the constraint residual `r_c < 5e-6`; kappa starts at 1e-4 and is
//! multiplied by 1.5 after each sweep. The known-albedo mode pins rho to a
//! supplied map and skips the Potts update entirely.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::upsample_depth;
use crate::geometry::{
    direction_at, theta_from_depth, CameraIntrinsics, DepthMap, Image, Lighting, Resolution,
    ThetaField,
};
use crate::grid::{dot, norm, Grid, Mask};
use crate::operators::{DepthToTheta, Downsampler, LinearOperator, StackedOperator};
use crate::report::{IterationRecord, SolveReport};
use crate::shading::{estimate_lighting, photometric_residual, shading_coefficients};
use crate::solvers::{
    cg_normal_equations, lbfgs_minimize, potts_energy, potts_solve, CgOptions, LbfgsOptions,
    PottsOptions,
};

/// Whether the reflectance is estimated or supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlbedoMode {
    Estimate,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SfsParams {
    /// Depth data weight.
    pub mu: f64,
    /// Minimal-surface weight.
    pub nu: f64,
    /// Potts weight on the albedo gradient.
    pub lambda: f64,
    /// Initial ADMM step size.
    pub kappa0: f64,
    /// Geometric growth factor of kappa per outer iteration.
    pub kappa_factor: f64,
    pub max_outer_iters: usize,
    pub rrel_tol: f64,
    pub rc_tol: f64,
    pub albedo_mode: AlbedoMode,
    /// Guided-filter radius (LR pixels) for initialization; 0 disables.
    pub guided_radius: usize,
    pub guided_epsilon: f64,
    pub cg: CgOptions,
    pub lbfgs: LbfgsOptions,
    pub potts: PottsOptions,
}

impl Default for SfsParams {
    fn default() -> Self {
        SfsParams {
            mu: 0.1,
            nu: 0.7,
            lambda: 1.0,
            kappa0: 1e-4,
            kappa_factor: 1.5,
            max_outer_iters: 100,
            rrel_tol: 1e-5,
            rc_tol: 5e-6,
            albedo_mode: AlbedoMode::Estimate,
            guided_radius: 4,
            guided_epsilon: 1e-4,
            cg: CgOptions::default(),
            lbfgs: LbfgsOptions::default(),
            potts: PottsOptions::default(),
        }
    }
}

impl SfsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.nu > 0.0 && self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "trade-off weights must be positive (mu={}, nu={}, lambda={})",
                self.mu, self.nu, self.lambda
            )));
        }
        if !(self.kappa0 > 0.0 && self.kappa_factor > 1.0) {
            return Err(Error::InvalidInput(
                "kappa0 must be positive and kappa_factor > 1".into(),
            ));
        }
        Ok(())
    }
}

/// Primal and dual variables of the ADMM.
#[derive(Debug, Clone)]
pub struct SfsState {
    pub z: DepthMap,
    pub rho: Image,
    pub l: Lighting,
    pub theta: ThetaField,
    pub u: ThetaField,
    pub kappa: f64,
}

/// Result of a single-shot solve.
#[derive(Debug, Clone)]
pub struct SfsOutput {
    pub z: DepthMap,
    pub rho: Image,
    pub l: Lighting,
    pub report: SolveReport,
}

fn check_hr_dims(image: &Image, cam: &CameraIntrinsics, mask: &Mask) -> Result<()> {
    let expected = cam.width * cam.height;
    for (what, w, h) in [
        ("image", image.width(), image.height()),
        ("mask", mask.width(), mask.height()),
    ] {
        if w != cam.width || h != cam.height {
            return Err(Error::DimensionMismatch {
                context: match what {
                    "image" => "HR image vs camera grid",
                    _ => "HR mask vs camera grid",
                },
                expected,
                actual: w * h,
            });
        }
    }
    Ok(())
}

/// Initial state: `rho = I`, `l = (0, 0, -1, 0)`, `z` the guided-filtered
/// LR depth lifted by bicubic interpolation, `theta = (grad z, z)`, `u = 0`.
pub fn sfs_initialize(
    image: &Image,
    z0: &DepthMap,
    scale: usize,
    cam: &CameraIntrinsics,
    mask: &Mask,
    params: &SfsParams,
) -> Result<SfsState> {
    params.validate()?;
    check_hr_dims(image, cam, mask)?;
    mask.require_nonempty("sfs initialization")?;
    let down = Downsampler::new(scale, mask)?;
    let lr_mask = lr_data_mask(&down, z0)?;
    DepthMap::new(z0.grid().clone(), Resolution::Lr).validate(&lr_mask)?;

    let z_grid = upsample_depth(
        z0.grid(),
        &lr_mask,
        mask,
        scale,
        params.guided_radius,
        params.guided_epsilon,
    );
    let z = DepthMap::new(z_grid, Resolution::Hr);
    z.validate(mask)?;
    let grad = DepthToTheta::new(mask)?;
    let theta = theta_from_depth(&z, grad.gradient(), mask);
    Ok(SfsState {
        z,
        rho: image.clone(),
        l: Lighting::frontal(),
        theta,
        u: ThetaField::zeros(mask.width(), mask.height()),
        kappa: params.kappa0,
    })
}

/// LR pixels that are both reachable by the downsampler and observed.
fn lr_data_mask(down: &Downsampler, z0: &DepthMap) -> Result<Mask> {
    let lr = down.lr_mask();
    if z0.width() != lr.width() || z0.height() != lr.height() {
        return Err(Error::DimensionMismatch {
            context: "LR depth vs downsampled grid",
            expected: lr.width() * lr.height(),
            actual: z0.width() * z0.height(),
        });
    }
    let mask = Mask::from_fn(lr.width(), lr.height(), |r, c| {
        lr.is_set(r, c) && z0.grid().get(r, c).is_finite()
    });
    mask.require_nonempty("LR depth observations")?;
    Ok(mask)
}

/// Per-pixel data of the theta subproblem.
#[derive(Debug, Clone, Copy)]
pub struct ThetaContext {
    pub rho: [f64; 3],
    pub intensity: [f64; 3],
    pub light: [f64; 4],
    /// Pixel coordinate relative to the principal point.
    pub p: (f64, f64),
    pub focal: f64,
    /// `(grad z, z) - u`, the quadratic coupling target.
    pub target: [f64; 3],
    pub nu: f64,
    pub kappa: f64,
}

/// Value and analytic gradient of the theta subproblem
/// `|rho <m_theta, l> - I|^2 + nu dA_theta + kappa/2 |theta - target|^2`.
///
/// Returns +inf outside the `theta_3 > 0` domain; L-BFGS backtracks.
pub fn theta_objective(theta: &[f64; 3], ctx: &ThetaContext) -> (f64, [f64; 3]) {
    if theta[2] <= 0.0 {
        return (f64::INFINITY, [0.0; 3]);
    }
    let f = ctx.focal;
    let (w, d) = direction_at(*theta, ctx.p, f);
    if d < 1e-300 {
        return (f64::INFINITY, [0.0; 3]);
    }
    let l = ctx.light;
    // dw/dtheta_j as rows
    let dw = [
        [f, 0.0, -ctx.p.0],
        [0.0, f, -ctx.p.1],
        [0.0, 0.0, -1.0],
    ];
    let wl = w[0] * l[0] + w[1] * l[1] + w[2] * l[2];
    let shade = wl / d + l[3];

    let mut value = 0.0;
    let mut dshade_coeff = 0.0; // sum_c 2 (rho_c s - I_c) rho_c
    for c in 0..3 {
        let r = ctx.rho[c] * shade - ctx.intensity[c];
        value += r * r;
        dshade_coeff += 2.0 * r * ctx.rho[c];
    }

    let f2 = f * f;
    let area = theta[2] * d / f2;
    value += ctx.nu * area;

    let mut grad = [0.0; 3];
    for j in 0..3 {
        let dd = (w[0] * dw[j][0] + w[1] * dw[j][1] + w[2] * dw[j][2]) / d;
        let dwl = dw[j][0] * l[0] + dw[j][1] * l[1] + dw[j][2] * l[2];
        let dshade = (dwl * d - wl * dd) / (d * d);
        let mut darea = theta[2] * dd / f2;
        if j == 2 {
            darea += d / f2;
        }
        grad[j] = dshade_coeff * dshade + ctx.nu * darea;
    }

    for j in 0..3 {
        let diff = theta[j] - ctx.target[j];
        value += 0.5 * ctx.kappa * diff * diff;
        grad[j] += ctx.kappa * diff;
    }
    (value, grad)
}

/// Depth update: stacked sparse least squares
/// `min_z mu |K z - z0|^2 + kappa/2 |(theta + u) - (grad z, z)|^2`
/// solved by conjugate gradient on the normal equations, warm-started.
/// `z0` is packed over the downsampler's LR mask.
#[allow(clippy::too_many_arguments)]
pub fn z_update(
    theta: &ThetaField,
    u: &ThetaField,
    z0: &DepthMap,
    down: &Downsampler,
    lift: &DepthToTheta,
    mu: f64,
    kappa: f64,
    z_warm: &DepthMap,
    mask: &Mask,
    cg: &CgOptions,
) -> Result<(DepthMap, usize, f64)> {
    let w_k = mu.sqrt();
    let w_t = (0.5 * kappa).sqrt();
    let stacked = StackedOperator::new(vec![(w_k, down), (w_t, lift)])?;

    let mut b = Vec::with_capacity(stacked.output_len());
    let z0_packed = down.lr_mask().pack(z0.grid());
    b.extend(z0_packed.iter().map(|v| w_k * v));
    let theta_packed = mask.pack_vec3(theta.grid());
    let u_packed = mask.pack_vec3(u.grid());
    b.extend(
        theta_packed
            .iter()
            .zip(&u_packed)
            .map(|(t, uu)| w_t * (t + uu)),
    );

    let warm = mask.pack(z_warm.grid());
    let res = cg_normal_equations(&stacked, &b, &warm, cg)?;
    Ok((
        DepthMap::new(mask.unpack(&res.x), Resolution::Hr),
        res.iterations,
        res.residual,
    ))
}

/// Full model energy at `(z, rho, l)`.
fn model_energy(
    z: &DepthMap,
    rho: &Image,
    l: &Lighting,
    image: &Image,
    z0_packed: &[f64],
    down: &Downsampler,
    lift: &DepthToTheta,
    cam: &CameraIntrinsics,
    mask: &Mask,
    params: &SfsParams,
) -> Result<f64> {
    let theta = theta_from_depth(z, lift.gradient(), mask);
    let photo = photometric_residual(rho, &theta, l, image, cam, mask)?;
    let z_packed = mask.pack(z.grid());
    let kz = down.apply_vec(&z_packed);
    let depth: f64 = kz
        .iter()
        .zip(z0_packed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let area: f64 = crate::geometry::surface_element(&theta, cam, mask)?
        .data()
        .iter()
        .filter(|v| v.is_finite())
        .sum();
    let jumps = crate::solvers::l0_jump_count(rho, mask) as f64;
    Ok(photo + params.mu * depth + params.nu * area + params.lambda * jumps)
}

/// Runs the single-shot solve. In fixed-albedo mode `albedo_in` must be the
/// HR albedo; the returned `rho` is then that input, bit for bit.
pub fn sfs_solve(
    image: &Image,
    z0: &DepthMap,
    scale: usize,
    cam: &CameraIntrinsics,
    mask: &Mask,
    params: &SfsParams,
    albedo_in: Option<&Image>,
) -> Result<SfsOutput> {
    let start = std::time::Instant::now();
    if params.albedo_mode == AlbedoMode::Fixed && albedo_in.is_none() {
        return Err(Error::InvalidInput(
            "fixed-albedo mode requires an input albedo map".into(),
        ));
    }
    let mut state = sfs_initialize(image, z0, scale, cam, mask, params)?;
    if let (AlbedoMode::Fixed, Some(albedo)) = (params.albedo_mode, albedo_in) {
        if albedo.width() != cam.width || albedo.height() != cam.height {
            return Err(Error::DimensionMismatch {
                context: "input albedo vs camera grid",
                expected: cam.width * cam.height,
                actual: albedo.width() * albedo.height(),
            });
        }
        state.rho = albedo.clone();
    }

    let down = Downsampler::new(scale, mask)?;
    let lr_mask = lr_data_mask(&down, z0)?;
    let down = down.retain_rows(|r, c| lr_mask.is_set(r, c))?;
    let lift = DepthToTheta::new(mask)?;
    let z0_packed = lr_mask.pack(z0.grid());
    let z_init_norm = norm(&mask.pack(state.z.grid())).max(f64::MIN_POSITIVE);

    let n = mask.len();
    let width = mask.width();
    let mut report = SolveReport {
        iterations: Vec::new(),
        converged: false,
        wall_time_s: 0.0,
        degenerate_albedo_pixels: None,
    };

    for iteration in 1..=params.max_outer_iters {
        let kappa = state.kappa;

        // rho-update: Potts problem at frozen geometry and lighting
        let (rho_before, rho_after) = if params.albedo_mode == AlbedoMode::Estimate {
            let a = shading_coefficients(&state.theta, &state.l, cam, mask)?;
            let before = potts_energy(&a, image, &state.rho, params.lambda, mask);
            state.rho = potts_solve(&a, image, params.lambda, mask, &state.rho, &params.potts)?;
            let after = potts_energy(&a, image, &state.rho, params.lambda, mask);
            (Some(before), Some(after))
        } else {
            (None, None)
        };

        // lighting update: pseudo-inverse at frozen geometry
        let light_before =
            photometric_residual(&state.rho, &state.theta, &state.l, image, cam, mask)?;
        state.l = estimate_lighting(&state.rho, &state.theta, image, cam, mask)?;
        let light_after =
            photometric_residual(&state.rho, &state.theta, &state.l, image, cam, mask)?;

        // theta-update: independent per-pixel minimizations, warm-started
        let t_k = theta_from_depth(&state.z, lift.gradient(), mask);
        let theta_new: Vec<Result<[f64; 3]>> = mask
            .packed()
            .par_iter()
            .map(|&idx| {
                let (row, col) = (idx / width, idx % width);
                let t = t_k.grid().data()[idx];
                let uu = state.u.grid().data()[idx];
                let ctx = ThetaContext {
                    rho: state.rho.grid().data()[idx],
                    intensity: image.grid().data()[idx],
                    light: state.l.0,
                    p: cam.p(row, col),
                    focal: cam.f,
                    target: [t[0] - uu[0], t[1] - uu[1], t[2] - uu[2]],
                    nu: params.nu,
                    kappa,
                };
                let warm = state.theta.grid().data()[idx];
                let res = lbfgs_minimize(
                    |x| {
                        let (v, g) = theta_objective(&[x[0], x[1], x[2]], &ctx);
                        (v, g.to_vec())
                    },
                    &warm,
                    &params.lbfgs,
                )?;
                Ok([res.x[0], res.x[1], res.x[2]])
            })
            .collect();
        {
            let grid = state.theta.grid_mut();
            for (&idx, value) in mask.packed().iter().zip(theta_new) {
                grid.data_mut()[idx] = value?;
            }
        }

        // z-update: sparse least squares by CG, warm-started at z_k
        let z_prev_packed = mask.pack(state.z.grid());
        let (z_new, _, _) = z_update(
            &state.theta,
            &state.u,
            z0,
            &down,
            &lift,
            params.mu,
            kappa,
            &state.z,
            mask,
            &params.cg,
        )?;
        state.z = z_new;

        // dual ascent and residuals
        let t_next = theta_from_depth(&state.z, lift.gradient(), mask);
        let theta_packed = mask.pack_vec3(state.theta.grid());
        let t_packed = mask.pack_vec3(t_next.grid());
        let constraint: Vec<f64> = theta_packed
            .iter()
            .zip(&t_packed)
            .map(|(t, z)| t - z)
            .collect();
        {
            let grid = state.u.grid_mut();
            for (slot, &idx) in mask.packed().iter().enumerate() {
                let v = &mut grid.data_mut()[idx];
                v[0] += constraint[slot];
                v[1] += constraint[n + slot];
                v[2] += constraint[2 * n + slot];
            }
        }
        let u_packed = mask.pack_vec3(state.u.grid());
        let r_c = dot(&u_packed, &constraint) + 0.5 * kappa * dot(&constraint, &constraint);

        let z_packed = mask.pack(state.z.grid());
        let dz: Vec<f64> = z_packed
            .iter()
            .zip(&z_prev_packed)
            .map(|(a, b)| a - b)
            .collect();
        let r_rel = norm(&dz) / z_init_norm;

        let energy = model_energy(
            &state.z, &state.rho, &state.l, image, &z0_packed, &down, &lift, cam, mask, params,
        )?;

        report.iterations.push(IterationRecord {
            iteration,
            r_rel,
            r_c: Some(r_c),
            kappa: Some(kappa),
            energy,
            rho_objective_before: rho_before,
            rho_objective_after: rho_after,
            lighting_objective_before: light_before,
            lighting_objective_after: light_after,
        });

        if r_rel < params.rrel_tol && r_c < params.rc_tol {
            report.converged = true;
            state.kappa *= params.kappa_factor;
            break;
        }
        state.kappa *= params.kappa_factor;
    }

    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(SfsOutput {
        z: state.z,
        rho: state.rho,
        l: state.l,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_context(rng: &mut ChaCha8Rng) -> ThetaContext {
        ThetaContext {
            rho: [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ],
            intensity: [
                rng.gen_range(0.0..1.2),
                rng.gen_range(0.0..1.2),
                rng.gen_range(0.0..1.2),
            ],
            light: [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-1.2..-0.3),
                rng.gen_range(0.0..0.4),
            ],
            p: (rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)),
            focal: rng.gen_range(50.0..500.0),
            target: [
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(0.5..2.0),
            ],
            nu: rng.gen_range(0.0..2.0),
            kappa: rng.gen_range(0.0..10.0),
        }
    }

    #[test]
    fn theta_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let h = 1e-6;
        for _ in 0..200 {
            let ctx = random_context(&mut rng);
            let theta = [
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(0.5..2.0),
            ];
            let (_, grad) = theta_objective(&theta, &ctx);
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            for j in 0..3 {
                let mut tp = theta;
                tp[j] += h;
                let mut tm = theta;
                tm[j] -= h;
                let fd = (theta_objective(&tp, &ctx).0 - theta_objective(&tm, &ctx).0)
                    / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() <= 1e-5 * gnorm.max(1.0),
                    "component {j}: analytic {} vs fd {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn theta_objective_pure_coupling_is_minimized_at_target() {
        // rho = 0 and nu = 0 leave only the quadratic: minimizer = target
        let ctx = ThetaContext {
            rho: [0.0; 3],
            intensity: [0.0; 3],
            light: [0.0, 0.0, -1.0, 0.0],
            p: (1.0, -2.0),
            focal: 100.0,
            target: [0.01, -0.02, 1.4],
            nu: 0.0,
            kappa: 3.0,
        };
        let res = lbfgs_minimize(
            |x| {
                let (v, g) = theta_objective(&[x[0], x[1], x[2]], &ctx);
                (v, g.to_vec())
            },
            &[0.0, 0.0, 1.0],
            &LbfgsOptions::default(),
        )
        .unwrap();
        for j in 0..3 {
            assert!((res.x[j] - ctx.target[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn theta_objective_zero_residual_for_frontal_plane() {
        // nu = 0, rho = 1, l = (0,0,-1,0), I = 1, p = 0: any theta with zero
        // gradient part has shading 1 and photometric residual 0
        let ctx = ThetaContext {
            rho: [1.0; 3],
            intensity: [1.0; 3],
            light: [0.0, 0.0, -1.0, 0.0],
            p: (0.0, 0.0),
            focal: 50.0,
            target: [0.0, 0.0, 1.0],
            nu: 0.0,
            kappa: 2.0,
        };
        let (value, _) = theta_objective(&[0.0, 0.0, 1.0], &ctx);
        assert!(value.abs() < 1e-14);
    }

    #[test]
    fn theta_objective_barrier_below_zero_depth() {
        let ctx = ThetaContext {
            rho: [0.5; 3],
            intensity: [0.5; 3],
            light: [0.0, 0.0, -1.0, 0.1],
            p: (0.0, 0.0),
            focal: 10.0,
            target: [0.0, 0.0, 1.0],
            nu: 0.1,
            kappa: 1.0,
        };
        assert!(theta_objective(&[0.0, 0.0, 0.0], &ctx).0.is_infinite());
        assert!(theta_objective(&[0.1, 0.0, -0.5], &ctx).0.is_infinite());
    }

    #[test]
    fn z_update_matches_dense_oracle_on_small_grid() {
        use nalgebra::{DMatrix, DVector};
        let mask = Mask::full(4, 4);
        let cam = CameraIntrinsics::centered(8.0, 4, 4).unwrap();
        let _ = cam;
        let down = Downsampler::new(2, &mask).unwrap();
        let lift = DepthToTheta::new(&mask).unwrap();
        let lr_mask = down.lr_mask().clone();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = ThetaField::new(Grid::from_fn(4, 4, |_, _| {
            [
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(0.9..1.1),
            ]
        }));
        let u = ThetaField::new(Grid::from_fn(4, 4, |_, _| {
            [
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
            ]
        }));
        let z0 = DepthMap::new(Grid::from_fn(2, 2, |_, _| rng.gen_range(0.9..1.1)), Resolution::Lr);
        let z_warm = DepthMap::new(Grid::filled(4, 4, 1.0), Resolution::Hr);

        let (mu, kappa) = (0.37, 2.1);
        let (z, _, _) = z_update(
            &theta,
            &u,
            &z0,
            &down,
            &lift,
            mu,
            kappa,
            &z_warm,
            &mask,
            &CgOptions {
                max_iters: 2000,
                rel_tol: 1e-14,
            },
        )
        .unwrap();

        // dense oracle: materialize the stacked operator column by column
        let stacked = StackedOperator::new(vec![
            (mu.sqrt(), &down as &dyn LinearOperator),
            ((0.5 * kappa).sqrt(), &lift as &dyn LinearOperator),
        ])
        .unwrap();
        let (m, nn) = (stacked.output_len(), stacked.input_len());
        let mut dense = DMatrix::zeros(m, nn);
        for j in 0..nn {
            let mut e = vec![0.0; nn];
            e[j] = 1.0;
            let col = stacked.apply_vec(&e);
            for i in 0..m {
                dense[(i, j)] = col[i];
            }
        }
        let mut b = Vec::new();
        b.extend(lr_mask.pack(z0.grid()).iter().map(|v| mu.sqrt() * v));
        let tp = mask.pack_vec3(theta.grid());
        let up = mask.pack_vec3(u.grid());
        b.extend(
            tp.iter()
                .zip(&up)
                .map(|(t, uu)| (0.5 * kappa).sqrt() * (t + uu)),
        );
        let ata = dense.transpose() * &dense;
        let atb = dense.transpose() * DVector::from_column_slice(&b);
        let oracle = ata.lu().solve(&atb).unwrap();

        let got = mask.pack(z.grid());
        for (g, o) in got.iter().zip(oracle.iter()) {
            assert!((g - o).abs() < 1e-8, "{g} vs {o}");
        }
    }

    #[test]
    fn z_update_with_dominant_kappa_returns_the_feasible_depth() {
        // theta - u encodes an exact (grad z, z) pair; huge kappa pins z to it
        let mask = Mask::full(6, 6);
        let lift = DepthToTheta::new(&mask).unwrap();
        let down = Downsampler::new(2, &mask).unwrap();
        let lr_mask = down.lr_mask().clone();
        let z_hat = DepthMap::new(
            Grid::from_fn(6, 6, |r, c| 1.0 + 0.01 * (r as f64) - 0.02 * (c as f64)),
            Resolution::Hr,
        );
        let theta = theta_from_depth(&z_hat, lift.gradient(), &mask);
        let u = ThetaField::zeros(6, 6);
        let z0 = DepthMap::new(Grid::filled(3, 3, 55.0), Resolution::Lr); // ignored at huge kappa
        let (z, _, _) = z_update(
            &theta,
            &u,
            &z0,
            &down,
            &lift,
            1e-12,
            1e12,
            &z_hat,
            &mask,
            &CgOptions::default(),
        )
        .unwrap();
        for &idx in mask.packed() {
            assert!((z.grid().data()[idx] - z_hat.grid().data()[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn z_update_mu_only_reproduces_observations_at_scale_one() {
        let mask = Mask::full(4, 4);
        let lift = DepthToTheta::new(&mask).unwrap();
        let down = Downsampler::new(1, &mask).unwrap();
        let lr_mask = down.lr_mask().clone();
        let z0 = DepthMap::new(Grid::from_fn(4, 4, |r, c| 1.0 + 0.1 * (r + c) as f64), Resolution::Lr);
        let theta = ThetaField::zeros(4, 4);
        let u = ThetaField::zeros(4, 4);
        let warm = DepthMap::new(Grid::filled(4, 4, 1.0), Resolution::Hr);
        // kappa = 0 collapses the theta rows; K = Id makes z = z0
        let (z, _, _) = z_update(
            &theta, &u, &z0, &down, &lift, 1.0, 0.0, &warm, &mask,
            &CgOptions::default(),
        )
        .unwrap();
        for &idx in mask.packed() {
            assert!((z.grid().data()[idx] - z0.grid().data()[idx]).abs() < 1e-9);
        }
    }

    #[test]
    fn initialization_follows_the_prescription() {
        let cam = CameraIntrinsics::centered(32.0, 8, 8).unwrap();
        let mask = Mask::full(8, 8);
        let image = Image::filled(8, 8, [0.25, 0.5, 0.75]);
        let z0 = DepthMap::new(Grid::filled(4, 4, 1.5), Resolution::Lr);
        let state =
            sfs_initialize(&image, &z0, 2, &cam, &mask, &SfsParams::default()).unwrap();
        assert_eq!(state.l, Lighting([0.0, 0.0, -1.0, 0.0]));
        assert!(state.rho.bits_eq(&image));
        // constant depth survives guided filter + bicubic exactly
        for &idx in mask.packed() {
            assert!((state.z.grid().data()[idx] - 1.5).abs() < 1e-12);
            assert_eq!(state.u.grid().data()[idx], [0.0; 3]);
        }
        assert_eq!(state.kappa, 1e-4);
    }

    #[test]
    fn initialization_scale_one_no_filter_is_bitwise() {
        let cam = CameraIntrinsics::centered(16.0, 5, 5).unwrap();
        let mask = Mask::full(5, 5);
        let image = Image::filled(5, 5, [0.5; 3]);
        let z0 = DepthMap::new(
            Grid::from_fn(5, 5, |r, c| 1.0 + 0.01 * (r * 5 + c) as f64),
            Resolution::Lr,
        );
        let params = SfsParams {
            guided_radius: 0,
            ..Default::default()
        };
        let state = sfs_initialize(&image, &z0, 1, &cam, &mask, &params).unwrap();
        assert!(state.z.grid().bits_eq(z0.grid()));
    }

    #[test]
    fn initialization_rejects_nonpositive_lr_depth() {
        let cam = CameraIntrinsics::centered(16.0, 4, 4).unwrap();
        let mask = Mask::full(4, 4);
        let image = Image::filled(4, 4, [0.5; 3]);
        let z0 = DepthMap::new(Grid::filled(2, 2, -1.0), Resolution::Lr);
        let err = sfs_initialize(&image, &z0, 2, &cam, &mask, &SfsParams::default());
        assert!(matches!(err, Err(Error::NonPositiveDepth { .. })));
    }
}
