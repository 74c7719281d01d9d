//! Per-solve diagnostics: residual series, energies, and the before/after
//! values of each block update, serialized alongside every result.

use serde::{Deserialize, Serialize};

/// One outer iteration of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Relative depth change `|z_k+1 - z_k| / |z_0|`.
    pub r_rel: f64,
    /// Constraint residual of the splitting (single-shot only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_c: Option<f64>,
    /// ADMM step size in effect this iteration (single-shot only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Full model energy at the end of the sweep.
    pub energy: f64,
    /// Albedo subproblem objective around the rho-update.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_objective_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_objective_after: Option<f64>,
    /// Photometric least-squares term around the lighting update(s).
    pub lighting_objective_before: f64,
    pub lighting_objective_after: f64,
}

/// Full record of a solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub wall_time_s: f64,
    /// Pixels that hit the degenerate-shading fallback of the pointwise
    /// albedo update, summed over sweeps (multi-shot only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate_albedo_pixels: Option<usize>,
}

impl SolveReport {
    pub fn final_r_rel(&self) -> Option<f64> {
        self.iterations.last().map(|it| it.r_rel)
    }

    pub fn final_r_c(&self) -> Option<f64> {
        self.iterations.last().and_then(|it| it.r_c)
    }
}
