//! Generic numerical solvers shared by both pipelines: conjugate gradient
//! on the normal equations, a compact L-BFGS for the per-pixel subproblems,
//! and the primal-dual solver for the vectorial Potts problem.

mod cg;
mod lbfgs;
mod potts;

pub use cg::{cg_normal_equations, CgOptions, CgResult};
pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult};
pub use potts::{l0_jump_count, potts_energy, potts_solve, PottsOptions};
