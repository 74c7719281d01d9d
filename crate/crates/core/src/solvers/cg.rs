//! Conjugate gradient on the normal equations (CGLS).
//!
//! Solves `min |Ax - b|^2` without forming `A^T A`, which keeps the
//! iteration numerically equivalent to CG on the normal equations while
//! only touching `A` through apply/adjoint.

use crate::error::{Error, Result};
use crate::grid::{dot, norm};
use crate::operators::LinearOperator;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop when `|A^T (A x - b)| <= rel_tol * |A^T b|`.
    pub rel_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iters: 500,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `|A^T (A x - b)| / |A^T b|` at exit.
    pub residual: f64,
    pub converged: bool,
}

pub fn cg_normal_equations(
    a: &dyn LinearOperator,
    b: &[f64],
    x0: &[f64],
    opts: &CgOptions,
) -> Result<CgResult> {
    if b.len() != a.output_len() {
        return Err(Error::DimensionMismatch {
            context: "cg right-hand side",
            expected: a.output_len(),
            actual: b.len(),
        });
    }
    if x0.len() != a.input_len() {
        return Err(Error::DimensionMismatch {
            context: "cg initial guess",
            expected: a.input_len(),
            actual: x0.len(),
        });
    }

    let mut x = x0.to_vec();
    // r = b - A x, s = A^T r
    let mut r = vec![0.0; a.output_len()];
    a.apply(&x, &mut r);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut s = a.apply_adjoint_vec(&r);
    let denom = norm(&a.apply_adjoint_vec(b)).max(f64::MIN_POSITIVE);

    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; a.output_len()];
    let mut residual = gamma.sqrt() / denom;
    if residual <= opts.rel_tol {
        return Ok(CgResult {
            x,
            iterations: 0,
            residual,
            converged: true,
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    for k in 1..=opts.max_iters {
        a.apply(&p, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            // p in the nullspace of A; nothing further to gain
            iterations = k - 1;
            break;
        }
        let alpha = gamma / qq;
        for (xi, &pi) in x.iter_mut().zip(&p) {
            *xi += alpha * pi;
        }
        for (ri, &qi) in r.iter_mut().zip(&q) {
            *ri -= alpha * qi;
        }
        a.apply_adjoint(&r, &mut s);
        let gamma_new = dot(&s, &s);
        residual = gamma_new.sqrt() / denom;
        iterations = k;
        if residual <= opts.rel_tol {
            converged = true;
            break;
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, &si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
    }

    Ok(CgResult {
        x,
        iterations,
        residual,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mask;
    use crate::operators::{Downsampler, GradientOperator, StackedOperator};
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Dense matrix wrapped as a LinearOperator (test-only).
    pub(crate) struct DenseOp(pub DMatrix<f64>);

    impl LinearOperator for DenseOp {
        fn input_len(&self) -> usize {
            self.0.ncols()
        }
        fn output_len(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            let v = &self.0 * DVector::from_column_slice(x);
            out.copy_from_slice(v.as_slice());
        }
        fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
            let v = self.0.transpose() * DVector::from_column_slice(y);
            out.copy_from_slice(v.as_slice());
        }
    }

    #[test]
    fn identity_converges_immediately() {
        let a = DenseOp(DMatrix::identity(5, 5));
        let b = vec![3.0, -1.0, 0.5, 2.0, 9.0];
        let res = cg_normal_equations(&a, &b, &vec![0.0; 5], &CgOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        for (xi, bi) in res.x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_system() {
        let a = DenseOp(DMatrix::from_diagonal(&DVector::from_column_slice(&[
            1.0, 2.0,
        ])));
        let res =
            cg_normal_equations(&a, &[1.0, 4.0], &[0.0, 0.0], &CgOptions::default()).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-10);
        assert!((res.x[1] - 2.0).abs() < 1e-10);
    }

    /// Least-squares solution by dense QR; the independent oracle.
    pub(crate) fn dense_lstsq(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
        let qr = a.clone().qr();
        let x = qr
            .solve(&DVector::from_column_slice(b))
            .expect("full column rank");
        x.as_slice().to_vec()
    }

    #[test]
    fn random_rectangular_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let a = DMatrix::from_fn(20, 12, |_, _| rng.gen_range(-1.0..1.0f64));
            let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let oracle = dense_lstsq(&a, &b);
            let res = cg_normal_equations(
                &DenseOp(a),
                &b,
                &vec![0.0; 12],
                &CgOptions {
                    max_iters: 500,
                    rel_tol: 1e-13,
                },
            )
            .unwrap();
            for (got, want) in res.x.iter().zip(&oracle) {
                assert!((got - want).abs() < 1e-8, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = DenseOp(DMatrix::identity(3, 3));
        assert!(matches!(
            cg_normal_equations(&a, &[1.0, 2.0], &[0.0; 3], &CgOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cg_normal_equations(&a, &[1.0; 3], &[0.0; 2], &CgOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residual_is_monotone_on_operator_stack() {
        // run CG step-by-step via max_iters and check |Ax - b| never grows
        let mask = Mask::full(8, 8);
        let k = Downsampler::new(2, &mask).unwrap();
        let g = GradientOperator::new(&mask).unwrap();
        let stack = StackedOperator::new(vec![(1.0, &k), (0.3, &g)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..stack.output_len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut prev = f64::INFINITY;
        for iters in 1..20 {
            let res = cg_normal_equations(
                &stack,
                &b,
                &vec![0.0; stack.input_len()],
                &CgOptions {
                    max_iters: iters,
                    rel_tol: 1e-16,
                },
            )
            .unwrap();
            let mut ax = vec![0.0; stack.output_len()];
            stack.apply(&res.x, &mut ax);
            let misfit = norm(
                &ax.iter()
                    .zip(&b)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            );
            assert!(misfit <= prev + 1e-12, "misfit grew: {misfit} > {prev}");
            prev = misfit;
        }
    }
}
