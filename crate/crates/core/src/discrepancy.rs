//! Minimum-discrepancy projection onto the fixed-rank manifold:
//!
//! ```text
//! min_{rank(M) = m}  vec(M̂ − M)ᵀ Γ̂⁻¹ vec(M̂ − M)
//! ```
//!
//! solved by alternating least squares over `M = A Bᵀ` with `A` an
//! orthonormal `p×m` frame and `B` an unconstrained `H×m` matrix. The weight
//! enters through a factor `G` with `GᵀG = Γ̂⁻¹`, so both half-steps are
//! ordinary least-squares problems in whitened coordinates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{svd_split, vec_of};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub max_outer_iterations: usize,
    /// Relative objective decrease below which iteration stops.
    pub objective_tolerance: f64,
    /// Random restarts tried in addition to the SVD warm start.
    pub restarts: usize,
    pub restart_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_outer_iterations: 500,
            objective_tolerance: 1e-10,
            restarts: 2,
            restart_seed: 0x5eed,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || !(self.objective_tolerance > 0.0) {
            return Err(Error::InvalidInput(
                "optimizer iterations and tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A point `A Bᵀ` on the rank-`m` manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredPoint {
    /// `p×m`, orthonormal columns.
    pub a: DMatrix<f64>,
    /// `H×m`.
    pub b: DMatrix<f64>,
    pub objective: f64,
    /// Objective after initialization and after every outer iteration.
    pub history: Vec<f64>,
    /// Objective of the SVD warm start (after its initial `B` solve).
    pub warm_start_objective: f64,
    /// Index of the winning start: 0 is the SVD warm start.
    pub start_index: usize,
}

impl FactoredPoint {
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.a * self.b.transpose()
    }

    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

struct Problem<'a> {
    target: DVector<f64>,
    g: &'a DMatrix<f64>,
    p: usize,
    h: usize,
    m: usize,
}

struct Run {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    history: Vec<f64>,
    converged: bool,
}

pub fn solve(
    m_hat: &DMatrix<f64>,
    gamma_inv_factor: &DMatrix<f64>,
    m: usize,
    cfg: &OptimizerConfig,
) -> Result<FactoredPoint> {
    cfg.validate()?;
    let (p, h) = m_hat.shape();
    let dim = p * h;
    if gamma_inv_factor.shape() != (dim, dim) {
        return Err(Error::InvalidInput(format!(
            "weight factor is {}x{}, expected {dim}x{dim}",
            gamma_inv_factor.nrows(),
            gamma_inv_factor.ncols()
        )));
    }
    if m == 0 || m > p.min(h) {
        return Err(Error::InvalidInput(format!(
            "rank {m} outside 1..={}",
            p.min(h)
        )));
    }
    if gamma_inv_factor.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("weight factor is not finite".into()));
    }

    let problem = Problem {
        target: gamma_inv_factor * vec_of(m_hat),
        g: gamma_inv_factor,
        p,
        h,
        m,
    };

    let warm = svd_split(m_hat, m)?.u.columns(0, m).into_owned();
    let mut runs = vec![problem.run(warm, cfg)?];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.restart_seed);
    for _ in 0..cfg.restarts {
        let raw = DMatrix::from_fn(p, m, |_, _| StandardNormal.sample(&mut rng));
        let start = polar_factor(&raw).0;
        runs.push(problem.run(start, cfg)?);
    }

    let warm_start_objective = runs[0].history[0];
    // Lowest objective wins; ties go to the earliest start.
    let mut best = 0;
    for (i, run) in runs.iter().enumerate().skip(1) {
        if run.objective() < runs[best].objective() {
            best = i;
        }
    }
    let run = runs.swap_remove(best);
    if !run.converged {
        return Err(Error::OptimizerDidNotConverge {
            gradient_norm: problem.frame_gradient_norm(&run.a, &run.b),
            iterations: run.history.len() - 1,
        });
    }
    Ok(FactoredPoint {
        objective: run.objective(),
        a: run.a,
        b: run.b,
        history: run.history,
        warm_start_objective,
        start_index: best,
    })
}

impl Run {
    fn objective(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }
}

impl Problem<'_> {
    fn run(&self, a0: DMatrix<f64>, cfg: &OptimizerConfig) -> Result<Run> {
        let mut a = a0;
        let mut b = self.solve_b(&a);
        let mut f = self.objective(&a, &b)?;
        let mut history = vec![f];
        let scale = self.target.norm_squared();
        let exact = |f: f64| f <= 1e-28 * scale;
        if exact(f) {
            return Ok(Run {
                a,
                b,
                history,
                converged: true,
            });
        }

        let mut last_decrease = f64::INFINITY;
        for _ in 0..cfg.max_outer_iterations {
            let a_free = self.solve_a(&b);
            let (frame, stretch) = polar_factor(&a_free);
            // A_free Bᵀ = frame (B · stretch)ᵀ; stretch is symmetric.
            let b_tmp = &b * &stretch;
            let f_mid = self.objective(&frame, &b_tmp)?;
            let (a_new, b_new) = if f_mid <= f {
                (frame, b_tmp)
            } else {
                (a.clone(), b.clone())
            };
            let b_next = self.solve_b(&a_new);
            let f_next = self.objective(&a_new, &b_next)?;
            let (b_next, f_next) = if f_next <= f_mid.min(f) {
                (b_next, f_next)
            } else {
                (b_new, f_mid.min(f))
            };
            a = a_new;
            b = b_next;
            last_decrease = (f - f_next) / f;
            f = f_next;
            history.push(f);
            if exact(f) || last_decrease < cfg.objective_tolerance {
                return Ok(Run {
                    a,
                    b,
                    history,
                    converged: true,
                });
            }
        }
        Ok(Run {
            a,
            b,
            history,
            converged: last_decrease <= 100.0 * cfg.objective_tolerance,
        })
    }

    fn objective(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        let fitted = self.g * vec_of(&(a * b.transpose()));
        let f = (&self.target - fitted).norm_squared();
        if !f.is_finite() {
            return Err(Error::NumericalBreakdown(
                "weighted discrepancy became non-finite".into(),
            ));
        }
        Ok(f)
    }

    /// Optimal `B` for a fixed frame: `vec(A Bᵀ) = (I_H ⊗ A) vec(Bᵀ)`.
    fn solve_b(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let (p, h, m) = (self.p, self.h, self.m);
        let mut design = DMatrix::zeros(p * h, m * h);
        for col in 0..h {
            for k in 0..m {
                // Column (col, k) of I_H ⊗ A is a[:, k] placed in block `col`.
                let j = col * m + k;
                let mut v = DVector::zeros(p * h);
                v.rows_mut(col * p, p).copy_from(&a.column(k));
                design.set_column(j, &(self.g * v));
            }
        }
        let x = least_squares(&design, &self.target);
        // x = vec(Bᵀ) with Bᵀ of shape m×H.
        DMatrix::from_column_slice(m, h, x.as_slice()).transpose()
    }

    /// Unconstrained optimal `A` for fixed `B`: `vec(A Bᵀ) = (B ⊗ I_p) vec(A)`.
    fn solve_a(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let (p, h, m) = (self.p, self.h, self.m);
        let mut design = DMatrix::zeros(p * h, p * m);
        for k in 0..m {
            for i in 0..p {
                let j = k * p + i;
                let mut v = DVector::zeros(p * h);
                for col in 0..h {
                    v[col * p + i] = b[(col, k)];
                }
                design.set_column(j, &(self.g * v));
            }
        }
        let x = least_squares(&design, &self.target);
        DMatrix::from_column_slice(p, m, x.as_slice())
    }

    /// Norm of the Riemannian gradient with respect to the frame `A`.
    fn frame_gradient_norm(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let residual = &self.target - self.g * vec_of(&(a * b.transpose()));
        // d f / d vec(M) = −2 Gᵀ r; d f / dA = (d f / dM) B.
        let grad_m = DMatrix::from_column_slice(
            self.p,
            self.h,
            (self.g.transpose() * residual * -2.0).as_slice(),
        );
        let grad_a = grad_m * b;
        let sym = (a.transpose() * &grad_a + grad_a.transpose() * a) * 0.5;
        (grad_a - a * sym).norm()
    }
}

/// Minimum-norm least-squares solution through the SVD.
fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = design.clone().svd(true, true);
    let lead = svd.singular_values.max();
    let eps = (1e-12 * lead).max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps)
        .unwrap_or_else(|_| DVector::zeros(design.ncols()))
}

/// Polar decomposition `X = Q S` of a tall matrix: `Q` has orthonormal
/// columns and `S` is symmetric positive semi-definite.
pub fn polar_factor(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let q = &u * &vt;
    let s = vt.transpose() * DMatrix::from_diagonal(&svd.singular_values) * &vt;
    (q, s)
}
