//! Least-squares constrained estimation on a manifold and the constrained
//! (CS) bootstrap.
//!
//! Given an unconstrained estimator `θ̂`, the constrained estimator is the
//! `Â`-weighted projection `θ̂_c` of `θ̂` onto the manifold and the test
//! statistic is `Λ̂ = n (θ̂ − θ̂_c)ᵀ B̂ (θ̂ − θ̂_c)`. The bootstrap recentres the
//! resampled fluctuation at the constrained estimate,
//! `θ*₀ = θ̂_c + n^{-1/2} W*`, so replicate statistics follow the null law
//! whether or not the null holds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::order_statistic;
use crate::discrepancy::{self, OptimizerConfig};
use crate::error::{Error, Result};
use crate::linalg::{nearest_rank_frobenius, sqrt_psd, symmetrize, unvec, vec_of, MAX_CONDITION};
use crate::rng::stream;

/// A smooth constraint set in `ℝ^p` with a weighted metric projection.
pub trait Manifold: Sync {
    fn ambient_dim(&self) -> usize;

    fn codim(&self) -> usize;

    /// `argmin_{x ∈ manifold} (θ − x)ᵀ A (θ − x)`.
    fn project(&self, theta: &DVector<f64>, weight: &DMatrix<f64>) -> Result<DVector<f64>>;

    /// Explicit local defining function, when one is known.
    fn constraint_oracle(&self) -> Option<&dyn ConstraintOracle> {
        None
    }
}

/// `g: ℝ^p → ℝ^q` with the manifold as its zero set and Jacobian `J_g`
/// (`q×p`).
pub trait ConstraintOracle {
    fn value(&self, theta: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64>;
}

/// The unit sphere `{‖θ‖ = 1}`. In dimension one it is the two-point set
/// `{θ² = 1}` (the "circle" of the scalar example).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSphere {
    dim: usize,
}

impl UnitSphere {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "sphere dimension must be positive");
        UnitSphere { dim }
    }

    pub fn circle() -> Self {
        UnitSphere { dim: 1 }
    }
}

impl Manifold for UnitSphere {
    fn ambient_dim(&self) -> usize {
        self.dim
    }

    fn codim(&self) -> usize {
        1
    }

    fn project(&self, theta: &DVector<f64>, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_vector(theta, self.dim)?;
        check_weight(weight, self.dim)?;
        let first_axis = || {
            let mut e = DVector::zeros(self.dim);
            e[0] = 1.0;
            e
        };
        if is_isotropic(weight) {
            let norm = theta.norm();
            // θ = 0 is equidistant from every point; +e₁ is the convention.
            return Ok(if norm == 0.0 { first_axis() } else { theta / norm });
        }
        // Stationarity: A(x − θ) + μx = 0, so x(μ) = (A + μI)⁻¹Aθ with the
        // multiplier μ > −λ_min(A) fixed by ‖x(μ)‖ = 1.
        let eig = SymmetricEigen::new(symmetrize(weight));
        let c = eig.eigenvectors.transpose() * (weight * theta);
        let lam = &eig.eigenvalues;
        let lmin = lam.min();
        let norm_at = |mu: f64| -> f64 {
            c.iter()
                .zip(lam.iter())
                .map(|(ci, li)| (ci / (li + mu)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut lo = -lmin;
        let mut hi = c.norm() - lmin + 1.0;
        let lo_norm = {
            let eps = 1e-14 * lam.amax().max(1.0);
            norm_at(lo + eps)
        };
        if !(lo_norm > 1.0) {
            // Hard case: Aθ has no component along the smallest eigenvector.
            let jmin = lam.imin();
            let mut y = DVector::zeros(self.dim);
            for j in 0..self.dim {
                if j != jmin {
                    y[j] = c[j] / (lam[j] - lmin);
                }
            }
            let t = (1.0 - y.norm_squared()).max(0.0).sqrt();
            y[jmin] = t;
            let x = &eig.eigenvectors * y;
            return Ok(if x.norm() == 0.0 { first_axis() } else { x.normalize() });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_at(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        let y = DVector::from_fn(self.dim, |j, _| c[j] / (lam[j] + mu));
        Ok((&eig.eigenvectors * y).normalize())
    }

    fn constraint_oracle(&self) -> Option<&dyn ConstraintOracle> {
        Some(self)
    }
}

impl ConstraintOracle for UnitSphere {
    fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, theta.norm_squared() - 1.0)
    }

    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, self.dim, (theta * 2.0).as_slice())
    }
}

/// The single point `{μ}`: projection is constant, and the constrained
/// statistic with `Â = B̂ = γ̂⁻¹` is the score statistic for `θ₀ = μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointManifold {
    pub point: DVector<f64>,
}

impl Manifold for PointManifold {
    fn ambient_dim(&self) -> usize {
        self.point.len()
    }

    fn codim(&self) -> usize {
        self.point.len()
    }

    fn project(&self, theta: &DVector<f64>, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_vector(theta, self.point.len())?;
        check_weight(weight, self.point.len())?;
        Ok(self.point.clone())
    }

    fn constraint_oracle(&self) -> Option<&dyn ConstraintOracle> {
        Some(self)
    }
}

impl ConstraintOracle for PointManifold {
    fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta - &self.point
    }

    fn jacobian(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.point.len(), self.point.len())
    }
}

/// `{vec(M) : rank(M) = m}` for `rows×cols` matrices. An isotropic weight
/// gives the Eckart–Young truncation; any other weight goes through the
/// alternating minimum-discrepancy solver with `G = A^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRankManifold {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub optimizer: OptimizerConfig,
}

impl FixedRankManifold {
    pub fn new(rows: usize, cols: usize, rank: usize) -> Self {
        FixedRankManifold {
            rows,
            cols,
            rank,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl Manifold for FixedRankManifold {
    fn ambient_dim(&self) -> usize {
        self.rows * self.cols
    }

    fn codim(&self) -> usize {
        (self.rows - self.rank) * (self.cols - self.rank)
    }

    fn project(&self, theta: &DVector<f64>, weight: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_vector(theta, self.ambient_dim())?;
        check_weight(weight, self.ambient_dim())?;
        let m_hat = unvec(theta, self.rows, self.cols);
        if self.rank == 0 {
            return Ok(DVector::zeros(theta.len()));
        }
        if is_isotropic(weight) {
            return Ok(vec_of(&nearest_rank_frobenius(&m_hat, self.rank)?.0));
        }
        let g = sqrt_psd(weight);
        let fit = discrepancy::solve(&m_hat, &g, self.rank, &self.optimizer)?;
        Ok(vec_of(&fit.matrix()))
    }
}

/// `(θ̂_c, Λ̂)` for the `a`-weighted projection and `b`-weighted statistic.
pub fn constrained_statistic(
    theta_hat: &DVector<f64>,
    manifold: &dyn Manifold,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n: usize,
) -> Result<(DVector<f64>, f64)> {
    check_positive_definite(a)?;
    check_weight(b, manifold.ambient_dim())?;
    let theta_c = manifold.project(theta_hat, a)?;
    let lambda = quadratic_form(n, &(theta_hat - &theta_c), b);
    Ok((theta_c, lambda))
}

fn quadratic_form(n: usize, d: &DVector<f64>, b: &DMatrix<f64>) -> f64 {
    (n as f64 * d.dot(&(b * d))).max(0.0)
}

/// One bootstrap draw: the fluctuation `W*` and, optionally, replicate
/// weight matrices recomputed from the resample (`None` reuses `Â`/`B̂`).
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub w: DVector<f64>,
    pub a: Option<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
}

/// Produces `W*` whose conditional law mimics that of `√n (θ̂ − θ₀)`.
pub trait ReplicateSampler: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Perturbation>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapSettings {
    pub replicates: usize,
    /// Test size; the quantile is taken at level `1 − alpha`.
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("bootstrap needs at least one replicate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

pub struct CsBootstrapConfig<'a> {
    pub settings: BootstrapSettings,
    pub sampler: &'a dyn ReplicateSampler,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsBootstrapOutcome {
    pub statistic: f64,
    /// Successful replicate values in replicate-index order.
    pub replicate_values: Vec<f64>,
    pub failures: usize,
    pub quantile: f64,
    pub p_value: f64,
    pub reject: bool,
}

impl CsBootstrapOutcome {
    /// Builds the decision from replicate values. The quantile is the
    /// `⌈B(1 − alpha)⌉`-th order statistic over the `B` successful replicates.
    pub fn from_replicates(
        statistic: f64,
        replicate_values: Vec<f64>,
        failures: usize,
        alpha: f64,
    ) -> Result<Self> {
        if replicate_values.is_empty() {
            return Err(Error::BootstrapUnstable {
                failed: failures,
                total: failures,
            });
        }
        let mut sorted = replicate_values.clone();
        let quantile = order_statistic(&mut sorted, 1.0 - alpha);
        let exceed = replicate_values.iter().filter(|&&v| v >= statistic).count();
        Ok(CsBootstrapOutcome {
            statistic,
            p_value: exceed as f64 / replicate_values.len() as f64,
            reject: statistic > quantile,
            quantile,
            replicate_values,
            failures,
        })
    }

    pub fn quantile_at(&self, alpha: f64) -> f64 {
        let mut sorted = self.replicate_values.clone();
        order_statistic(&mut sorted, 1.0 - alpha)
    }
}

/// Evaluates `replicate(b, rng_b)` for `b = 0..B` on independent streams,
/// in parallel, and aggregates the results. Numerical failures are excluded
/// and counted; more than 1% of them aborts with
/// [`Error::BootstrapUnstable`].
pub fn run_replicates<F>(
    settings: &BootstrapSettings,
    statistic: f64,
    replicate: F,
) -> Result<CsBootstrapOutcome>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    settings.validate()?;
    let results: Vec<Result<f64>> = (0..settings.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(settings.seed, b as u64);
            replicate(b, &mut rng)
        })
        .collect();

    let mut values = Vec::with_capacity(results.len());
    let mut failures = 0;
    for r in results {
        match r {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => failures += 1,
            Err(e) if e.is_numerical() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if failures * 100 > settings.replicates {
        return Err(Error::BootstrapUnstable {
            failed: failures,
            total: settings.replicates,
        });
    }
    CsBootstrapOutcome::from_replicates(statistic, values, failures, settings.alpha)
}

pub fn cs_bootstrap(
    theta_hat: &DVector<f64>,
    manifold: &dyn Manifold,
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    n: usize,
    cfg: &CsBootstrapConfig<'_>,
) -> Result<CsBootstrapOutcome> {
    let (theta_c, statistic) = constrained_statistic(theta_hat, manifold, a_hat, b_hat, n)?;
    let root_n = (n as f64).sqrt();
    run_replicates(&cfg.settings, statistic, |_, rng| {
        let draw = cfg.sampler.draw(rng)?;
        if draw.w.len() != theta_c.len() || draw.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("sampler produced an invalid draw".into()));
        }
        let theta0 = &theta_c + draw.w / root_n;
        let a = draw.a.as_ref().unwrap_or(a_hat);
        let b = draw.b.as_ref().unwrap_or(b_hat);
        let theta_star_c = manifold.project(&theta0, a)?;
        Ok(quadratic_form(n, &(theta0 - theta_star_c), b))
    })
}

/// Distance between the projection of `θ_c + δ` and its first-order
/// expansion `θ_c + (I − P) δ`, with
/// `P = A⁻¹Jᵀ(J A⁻¹ Jᵀ)⁻¹J` evaluated at `θ_c`.
pub fn linearization_residual(
    manifold: &dyn Manifold,
    theta_c: &DVector<f64>,
    delta: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<f64> {
    let oracle = manifold
        .constraint_oracle()
        .ok_or_else(|| Error::InvalidInput("manifold has no constraint oracle".into()))?;
    let p = manifold.ambient_dim();
    check_vector(theta_c, p)?;
    check_vector(delta, p)?;
    check_positive_definite(a)?;
    let j = oracle.jacobian(theta_c);
    let sv = j.clone().svd(false, false).singular_values;
    if sv.len() < j.nrows() || sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
        return Err(Error::NonsingularityViolated);
    }
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalBreakdown("weight is not invertible".into()))?;
    let inner = (&j * &a_inv * j.transpose())
        .try_inverse()
        .ok_or(Error::NonsingularityViolated)?;
    let proj = &a_inv * j.transpose() * inner * &j;
    let first_order = (DMatrix::identity(p, p) - proj) * delta;
    let projected = manifold.project(&(theta_c + delta), a)?;
    Ok((projected - theta_c - first_order).norm())
}

/// Efron resampling of a scalar mean: `W* = √n (X̄* − X̄)` with
/// `A* = B* = 1/γ*`, `γ*` the resample variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanResampler {
    data: Vec<f64>,
    mean: f64,
}

impl MeanResampler {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() < 2 || data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("need at least two finite observations".into()));
        }
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        Ok(MeanResampler { data, mean })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Empirical variance with divisor `n`.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        self.data.iter().map(|x| (x - self.mean).powi(2)).sum::<f64>() / n
    }
}

impl ReplicateSampler for MeanResampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Perturbation> {
        let n = self.data.len();
        let sample: Vec<f64> = (0..n).map(|_| self.data[rng.random_range(0..n)]).collect();
        let mean = sample.iter().sum::<f64>() / n as f64;
        let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(Error::NumericalBreakdown("degenerate resample".into()));
        }
        let weight = DMatrix::from_element(1, 1, 1.0 / var);
        Ok(Perturbation {
            w: DVector::from_element(1, (n as f64).sqrt() * (mean - self.mean)),
            a: Some(weight.clone()),
            b: Some(weight),
        })
    }
}

fn is_isotropic(weight: &DMatrix<f64>) -> bool {
    let c = weight[(0, 0)];
    let tol = 1e-14 * c.abs();
    weight.iter().enumerate().all(|(idx, &v)| {
        let (i, j) = (idx % weight.nrows(), idx / weight.nrows());
        if i == j {
            (v - c).abs() <= tol
        } else {
            v.abs() <= tol
        }
    })
}

fn check_vector(theta: &DVector<f64>, dim: usize) -> Result<()> {
    if theta.len() != dim {
        return Err(Error::InvalidInput(format!(
            "parameter has length {}, manifold lives in dimension {dim}",
            theta.len()
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("parameter is not finite".into()));
    }
    Ok(())
}

fn check_weight(weight: &DMatrix<f64>, dim: usize) -> Result<()> {
    if weight.shape() != (dim, dim) {
        return Err(Error::InvalidInput(format!(
            "weight is {}x{}, expected {dim}x{dim}",
            weight.nrows(),
            weight.ncols()
        )));
    }
    Ok(())
}

fn check_positive_definite(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidInput("weight must be square".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let (lmax, lmin) = (eig.eigenvalues.max(), eig.eigenvalues.min());
    if !(lmin > 0.0 && lmax / lmin <= MAX_CONDITION) {
        return Err(Error::InvalidInput(
            "projection weight must be positive definite".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn one() -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    struct ZeroSampler(usize);

    impl ReplicateSampler for ZeroSampler {
        fn draw(&self, _rng: &mut ChaCha8Rng) -> Result<Perturbation> {
            Ok(Perturbation {
                w: DVector::zeros(self.0),
                a: None,
                b: None,
            })
        }
    }

    struct GaussianSampler(usize);

    impl ReplicateSampler for GaussianSampler {
        fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Perturbation> {
            Ok(Perturbation {
                w: DVector::from_fn(self.0, |_, _| StandardNormal.sample(rng)),
                a: None,
                b: None,
            })
        }
    }

    #[test]
    fn circle_example() {
        let (theta_c, lambda) =
            constrained_statistic(&scalar(0.3), &UnitSphere::circle(), &one(), &one(), 100)
                .unwrap();
        assert_eq!(theta_c[0], 1.0);
        assert!((lambda - 49.0).abs() < 1e-12);
        let (theta_c, _) =
            constrained_statistic(&scalar(-2.0), &UnitSphere::circle(), &one(), &one(), 100)
                .unwrap();
        assert_eq!(theta_c[0], -1.0);
    }

    #[test]
    fn circle_tie_break_at_origin() {
        let x = UnitSphere::circle().project(&scalar(0.0), &one()).unwrap();
        assert_eq!(x[0], 1.0);
    }

    #[test]
    fn on_manifold_point_has_zero_statistic() {
        let (_, lambda) =
            constrained_statistic(&scalar(-1.0), &UnitSphere::circle(), &one(), &one(), 50)
                .unwrap();
        assert_eq!(lambda, 0.0);
    }

    #[test]
    fn point_manifold_gives_score_statistic() {
        let gamma: f64 = 2.5;
        let w = DMatrix::from_element(1, 1, 1.0 / gamma);
        let manifold = PointManifold { point: scalar(1.0) };
        let (_, lambda) = constrained_statistic(&scalar(1.4), &manifold, &w, &w, 40).unwrap();
        assert!((lambda - 40.0 * 0.16 / gamma).abs() < 1e-12);
    }

    #[test]
    fn weighted_sphere_projection_is_optimal_and_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sphere = UnitSphere::new(3);
        for _ in 0..20 {
            let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let a = &b * b.transpose() + DMatrix::identity(3, 3) * 0.2;
            let theta = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let x = sphere.project(&theta, &a).unwrap();
            let g = sphere.value(&x)[0];
            assert!(g.abs() <= 1e-8 * (1.0 + theta.norm()));
            // No sampled point on the sphere does better.
            let cost = |y: &DVector<f64>| (theta.clone() - y).dot(&(&a * (theta.clone() - y)));
            let best = cost(&x);
            for _ in 0..2000 {
                let y = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng)).normalize();
                assert!(cost(&y) >= best - 1e-9);
            }
            // Idempotent on the manifold.
            let again = sphere.project(&x, &a).unwrap();
            assert!((again - &x).amax() < 1e-9);
        }
    }

    #[test]
    fn fixed_rank_frobenius_projection_matches_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let manifold = FixedRankManifold::new(3, 4, 1);
        let m = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = manifold.project(&vec_of(&m), &DMatrix::identity(12, 12)).unwrap();
        let (want, _) = nearest_rank_frobenius(&m, 1).unwrap();
        assert!((x - vec_of(&want)).amax() < 1e-9);
        let weighted = DMatrix::identity(12, 12) * 3.0;
        let y = manifold.project(&vec_of(&want), &weighted).unwrap();
        assert!((y - vec_of(&want)).amax() < 1e-9);
    }

    #[test]
    fn degenerate_sampler_gives_zero_replicates() {
        let cfg = CsBootstrapConfig {
            settings: BootstrapSettings {
                replicates: 50,
                alpha: 0.05,
                seed: 1,
            },
            sampler: &ZeroSampler(1),
        };
        let out =
            cs_bootstrap(&scalar(0.5), &UnitSphere::circle(), &one(), &one(), 10, &cfg).unwrap();
        assert!(out.replicate_values.iter().all(|v| *v == 0.0));
        assert_eq!(out.quantile, 0.0);
        assert!(out.reject);
        let out =
            cs_bootstrap(&scalar(1.0), &UnitSphere::circle(), &one(), &one(), 10, &cfg).unwrap();
        assert!(!out.reject);
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn quantile_is_the_order_statistic() {
        let values: Vec<f64> = (1..=1000).rev().map(f64::from).collect();
        let out = CsBootstrapOutcome::from_replicates(955.5, values, 0, 0.05).unwrap();
        assert_eq!(out.quantile, 950.0);
        assert!(out.reject);
        assert!((out.p_value - 45.0 / 1000.0).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_is_deterministic_and_quantiles_monotone() {
        let cfg = CsBootstrapConfig {
            settings: BootstrapSettings {
                replicates: 400,
                alpha: 0.05,
                seed: 99,
            },
            sampler: &GaussianSampler(3),
        };
        let theta = DVector::from_vec(vec![0.9, 0.2, -0.1]);
        let eye = DMatrix::identity(3, 3);
        let sphere = UnitSphere::new(3);
        let a = cs_bootstrap(&theta, &sphere, &eye, &eye, 100, &cfg).unwrap();
        let b = cs_bootstrap(&theta, &sphere, &eye, &eye, 100, &cfg).unwrap();
        assert_eq!(a, b);
        let mut last = f64::NEG_INFINITY;
        for alpha in [0.5, 0.2, 0.1, 0.05, 0.01] {
            let q = a.quantile_at(alpha);
            assert!(q >= last);
            last = q;
        }
        assert!(a.p_value >= 0.0 && a.p_value <= 1.0);
        assert_eq!(a.reject, a.statistic > a.quantile);
    }

    #[test]
    fn failed_replicates_are_budgeted() {
        let settings = BootstrapSettings {
            replicates: 200,
            alpha: 0.1,
            seed: 5,
        };
        let out = run_replicates(&settings, 1.0, |b, _| {
            if b == 7 {
                Err(Error::NumericalBreakdown("x".into()))
            } else {
                Ok(b as f64)
            }
        })
        .unwrap();
        assert_eq!(out.failures, 1);
        assert_eq!(out.replicate_values.len(), 199);
        let err = run_replicates(&settings, 1.0, |b, _| {
            if b % 50 == 0 {
                Err(Error::NumericalBreakdown("x".into()))
            } else {
                Ok(1.0)
            }
        })
        .unwrap_err();
        assert_eq!(err, Error::BootstrapUnstable { failed: 4, total: 200 });
    }

    #[test]
    fn h1_replicates_obey_tightness_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100;
        let data: Vec<f64> = (0..n)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 3.0 + z })
            .collect();
        let sampler = MeanResampler::new(data).unwrap();
        let gamma_inv = DMatrix::from_element(1, 1, 1.0 / sampler.variance());
        let theta_hat = scalar(sampler.mean());
        let circle = UnitSphere::circle();
        let (theta_c, _) =
            constrained_statistic(&theta_hat, &circle, &gamma_inv, &gamma_inv, n).unwrap();
        for b in 0..1000u64 {
            let mut rng = stream(77, b);
            let draw = sampler.draw(&mut rng).unwrap();
            let theta0 = &theta_c + &draw.w / (n as f64).sqrt();
            let a = draw.a.unwrap();
            let star_c = circle.project(&theta0, &a).unwrap();
            let lam = quadratic_form(n, &(&theta0 - star_c), &a);
            let bound = n as f64 * a[(0, 0)] * (theta_c[0] - theta0[0]).powi(2);
            assert!(lam <= bound + 1e-12);
        }
    }

    #[test]
    fn circle_linearization_is_exact() {
        let circle = UnitSphere::circle();
        for t in [-0.5, -0.1, 0.05, 0.3] {
            let r = linearization_residual(&circle, &scalar(1.0), &scalar(t), &one()).unwrap();
            assert!(r.abs() < 1e-15);
        }
    }

    #[test]
    fn sphere_linearization_residuals() {
        let sphere = UnitSphere::new(3);
        let c = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let eye = DMatrix::identity(3, 3);
        for t in [0.1, 0.05, 0.01] {
            let tangential = DVector::from_vec(vec![0.0, t, 0.0]);
            let r = linearization_residual(&sphere, &c, &tangential, &eye).unwrap();
            assert!(r <= 2.0 * t * t, "t={t}: {r}");
            let normal = DVector::from_vec(vec![t, 0.0, 0.0]);
            let r = linearization_residual(&sphere, &c, &normal, &eye).unwrap();
            assert!(r < 1e-15);
        }
    }

    #[test]
    fn linearization_needs_an_oracle_and_full_rank_jacobian() {
        let m = FixedRankManifold::new(2, 2, 1);
        let z = DVector::zeros(4);
        assert!(linearization_residual(&m, &z, &z, &DMatrix::identity(4, 4)).is_err());
        let sphere = UnitSphere::new(2);
        let origin = DVector::zeros(2);
        assert_eq!(
            linearization_residual(&sphere, &origin, &origin, &DMatrix::identity(2, 2)),
            Err(Error::NonsingularityViolated)
        );
    }
}
