//! Dense linear algebra shared by every statistic: ordered SVD with a
//! deterministic sign convention, singular-subspace projectors, the
//! Eckart–Young truncation, Kronecker sandwiches and a tolerance-controlled
//! pseudo-inverse.
//!
//! Vectorization is column-major everywhere: `vec(X)` stacks the columns of
//! `X`, so that `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative gap below which two consecutive singular values count as tied.
pub const SPECTRAL_GAP_TOL: f64 = 1e-10;
/// Default relative eigenvalue cutoff of [`pseudo_inverse`].
pub const PINV_REL_TOL: f64 = 1e-9;
/// Largest admissible condition number for a covariance that must be inverted.
pub const MAX_CONDITION: f64 = 1e12;

/// An estimator `M̂` of a `p×H` matrix together with the estimated asymptotic
/// covariance `Γ̂` of `vec(M̂)` and the sample size it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedMatrix {
    m_hat: DMatrix<f64>,
    gamma_hat: DMatrix<f64>,
    n: usize,
}

impl EstimatedMatrix {
    pub fn new(m_hat: DMatrix<f64>, gamma_hat: DMatrix<f64>, n: usize) -> Result<Self> {
        let (p, h) = m_hat.shape();
        if p == 0 || h == 0 {
            return Err(Error::InvalidInput("estimated matrix is empty".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("sample size {n} < 2")));
        }
        if gamma_hat.shape() != (p * h, p * h) {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{}, expected {}x{}",
                gamma_hat.nrows(),
                gamma_hat.ncols(),
                p * h,
                p * h
            )));
        }
        check_finite(&m_hat, "estimated matrix")?;
        check_finite(&gamma_hat, "covariance")?;
        let scale = gamma_hat.amax().max(f64::MIN_POSITIVE);
        let asym = (&gamma_hat - gamma_hat.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let gamma_hat = symmetrize(&gamma_hat);
        let eig = SymmetricEigen::new(gamma_hat.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        if lmin < -1e-8 * lmax.max(0.0) {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive semi-definite (eigenvalue {lmin:e})"
            )));
        }
        Ok(EstimatedMatrix { m_hat, gamma_hat, n })
    }

    pub fn m_hat(&self) -> &DMatrix<f64> {
        &self.m_hat
    }

    pub fn gamma_hat(&self) -> &DMatrix<f64> {
        &self.gamma_hat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.m_hat.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m_hat.ncols()
    }

    /// Largest testable rank plus one, `min(p, H)`.
    pub fn max_rank(&self) -> usize {
        self.rows().min(self.cols())
    }

    /// Same covariance and sample size, different point estimate.
    pub(crate) fn with_matrix(&self, m_hat: DMatrix<f64>) -> Self {
        EstimatedMatrix {
            m_hat,
            gamma_hat: self.gamma_hat.clone(),
            n: self.n,
        }
    }

    /// Constructor for internally generated replicates; skips validation.
    pub(crate) fn from_parts_unchecked(
        m_hat: DMatrix<f64>,
        gamma_hat: DMatrix<f64>,
        n: usize,
    ) -> Self {
        EstimatedMatrix { m_hat, gamma_hat, n }
    }
}

/// Thin SVD `M = U diag(λ) Vᵀ` with singular values in descending order and
/// a split index `m` separating retained from trailing directions.
///
/// `u` is `p×r` and `v` is `H×r` with `r = min(p, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdParts {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
    pub split: usize,
}

impl SvdParts {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.u.nrows(), self.u.ncols(), |i, j| {
            self.u[(i, j)] * self.singular_values[j]
        });
        scaled * self.v.transpose()
    }

    /// Sum of squared singular values past the split.
    pub fn trailing_energy(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.split)
            .map(|s| s * s)
            .sum()
    }

    fn check_gap(&self) -> Result<()> {
        let m = self.split;
        let r = self.singular_values.len();
        if m == 0 || m >= r {
            return Ok(());
        }
        let upper = self.singular_values[m - 1];
        let lower = self.singular_values[m];
        let lead = self.singular_values[0];
        if upper - lower <= SPECTRAL_GAP_TOL * lead {
            return Err(Error::DegenerateSpectrum {
                index: m - 1,
                upper,
                lower,
            });
        }
        Ok(())
    }
}

/// Orthogonal projectors onto the trailing left (`q1`, `p×p`) and right
/// (`q2`, `H×H`) singular subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorPair {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
}

impl ProjectorPair {
    /// Complementary projectors `P₁ = I − Q₁`, `P₂ = I − Q₂`.
    pub fn retained(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let p1 = DMatrix::identity(self.q1.nrows(), self.q1.ncols()) - &self.q1;
        let p2 = DMatrix::identity(self.q2.nrows(), self.q2.ncols()) - &self.q2;
        (p1, p2)
    }
}

pub fn svd_split(m_hat: &DMatrix<f64>, m: usize) -> Result<SvdParts> {
    let (p, h) = m_hat.shape();
    if m > p {
        return Err(Error::InvalidInput(format!("split {m} exceeds row count {p}")));
    }
    check_finite(m_hat, "matrix")?;
    let r = p.min(h);
    if r == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }

    let svd = m_hat.clone().svd(true, true);
    let u_raw = svd.u.expect("left singular vectors requested");
    let v_raw = svd.v_t.expect("right singular vectors requested").transpose();
    let s_raw = svd.singular_values;

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s_raw[b].total_cmp(&s_raw[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(p, r);
    let mut v = DMatrix::zeros(h, r);
    let mut s = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u_raw.column(src).into_owned();
        let mut vc = v_raw.column(src).into_owned();
        // Largest-magnitude entry of each left vector is made nonnegative;
        // ties go to the lowest index.
        let mut best = 0;
        for i in 1..p {
            if uc[i].abs() > uc[best].abs() {
                best = i;
            }
        }
        if uc[best] < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        u.set_column(dst, &uc);
        v.set_column(dst, &vc);
        s[dst] = s_raw[src].max(0.0);
    }

    Ok(SvdParts {
        u,
        singular_values: s,
        v,
        split: m,
    })
}

pub fn projectors(parts: &SvdParts) -> Result<ProjectorPair> {
    parts.check_gap()?;
    let m = parts.split.min(parts.singular_values.len());
    let (p, h) = (parts.rows(), parts.cols());
    let u1 = parts.u.columns(0, m);
    let v1 = parts.v.columns(0, m);
    let q1 = symmetrize(&(DMatrix::identity(p, p) - &u1 * u1.transpose()));
    let q2 = symmetrize(&(DMatrix::identity(h, h) - &v1 * v1.transpose()));
    Ok(ProjectorPair { q1, q2 })
}

/// Frobenius-nearest matrix of rank at most `m` (`P̂₁M̂P̂₂`) and the squared
/// distance to it, which equals the trailing singular energy.
pub fn nearest_rank_frobenius(m_hat: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, f64)> {
    let parts = svd_split(m_hat, m)?;
    parts.check_gap()?;
    Ok(truncate(&parts))
}

/// Truncated reconstruction from an already validated split.
pub(crate) fn truncate(parts: &SvdParts) -> (DMatrix<f64>, f64) {
    let m = parts.split.min(parts.singular_values.len());
    let (p, h) = (parts.rows(), parts.cols());
    let mut approx = DMatrix::zeros(p, h);
    for k in 0..m {
        let s = parts.singular_values[k];
        approx += s * parts.u.column(k) * parts.v.column(k).transpose();
    }
    (approx, parts.trailing_energy())
}

/// `(q2 ⊗ q1) Γ (q2 ⊗ q1)` computed block-wise, never forming the Kronecker
/// product.
pub fn sandwich(proj: &ProjectorPair, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = proj.q1.nrows();
    let h = proj.q2.nrows();
    let dim = p * h;
    if gamma.shape() != (dim, dim) {
        return Err(Error::InvalidInput(format!(
            "sandwich: covariance is {}x{}, projectors imply {dim}x{dim}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    // K Γ, then K (K Γ)ᵀ = K Γ K since both factors are symmetric.
    let left = apply_kron_columns(&proj.q1, &proj.q2, gamma);
    let both = apply_kron_columns(&proj.q1, &proj.q2, &left.transpose());
    Ok(symmetrize(&both))
}

/// Applies `q2 ⊗ q1` to every column of `x`: each column is reshaped to a
/// `p×H` matrix `X` and replaced by `vec(q1 X q2ᵀ)`.
pub fn apply_kron_columns(q1: &DMatrix<f64>, q2: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let p = q1.nrows();
    let h = q2.nrows();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let block = DMatrix::from_column_slice(p, h, x.column(c).as_slice());
        let mapped = q1 * block * q2.transpose();
        out.column_mut(c).copy_from_slice(mapped.as_slice());
    }
    out
}

/// Dense Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Moore–Penrose inverse of a symmetric matrix through its eigendecomposition.
/// Eigenvalues with magnitude at most `rel_tol` times the largest magnitude are
/// treated as zero. Returns the inverse and the number of retained
/// eigenvalues.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let k = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let largest = eig.eigenvalues.amax();
    if largest == 0.0 || !largest.is_finite() {
        return (DMatrix::zeros(k, k), 0);
    }
    let cutoff = rel_tol * largest;
    let mut rank = 0;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            rank += 1;
            scaled.column_mut(j).scale_mut(1.0 / lam);
        } else {
            scaled.column_mut(j).fill(0.0);
        }
    }
    let inv = scaled * eig.eigenvectors.transpose();
    (symmetrize(&inv), rank)
}

/// Symmetric inverse square root `Γ^{-1/2}` of a positive definite matrix,
/// rejecting matrices whose condition number exceeds `max_condition`.
pub fn inverse_sqrt(gamma: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(gamma));
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= max_condition) {
        return Err(Error::SingularGamma { condition });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / lam.sqrt());
    }
    Ok(symmetrize(&(scaled * eig.eigenvectors.transpose())))
}

/// Symmetric square root of a positive semi-definite matrix (negative
/// rounding noise is clipped to zero).
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(lam.max(0.0).sqrt());
    }
    symmetrize(&(scaled * eig.eigenvectors.transpose()))
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sym_eigenvalues_desc(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|x| !x.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(Error::InvalidInput(format!(
            "{what} has a non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}
