//! The three rank statistics. All share the form
//! `n ‖B̂ vec(M̂ − M̂_c)‖²` with `M̂_c` the rank-`m` matrix closest to `M̂` in
//! the `Â` metric:
//!
//! | statistic | `Â`      | `B̂`                                   |
//! |-----------|----------|----------------------------------------|
//! | Λ₁        | `I`      | `I`                                    |
//! | Λ₂        | `I`      | `[(Q̂₂ ⊗ Q̂₁) Γ̂ (Q̂₂ ⊗ Q̂₁)]^{+1/2}`      |
//! | Λ₃        | `Γ̂^{-1/2}` | `Γ̂^{-1/2}`                           |

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{self, OptimizerConfig};
use crate::error::{Error, Result};
use crate::linalg::{
    inverse_sqrt, projectors, pseudo_inverse, sandwich, svd_split, sym_eigenvalues_desc,
    truncate, vec_of, EstimatedMatrix, MAX_CONDITION, PINV_REL_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Lambda1,
    Lambda2,
    Lambda3,
}

impl StatKind {
    pub fn name(self) -> &'static str {
        match self {
            StatKind::Lambda1 => "lambda1",
            StatKind::Lambda2 => "lambda2",
            StatKind::Lambda3 => "lambda3",
        }
    }
}

impl std::str::FromStr for StatKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda1" | "1" => Ok(StatKind::Lambda1),
            "lambda2" | "2" => Ok(StatKind::Lambda2),
            "lambda3" | "3" => Ok(StatKind::Lambda3),
            other => Err(Error::InvalidInput(format!("unknown statistic '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatAux {
    /// Estimated weights of the weighted chi-squared limit (Λ₁), descending.
    Weights(Vec<f64>),
    /// Chi-squared degrees of freedom (Λ₂, Λ₃). `nominal` is `(p−m)(H−m)`;
    /// `effective_rank` is the retained rank of the sandwiched covariance
    /// (Λ₂ only).
    DegreesOfFreedom {
        df: usize,
        nominal: usize,
        effective_rank: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatValue {
    pub kind: StatKind,
    pub value: f64,
    pub m: usize,
    /// The rank-`m` matrix achieving the constrained minimum.
    pub constrained_matrix: DMatrix<f64>,
    pub aux: StatAux,
}

impl StatValue {
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.aux {
            StatAux::Weights(w) => Some(w),
            _ => None,
        }
    }

    pub fn degrees_of_freedom(&self) -> Option<usize> {
        match self.aux {
            StatAux::DegreesOfFreedom { df, .. } => Some(df),
            _ => None,
        }
    }
}

fn check_rank(est: &EstimatedMatrix, m: usize) -> Result<()> {
    if m >= est.max_rank() {
        return Err(Error::InvalidInput(format!(
            "tested rank {m} must be below min(p, H) = {}",
            est.max_rank()
        )));
    }
    Ok(())
}

pub fn compute(
    kind: StatKind,
    est: &EstimatedMatrix,
    m: usize,
    opt: &OptimizerConfig,
) -> Result<StatValue> {
    match kind {
        StatKind::Lambda1 => lambda1(est, m),
        StatKind::Lambda2 => lambda2(est, m),
        StatKind::Lambda3 => lambda3(est, m, opt),
    }
}

/// `n Σ_{k>m} λ̂ₖ²` alone, without projectors or weights.
pub fn lambda1_value(m_hat: &DMatrix<f64>, m: usize, n: usize) -> Result<f64> {
    Ok(n as f64 * svd_split(m_hat, m.min(m_hat.nrows()))?.trailing_energy())
}

pub fn lambda1(est: &EstimatedMatrix, m: usize) -> Result<StatValue> {
    check_rank(est, m)?;
    let parts = svd_split(est.m_hat(), m)?;
    let proj = projectors(&parts)?;
    let (constrained, residual) = truncate(&parts);
    let weights = sym_eigenvalues_desc(&sandwich(&proj, est.gamma_hat())?)
        .into_iter()
        .map(|w| w.max(0.0))
        .collect();
    Ok(StatValue {
        kind: StatKind::Lambda1,
        value: est.n() as f64 * residual,
        m,
        constrained_matrix: constrained,
        aux: StatAux::Weights(weights),
    })
}

pub fn lambda2(est: &EstimatedMatrix, m: usize) -> Result<StatValue> {
    check_rank(est, m)?;
    let parts = svd_split(est.m_hat(), m)?;
    let proj = projectors(&parts)?;
    let (constrained, _) = truncate(&parts);
    let trailing = &proj.q1 * est.m_hat() * &proj.q2;
    let v = vec_of(&trailing);
    let (pinv, effective_rank) = pseudo_inverse(&sandwich(&proj, est.gamma_hat())?, PINV_REL_TOL);
    let value = (est.n() as f64 * v.dot(&(&pinv * &v))).max(0.0);
    let nominal = (est.rows() - m) * (est.cols() - m);
    Ok(StatValue {
        kind: StatKind::Lambda2,
        value,
        m,
        constrained_matrix: constrained,
        aux: StatAux::DegreesOfFreedom {
            df: effective_rank.min(nominal),
            nominal,
            effective_rank: Some(effective_rank),
        },
    })
}

pub fn lambda3(est: &EstimatedMatrix, m: usize, opt: &OptimizerConfig) -> Result<StatValue> {
    check_rank(est, m)?;
    let g = inverse_sqrt(est.gamma_hat(), MAX_CONDITION)?;
    let nominal = (est.rows() - m) * (est.cols() - m);
    let aux = StatAux::DegreesOfFreedom {
        df: nominal,
        nominal,
        effective_rank: None,
    };
    let (objective, constrained) = if m == 0 {
        let whitened = &g * vec_of(est.m_hat());
        (
            whitened.norm_squared(),
            DMatrix::zeros(est.rows(), est.cols()),
        )
    } else {
        let fit = discrepancy::solve(est.m_hat(), &g, m, opt)?;
        (fit.objective, fit.matrix())
    };
    Ok(StatValue {
        kind: StatKind::Lambda3,
        value: est.n() as f64 * objective,
        m,
        constrained_matrix: constrained,
        aux,
    })
}
