//! Sliced inverse regression: the `p×H` matrix `Ĉ = cov(X, Ψ)` of predictors
//! against slice indicators, its covariance `V̂`, the simulation models and
//! the weighted bootstrap for `√n (Ĉ* − Ĉ)`.
//!
//! Every row of `Ĉ` sums to zero (the indicators sum to one), so `V̂` is
//! singular along those directions. [`SirMatrices::reduce_columns`]
//! re-expresses everything in an orthonormal basis of the complement of the
//! constant vector; singular values and both rank statistics built on
//! projectors are unchanged, and `V̂` becomes invertible as the
//! covariance-weighted statistic requires.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{unvec, EstimatedMatrix};
use crate::rank_test::{MatrixDraw, MatrixReplicateSource};

#[derive(Debug, Clone, PartialEq)]
pub struct SirSample {
    /// `n×p` predictors.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub h_slices: usize,
}

impl SirSample {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, h_slices: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidInput(format!(
                "{} predictor rows but {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if h_slices < 2 || y.len() <= h_slices {
            return Err(Error::InvalidInput(format!(
                "need n > H >= 2, got n = {}, H = {h_slices}",
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("no predictors".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample has non-finite entries".into()));
        }
        Ok(SirSample { x, y, h_slices })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMode {
    /// Contiguous groups of sorted responses with sizes `⌊n/H⌋` or `⌈n/H⌉`.
    #[default]
    EqualCount,
    /// `H` equal-width intervals of `[min y, max y]`; slices may be empty.
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slicing {
    /// Slice index of each observation.
    pub assignment: Vec<usize>,
    /// Largest response in each slice (upper interval end for equal width).
    pub boundaries: Vec<f64>,
    pub h: usize,
}

impl Slicing {
    /// The `n×H` zero/one indicator matrix `Ψ`.
    pub fn psi(&self) -> DMatrix<f64> {
        let mut psi = DMatrix::zeros(self.assignment.len(), self.h);
        for (i, &s) in self.assignment.iter().enumerate() {
            psi[(i, s)] = 1.0;
        }
        psi
    }
}

pub fn slice_indicators(y: &[f64], h: usize, mode: SliceMode) -> Result<Slicing> {
    let n = y.len();
    if h < 2 || n < h {
        return Err(Error::InvalidInput(format!("cannot form {h} slices from {n} responses")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let distinct = 1 + order.windows(2).filter(|w| y[w[0]] != y[w[1]]).count();
    if distinct < h {
        return Err(Error::DegenerateSlicing { distinct, slices: h });
    }
    let mut assignment = vec![0; n];
    let mut boundaries = vec![f64::NEG_INFINITY; h];
    match mode {
        SliceMode::EqualCount => {
            for (rank, &i) in order.iter().enumerate() {
                let s = rank * h / n;
                assignment[i] = s;
                boundaries[s] = y[i];
            }
        }
        SliceMode::EqualWidth => {
            let lo = y[order[0]];
            let width = (y[order[n - 1]] - lo) / h as f64;
            for (i, &v) in y.iter().enumerate() {
                assignment[i] = (((v - lo) / width) as usize).min(h - 1);
            }
            for (s, b) in boundaries.iter_mut().enumerate() {
                *b = lo + width * (s + 1) as f64;
            }
        }
    }
    Ok(Slicing { assignment, boundaries, h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirMatrices {
    /// `Ĉ = (1/n) Σ K̂ᵢ`, `p×H` (or `p×(H−1)` once reduced).
    pub c_hat: DMatrix<f64>,
    /// Row `i` is `vec(K̂ᵢ − Ĉ)ᵀ`.
    pub centered: DMatrix<f64>,
    /// `(1/n) Σ vec(K̂ᵢ − Ĉ) vec(K̂ᵢ − Ĉ)ᵀ`.
    pub v_hat: DMatrix<f64>,
    pub slice_assignment: Vec<usize>,
}

impl SirMatrices {
    pub fn n(&self) -> usize {
        self.centered.nrows()
    }

    /// `K̂ᵢ − Ĉ` as a matrix.
    pub fn k_centered(&self, i: usize) -> DMatrix<f64> {
        let row = self.centered.row(i).transpose();
        unvec(&row, self.c_hat.nrows(), self.c_hat.ncols())
    }

    pub fn estimated(&self) -> Result<EstimatedMatrix> {
        EstimatedMatrix::new(self.c_hat.clone(), self.v_hat.clone(), self.n())
    }

    /// Right-multiplies `Ĉ` and every `K̂ᵢ` by an orthonormal basis of the
    /// complement of the constant vector.
    pub fn reduce_columns(&self) -> SirMatrices {
        let (p, h) = self.c_hat.shape();
        let basis = helmert_basis(h);
        let n = self.n();
        let mut centered = DMatrix::zeros(n, p * (h - 1));
        for i in 0..n {
            let k = self.k_centered(i) * &basis;
            centered.row_mut(i).copy_from_slice(k.as_slice());
        }
        SirMatrices {
            c_hat: &self.c_hat * &basis,
            v_hat: covariance_of_rows(&centered),
            centered,
            slice_assignment: self.slice_assignment.clone(),
        }
    }
}

/// `H×(H−1)` orthonormal basis of `{v : Σ vⱼ = 0}`.
pub fn helmert_basis(h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h - 1, |i, k| {
        let k1 = (k + 1) as f64;
        let norm = (k1 * (k1 + 1.0)).sqrt();
        if i <= k {
            1.0 / norm
        } else if i == k + 1 {
            -k1 / norm
        } else {
            0.0
        }
    })
}

fn covariance_of_rows(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let v = centered.transpose() * centered / centered.nrows() as f64;
    (&v + v.transpose()) * 0.5
}

pub fn build_matrices(sample: &SirSample, mode: SliceMode) -> Result<SirMatrices> {
    let slicing = slice_indicators(&sample.y, sample.h_slices, mode)?;
    let n = sample.n();
    let (p, h) = (sample.p(), sample.h_slices);
    let x_mean = sample.x.row_mean();
    let psi = slicing.psi();
    let psi_mean = psi.row_mean();
    let mut k = DMatrix::zeros(n, p * h);
    for i in 0..n {
        let xc = sample.x.row(i) - &x_mean;
        let sc = psi.row(i) - &psi_mean;
        // vec(x sᵀ) stacks the columns sⱼ·x.
        for j in 0..h {
            for a in 0..p {
                k[(i, j * p + a)] = sc[j] * xc[a];
            }
        }
    }
    let mean = k.row_mean();
    let c_hat = unvec(&mean.transpose(), p, h);
    for i in 0..n {
        let mut row = k.row_mut(i);
        row -= &mean;
    }
    Ok(SirMatrices {
        c_hat,
        v_hat: covariance_of_rows(&k),
        centered: k,
        slice_assignment: slicing.assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    #[default]
    Normal,
    Rademacher,
}

impl WeightLaw {
    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            WeightLaw::Normal => StandardNormal.sample(rng),
            WeightLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Multiplier bootstrap: with i.i.d. mean-zero unit-variance weights `wᵢ`,
/// `W* = n^{-1/2} Σ wᵢ (K̂ᵢ − Ĉ)` and `Γ* = V*`, the covariance of the
/// `K*ᵢ = wᵢ (K̂ᵢ − Ĉ)` for the same draw.
#[derive(Debug, Clone)]
pub struct WeightedBootstrap<'a> {
    matrices: &'a SirMatrices,
    law: WeightLaw,
    recompute_gamma: bool,
}

impl<'a> WeightedBootstrap<'a> {
    pub fn new(matrices: &'a SirMatrices, law: WeightLaw) -> Self {
        WeightedBootstrap {
            matrices,
            law,
            recompute_gamma: true,
        }
    }

    /// Keep `Γ* = V̂` instead of recomputing it per draw.
    pub fn with_fixed_gamma(mut self) -> Self {
        self.recompute_gamma = false;
        self
    }

    /// The draw for an explicit weight vector.
    pub fn draw_with_weights(&self, w: &[f64]) -> MatrixDraw {
        let d = &self.matrices.centered;
        let n = d.nrows();
        assert_eq!(w.len(), n, "one weight per observation");
        let wv = DVector::from_column_slice(w);
        let sum = d.transpose() * &wv;
        let (p, cols) = self.matrices.c_hat.shape();
        let w_star = unvec(&(&sum / (n as f64).sqrt()), p, cols);
        let gamma = self.recompute_gamma.then(|| {
            let mut weighted = d.clone();
            for (i, mut row) in weighted.row_iter_mut().enumerate() {
                row *= w[i];
            }
            let mean = &sum / n as f64;
            let v = weighted.transpose() * &weighted / n as f64 - &mean * mean.transpose();
            (&v + v.transpose()) * 0.5
        });
        MatrixDraw { w: w_star, gamma }
    }
}

impl MatrixReplicateSource for WeightedBootstrap<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<MatrixDraw> {
        let w: Vec<f64> = (0..self.matrices.n()).map(|_| self.law.sample(rng)).collect();
        Ok(self.draw_with_weights(&w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    I,
    Ia,
    Ib,
    II,
    III,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::I => "I",
            ModelId::Ia => "Ia",
            ModelId::Ib => "Ib",
            ModelId::II => "II",
            ModelId::III => "III",
        }
    }

    /// Dimension of the central subspace, i.e. the true rank of `C`.
    pub fn true_rank(self) -> usize {
        match self {
            ModelId::III => 2,
            _ => 1,
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(ModelId::I),
            "Ia" | "IA" | "1a" => Ok(ModelId::Ia),
            "Ib" | "IB" | "1b" => Ok(ModelId::Ib),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            other => Err(Error::InvalidInput(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(id: ModelId, n: usize, seed: u64) -> Self {
        ModelSpec {
            id,
            n,
            p: 6,
            h: 5,
            seed,
        }
    }
}

/// Draws a sample from one of the simulation models.
///
/// * I: `Y = X₁ + 0.1e`, `X ~ N(0, I_p)`.
/// * Ia: as I with i.i.d. Student t₅ predictor coordinates.
/// * Ib: as I with `X = 0.1·X₁ᵍ·ε + X₂ᵍ·(1 − ε)`, `ε ~ Bernoulli(1/2)`,
///   `X₁ᵍ ~ N((6, 0, …, 0), I)`, `X₂ᵍ ~ N(0, I)`.
/// * II: `Y = tanh(X₁) + 0.1e`.
/// * III: `Y = X₁ / (0.5 + (X₂ + 2)²) + e`.
pub fn generate(spec: &ModelSpec) -> Result<SirSample> {
    if spec.p < 2 && spec.id == ModelId::III {
        return Err(Error::InvalidInput("model III needs p >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p) = (spec.n, spec.p);
    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    let student = StudentT::new(5.0).expect("valid degrees of freedom");
    let coin = Bernoulli::new(0.5).expect("valid probability");
    for i in 0..n {
        match spec.id {
            ModelId::Ia => {
                for j in 0..p {
                    x[(i, j)] = student.sample(&mut rng);
                }
            }
            ModelId::Ib => {
                let first = coin.sample(&mut rng);
                for j in 0..p {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[(i, j)] = if first {
                        0.1 * (z + if j == 0 { 6.0 } else { 0.0 })
                    } else {
                        z
                    };
                }
            }
            _ => {
                for j in 0..p {
                    x[(i, j)] = StandardNormal.sample(&mut rng);
                }
            }
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        let (x1, x2) = (x[(i, 0)], if p > 1 { x[(i, 1)] } else { 0.0 });
        y.push(match spec.id {
            ModelId::I | ModelId::Ia | ModelId::Ib => x1 + 0.1 * e,
            ModelId::II => x1.tanh() + 0.1 * e,
            ModelId::III => x1 / (0.5 + (x2 + 2.0).powi(2)) + e,
        });
    }
    SirSample::new(x, y, spec.h)
}

/// Reads `Y, X₁, …, X_p` from a CSV file with a header row.
pub fn read_csv(path: &Path, h_slices: usize) -> Result<SirSample> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv_from(file, h_slices)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, h_slices: usize) -> Result<SirSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Data {
            row: 1,
            column: width,
            message: "need a response column and at least one predictor".into(),
        });
    }
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        // Data rows are numbered from 2, after the header.
        let row = idx + 2;
        let record = record.map_err(|e| Error::Data {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::Data {
                row,
                column: record.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let value = parse_field(field).ok_or_else(|| Error::Data {
                row,
                column: col + 1,
                message: if field.is_empty() {
                    "missing value".into()
                } else {
                    format!("'{field}' is not a finite number")
                },
            })?;
            if col == 0 {
                y.push(value);
            } else {
                x.push(value);
            }
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, width - 1, &x);
    SirSample::new(x, y, h_slices)
}

fn parse_field(field: &str) -> Option<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite())
}
