//! Parameter types and conditional density of a Gaussian mixture of
//! multivariate-response linear regressions with diagonal covariances.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observed couples `(x_i, y_i)`; rows of `x` and `y` are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
            return Err(MixError::InvalidInput(format!(
                "dataset needs n, p, q >= 1 (got n={}, p={}, q={})",
                x.nrows(),
                x.ncols(),
                y.ncols()
            )));
        }
        if x.nrows() != y.nrows() {
            return Err(MixError::DimensionMismatch(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(MixError::InvalidInput("non-finite entry in X or Y".into()));
        }
        if let Some(l) = &labels {
            if l.len() != x.nrows() {
                return Err(MixError::DimensionMismatch(format!(
                    "{} labels for {} observations",
                    l.len(),
                    x.nrows()
                )));
            }
        }
        Ok(Self { x, y, labels })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Copy of `X` keeping only the given columns, in the given order.
    pub fn restricted_x(&self, columns: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(columns)
    }

    /// Rows `rows` of the dataset, labels included when present.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&i| l[i]).collect());
        Self::new(self.x.select_rows(rows), self.y.select_rows(rows), labels)
    }
}

/// Parameters `(pi, beta_1..beta_K, Sigma_1..Sigma_K)`, each `beta_k` being
/// `q x p` and each `Sigma_k` diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureRegressionModel {
    pi: Vec<f64>,
    beta: Vec<DMatrix<f64>>,
    sigma_diag: Vec<Vec<f64>>,
}

impl MixtureRegressionModel {
    pub fn new(pi: Vec<f64>, beta: Vec<DMatrix<f64>>, sigma_diag: Vec<Vec<f64>>) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(MixError::InvalidInput("mixture needs K >= 1".into()));
        }
        if beta.len() != k || sigma_diag.len() != k {
            return Err(MixError::DimensionMismatch(format!(
                "K={} proportions but {} coefficient matrices and {} variance vectors",
                k,
                beta.len(),
                sigma_diag.len()
            )));
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(MixError::InvalidInput(format!("proportions must be > 0: {pi:?}")));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MixError::InvalidInput(format!("proportions sum to {total}, not 1")));
        }
        let (q, p) = beta[0].shape();
        if q == 0 || p == 0 {
            return Err(MixError::InvalidInput("coefficient matrices must be non-empty".into()));
        }
        for (b, s) in beta.iter().zip(&sigma_diag) {
            if b.shape() != (q, p) || s.len() != q {
                return Err(MixError::DimensionMismatch(
                    "components disagree on (q, p)".into(),
                ));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(MixError::InvalidInput("non-finite regression coefficient".into()));
            }
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(MixError::InvalidInput("variances must be finite and > 0".into()));
            }
        }
        Ok(Self { pi, beta, sigma_diag })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn p(&self) -> usize {
        self.beta[0].ncols()
    }

    pub fn q(&self) -> usize {
        self.beta[0].nrows()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn beta(&self) -> &[DMatrix<f64>] {
        &self.beta
    }

    pub fn sigma_diag(&self) -> &[Vec<f64>] {
        &self.sigma_diag
    }

    /// Model with components reordered: slot `i` of the result is component `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(
            order.iter().map(|&k| self.pi[k]).collect(),
            order.iter().map(|&k| self.beta[k].clone()).collect(),
            order.iter().map(|&k| self.sigma_diag[k].clone()).collect(),
        )
    }

    /// `log pi_k + log N_q(y; beta_k x, Sigma_k)` for every component.
    pub fn component_log_weights(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let b = &self.beta[k];
                let s = &self.sigma_diag[k];
                let mut acc = self.pi[k].ln() - 0.5 * self.q() as f64 * LN_2PI;
                for z in 0..self.q() {
                    let mut mean = 0.0;
                    for (j, &xj) in x.iter().enumerate() {
                        mean += b[(z, j)] * xj;
                    }
                    let r = y[z] - mean;
                    acc -= 0.5 * (s[z].ln() + r * r / s[z]);
                }
                acc
            })
            .collect()
    }

    /// `n x K` matrix of `log pi_k + log N_q(y_i; beta_k x_i, Sigma_k)`.
    pub fn log_weight_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.check_dims(data.p(), data.q())?;
        let n = data.n();
        let mut out = DMatrix::zeros(n, self.k());
        for k in 0..self.k() {
            let means = data.x() * self.beta[k].transpose();
            let s = &self.sigma_diag[k];
            let base = self.pi[k].ln()
                - 0.5 * self.q() as f64 * LN_2PI
                - 0.5 * s.iter().map(|v| v.ln()).sum::<f64>();
            for i in 0..n {
                let mut quad = 0.0;
                for z in 0..self.q() {
                    let r = data.y()[(i, z)] - means[(i, z)];
                    quad += r * r / s[z];
                }
                out[(i, k)] = base - 0.5 * quad;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_dims(&self, p: usize, q: usize) -> Result<()> {
        if p != self.p() || q != self.q() {
            return Err(MixError::DimensionMismatch(format!(
                "model is (p={}, q={}) but data is (p={p}, q={q})",
                self.p(),
                self.q()
            )));
        }
        Ok(())
    }

    pub fn to_rescaled(&self) -> RescaledParameters {
        let mut phi = Vec::with_capacity(self.k());
        let mut p_diag = Vec::with_capacity(self.k());
        for (b, s) in self.beta.iter().zip(&self.sigma_diag) {
            let pk: Vec<f64> = s.iter().map(|v| 1.0 / v.sqrt()).collect();
            let mut f = b.clone();
            for (z, &pz) in pk.iter().enumerate() {
                f.row_mut(z).scale_mut(pz);
            }
            phi.push(f);
            p_diag.push(pk);
        }
        RescaledParameters { phi, p_diag }
    }

    pub fn from_rescaled(pi: Vec<f64>, params: &RescaledParameters) -> Result<Self> {
        let mut beta = Vec::with_capacity(params.phi.len());
        let mut sigma = Vec::with_capacity(params.phi.len());
        for (f, pk) in params.phi.iter().zip(&params.p_diag) {
            if pk.iter().any(|&v| !(v > 0.0)) {
                return Err(MixError::InvalidInput("Cholesky diagonal must be > 0".into()));
            }
            let mut b = f.clone();
            for (z, &pz) in pk.iter().enumerate() {
                b.row_mut(z).scale_mut(1.0 / pz);
            }
            beta.push(b);
            sigma.push(pk.iter().map(|v| 1.0 / (v * v)).collect());
        }
        Self::new(pi, beta, sigma)
    }
}

/// Rescaled means `phi_k = P_k beta_k` with `P_k` the diagonal Cholesky factor
/// of `Sigma_k^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledParameters {
    pub phi: Vec<DMatrix<f64>>,
    pub p_diag: Vec<Vec<f64>>,
}

/// A model `(K, J, R)`: cluster count, relevant columns (0-based, sorted)
/// and per-cluster rank bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelIndex {
    pub k: usize,
    pub support: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl ModelIndex {
    pub fn new(k: usize, mut support: Vec<usize>, ranks: Vec<usize>, q: usize) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        let idx = Self { k, support, ranks };
        idx.validate(q)?;
        Ok(idx)
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.k == 0 {
            return Err(MixError::InvalidInput("K must be >= 1".into()));
        }
        if self.support.is_empty() {
            return Err(MixError::InvalidInput("support J must be non-empty".into()));
        }
        if self.ranks.len() != self.k {
            return Err(MixError::DimensionMismatch(format!(
                "rank vector has {} entries for K={}",
                self.ranks.len(),
                self.k
            )));
        }
        let cap = self.support.len().min(q);
        if self.ranks.iter().any(|&r| r == 0 || r > cap) {
            return Err(MixError::InvalidInput(format!(
                "ranks {:?} must lie in 1..={cap}",
                self.ranks
            )));
        }
        Ok(())
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(0)
    }

    pub fn rank_sum(&self) -> usize {
        self.ranks.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimensionMode {
    /// `sum_k R(k)(|J| + q - R(k))`, the free parameters of the low-rank means.
    MeansOnly,
    /// Means plus `K - 1` proportions and `K q` variances.
    Full,
}

pub fn dimension(index: &ModelIndex, q: usize, mode: DimensionMode) -> usize {
    let j = index.support.len();
    let means: usize = index.ranks.iter().map(|&r| r * (j + q - r)).sum();
    match mode {
        DimensionMode::MeansOnly => means,
        DimensionMode::Full => means + (index.k - 1) + index.k * q,
    }
}

/// Variance and singular-value bounds of the bounded model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    pub a_sigma_sq: f64,
    pub big_a_sigma_sq: f64,
    pub a_singular: f64,
}

impl BoundsConfig {
    pub fn new(a_sigma_sq: f64, big_a_sigma_sq: f64, a_singular: f64) -> Result<Self> {
        if !(a_sigma_sq > 0.0) || !(big_a_sigma_sq >= a_sigma_sq) || !(a_singular > 0.0) {
            return Err(MixError::InvalidInput(format!(
                "bounds need 0 < a_sigma^2 <= A_sigma^2 and A_singular > 0 \
                 (got {a_sigma_sq}, {big_a_sigma_sq}, {a_singular})"
            )));
        }
        Ok(Self { a_sigma_sq, big_a_sigma_sq, a_singular })
    }
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { a_sigma_sq: 0.01, big_a_sigma_sq: 100.0, a_singular: 50.0 }
    }
}

/// Numerically stable `log(sum(exp(v)))`. Terms are summed in sorted order so
/// the result does not depend on the order of `v`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut terms: Vec<f64> = v.iter().map(|&a| (a - m).exp()).collect();
    terms.sort_by(|a, b| a.total_cmp(b));
    m + terms.iter().sum::<f64>().ln()
}

/// Conditional density `s(y | x)` of the mixture.
pub fn mixture_density(model: &MixtureRegressionModel, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(log_mixture_density(model, x, y)?.exp())
}

pub fn log_mixture_density(model: &MixtureRegressionModel, x: &[f64], y: &[f64]) -> Result<f64> {
    model.check_dims(x.len(), y.len())?;
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MixError::InvalidInput("non-finite x or y".into()));
    }
    Ok(log_sum_exp(&model.component_log_weights(x, y)))
}

/// `sum_i log s(y_i | x_i)`.
pub fn log_likelihood(model: &MixtureRegressionModel, data: &Dataset) -> Result<f64> {
    let w = model.log_weight_matrix(data)?;
    let mut total = 0.0;
    let mut row = vec![0.0; model.k()];
    for i in 0..data.n() {
        for (k, r) in row.iter_mut().enumerate() {
            *r = w[(i, k)];
        }
        total += log_sum_exp(&row);
    }
    Ok(total)
}

/// Standard normal density at the origin in `q` dimensions, `(2 pi)^{-q/2}`.
pub fn standard_normal_peak(q: usize) -> f64 {
    (2.0 * PI).powf(-(q as f64) / 2.0)
}
