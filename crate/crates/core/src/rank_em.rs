//! Rank-constrained refit on a fixed support: classification EM alternating a
//! MAP assignment, per-cluster least squares and singular-value truncation.

use nalgebra::{DMatrix, DVector};

use crate::error::{MixError, Result};
use crate::lasso_em::Responsibilities;
use crate::model::{
    dimension, log_likelihood, log_sum_exp, Dataset, DimensionMode, MixtureRegressionModel,
    ModelIndex,
};

/// Relative singular-value cutoff used for pseudoinverses and numerical rank.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankFitConfig {
    pub ranks: Vec<usize>,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// Lower bound on every fitted variance.
    pub var_floor: f64,
    /// Empty-cluster repairs allowed before the fit is declared degenerate.
    pub max_reseeds: usize,
}

impl RankFitConfig {
    pub fn new(ranks: Vec<usize>) -> Self {
        Self { ranks, max_iter: 200, rel_tol: 1e-6, seed: 0, var_floor: 1e-8, max_reseeds: 5 }
    }
}

/// A rank-constrained estimate for one `(K, J, R)`.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub index: ModelIndex,
    /// Coefficients are zero outside the support.
    pub model: MixtureRegressionModel,
    pub loglik: f64,
    pub dim_means: usize,
    pub dim_full: usize,
    pub converged: bool,
    pub iterations: usize,
    /// MAP cluster of every training row under `model`.
    pub labels: Vec<usize>,
}

/// Minimum-norm least squares `Ys ~ Xs B^t`, returned as `B` (`q x d`), with
/// a flag set when `Xs` is numerically rank deficient.
pub fn ols_fit(xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (m, d) = xs.shape();
    let q = ys.ncols();
    if m == 0 || d == 0 {
        return (DMatrix::zeros(q, d), true);
    }
    let svd = xs.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let mut rank = 0;
    // B^t (d x q) = V S^+ U^t Y
    let uty = u.transpose() * ys;
    let mut scaled = DMatrix::zeros(svd.singular_values.len(), q);
    for (l, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            for c in 0..q {
                scaled[(l, c)] = uty[(l, c)] / s;
            }
        }
    }
    let bt = vt.transpose() * scaled;
    (bt.transpose(), rank < d)
}

/// Best rank-`r` approximation of `b` (keeps the `r` largest singular values).
/// Matrices whose numerical rank is already at most `r` are returned as is.
pub fn rank_truncate(b: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (q, d) = b.shape();
    if r >= q.min(d) {
        return b.clone();
    }
    let svd = b.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &c| svd.singular_values[c].total_cmp(&svd.singular_values[a]));
    if svd.singular_values[order[r]] <= RANK_TOL * svd.singular_values[order[0]] {
        return b.clone();
    }
    let mut out = DMatrix::zeros(q, d);
    for &l in order.iter().take(r) {
        let s = svd.singular_values[l];
        out += s * u.column(l) * vt.row(l);
    }
    out
}

/// Number of singular values above `1e-10` times the largest.
pub fn numerical_rank(b: &DMatrix<f64>) -> usize {
    if b.iter().all(|&v| v == 0.0) {
        return 0;
    }
    let sv = b.clone().singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

struct Iterate {
    pi: Vec<f64>,
    beta: Vec<DMatrix<f64>>,
    sigma: Vec<Vec<f64>>,
}

impl Iterate {
    fn max_abs(&self) -> f64 {
        let mut m = self.pi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for b in &self.beta {
            m = m.max(b.amax());
        }
        for s in self.sigma.iter().flatten() {
            m = m.max(s.abs());
        }
        m
    }

    fn max_abs_diff(&self, o: &Self) -> f64 {
        let mut m = 0.0f64;
        for (a, b) in self.pi.iter().zip(&o.pi) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.beta.iter().zip(&o.beta) {
            m = m.max((a - b).amax());
        }
        for (a, b) in self.sigma.iter().flatten().zip(o.sigma.iter().flatten()) {
            m = m.max((a - b).abs());
        }
        m
    }
}

fn rows_of(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        rows[l].push(i);
    }
    rows
}

/// Moves the worst-fitted half of the largest cluster into each empty cluster.
fn reseed_empty(labels: &mut [usize], k: usize, x: &DMatrix<f64>, y: &DMatrix<f64>) {
    loop {
        let rows = rows_of(labels, k);
        let Some(empty) = rows.iter().position(|r| r.is_empty()) else { return };
        let largest = (0..k).max_by_key(|&c| (rows[c].len(), std::cmp::Reverse(c))).unwrap();
        let members = &rows[largest];
        if members.len() < 2 {
            return;
        }
        let xs = x.select_rows(members);
        let ys = y.select_rows(members);
        let (b, _) = ols_fit(&xs, &ys);
        let resid = &ys - &xs * b.transpose();
        let mut scored: Vec<(f64, usize)> = members
            .iter()
            .enumerate()
            .map(|(r, &i)| (resid.row(r).norm_squared(), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let moved = members.len().div_ceil(2);
        for &(_, i) in scored.iter().take(moved) {
            labels[i] = empty;
        }
    }
}

/// Root mean square of every column (1 for an all-zero column).
fn column_scales(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(
        x.ncols(),
        x.column_iter().map(|c| {
            let s = (c.norm_squared() / n).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        }),
    )
}

/// Truncation of `b` to rank `r` in the coordinates of unit-scale columns.
fn truncate_scaled(b: &DMatrix<f64>, r: usize, scales: &DVector<f64>) -> DMatrix<f64> {
    if r >= b.nrows().min(b.ncols()) {
        return b.clone();
    }
    let mut scaled = b.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= scales[j];
    }
    let mut t = rank_truncate(&scaled, r);
    for (j, mut col) in t.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    t
}

fn log_weights(it: &Iterate, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let q = y.ncols();
    let mut out = DMatrix::zeros(n, it.pi.len());
    for k in 0..it.pi.len() {
        let means = x * it.beta[k].transpose();
        let s = &it.sigma[k];
        let base = it.pi[k].ln()
            - 0.5 * q as f64 * crate::model::LN_2PI
            - 0.5 * s.iter().map(|v| v.ln()).sum::<f64>();
        for i in 0..n {
            let mut quad = 0.0;
            for z in 0..q {
                let r = y[(i, z)] - means[(i, z)];
                quad += r * r / s[z];
            }
            out[(i, k)] = base - 0.5 * quad;
        }
    }
    out
}

/// Rank-constrained classification EM on the columns `support` of `data`.
///
/// Returns the iterate with the highest log-likelihood seen. Fails when a
/// cluster of that iterate holds no more scalar observations (`n_k q`) than
/// its free parameters (`R(k)(|J| + q - R(k)) + q`), where the likelihood is
/// unbounded.
pub fn rank_em_fit(
    data: &Dataset,
    support: &[usize],
    k: usize,
    cfg: &RankFitConfig,
    init: &Responsibilities,
) -> Result<FittedModel> {
    let index = ModelIndex::new(k, support.to_vec(), cfg.ranks.clone(), data.q())?;
    if index.support.iter().any(|&j| j >= data.p()) {
        return Err(MixError::InvalidInput(format!(
            "support {:?} exceeds p={}",
            index.support,
            data.p()
        )));
    }
    if init.n() != data.n() || init.k() != k {
        return Err(MixError::DimensionMismatch("initial responsibilities do not match (n, K)".into()));
    }
    if cfg.max_iter == 0 || !(cfg.rel_tol >= 0.0) {
        return Err(MixError::InvalidInput("need max_iter >= 1 and rel_tol >= 0".into()));
    }
    let n = data.n();
    let q = data.q();
    let xj = data.restricted_x(&index.support);
    let y = data.y();
    let scales = column_scales(&xj);

    let mut labels = init.map_labels();
    let mut reseeds = 0usize;
    let mut best: Option<(f64, Iterate)> = None;
    let mut prev: Option<(f64, Iterate)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        if rows_of(&labels, k).iter().any(|r| r.is_empty()) {
            reseeds += 1;
            if reseeds > cfg.max_reseeds {
                return Err(MixError::DegenerateFit(format!(
                    "clusters kept emptying after {} reseeds (K={k}, |J|={})",
                    cfg.max_reseeds,
                    index.support.len()
                )));
            }
            reseed_empty(&mut labels, k, &xj, y);
            if rows_of(&labels, k).iter().any(|r| r.is_empty()) {
                return Err(MixError::DegenerateFit("cannot repopulate an empty cluster".into()));
            }
        }
        let rows = rows_of(&labels, k);
        let mut it = Iterate { pi: Vec::with_capacity(k), beta: Vec::with_capacity(k), sigma: Vec::with_capacity(k) };
        for (c, members) in rows.iter().enumerate() {
            let xs = xj.select_rows(members);
            let ys = y.select_rows(members);
            let (b, _) = ols_fit(&xs, &ys);
            let b = truncate_scaled(&b, index.ranks[c], &scales);
            let resid = &ys - &xs * b.transpose();
            let m = members.len() as f64;
            it.sigma.push(
                (0..q)
                    .map(|z| (resid.column(z).norm_squared() / m).max(cfg.var_floor))
                    .collect(),
            );
            it.pi.push(m / n as f64);
            it.beta.push(b);
        }
        let logw = log_weights(&it, &xj, y);
        let mut ll = 0.0;
        let mut row = vec![0.0; k];
        let mut next_labels = vec![0usize; n];
        for i in 0..n {
            for (c, r) in row.iter_mut().enumerate() {
                *r = logw[(i, c)];
            }
            ll += log_sum_exp(&row);
            let mut arg = 0;
            for c in 1..k {
                if row[c] > row[arg] {
                    arg = c;
                }
            }
            next_labels[i] = arg;
        }
        if !ll.is_finite() {
            return Err(MixError::DegenerateFit("non-finite log-likelihood".into()));
        }

        let done = match &prev {
            Some((pll, pit)) => {
                let rel_ll = (ll - pll).abs() / pll.abs().max(f64::MIN_POSITIVE);
                let rel_par = it.max_abs_diff(pit) / pit.max_abs().max(f64::MIN_POSITIVE);
                rel_ll <= cfg.rel_tol && rel_par <= cfg.rel_tol
            }
            None => false,
        };
        let improves = best.as_ref().map_or(true, |(bll, _)| ll > *bll);
        if improves {
            best = Some((ll, Iterate { pi: it.pi.clone(), beta: it.beta.clone(), sigma: it.sigma.clone() }));
        }
        prev = Some((ll, it));
        labels = next_labels;
        if done {
            converged = true;
            break;
        }
    }

    let (_, it) = best.expect("at least one iteration");
    for (c, &share) in it.pi.iter().enumerate() {
        let r = index.ranks[c];
        let params = r * (index.support.len() + q - r) + q;
        let size = (share * n as f64).round() as usize;
        if size * q <= params {
            return Err(MixError::DegenerateFit(format!(
                "cluster {c} has {size} rows for {params} parameters (|J|={}, R={r})",
                index.support.len()
            )));
        }
    }
    let p = data.p();
    let beta_full = it
        .beta
        .iter()
        .map(|b| {
            let mut full = DMatrix::zeros(q, p);
            for (c, &j) in index.support.iter().enumerate() {
                full.set_column(j, &b.column(c));
            }
            full
        })
        .collect();
    let pi_sum: f64 = it.pi.iter().sum();
    let pi = it.pi.iter().map(|v| v / pi_sum).collect();
    let model = MixtureRegressionModel::new(pi, beta_full, it.sigma)?;
    let loglik = log_likelihood(&model, data)?;
    let labels = crate::lasso_em::estep(&model, data)?.map_labels();
    Ok(FittedModel {
        dim_means: dimension(&index, q, DimensionMode::MeansOnly),
        dim_full: dimension(&index, q, DimensionMode::Full),
        index,
        model,
        loglik,
        converged,
        iterations,
        labels,
    })
}
