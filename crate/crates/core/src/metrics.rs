//! Divergences between conditional mixture densities and the evaluation
//! statistics reported for simulated benchmarks.

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::init::derive_seed;
use crate::model::{log_sum_exp, Dataset, MixtureRegressionModel, LN_2PI};

/// Squared Hellinger distance between `N(mu1, diag(sd1^2))` and
/// `N(mu2, diag(sd2^2))`, on the `int (sqrt f - sqrt g)^2` scale (range `[0, 2]`).
pub fn hellinger_diag(mu1: &[f64], sd1: &[f64], mu2: &[f64], sd2: &[f64]) -> f64 {
    let mut prod = 1.0;
    let mut quad = 0.0;
    for z in 0..mu1.len() {
        let v = sd1[z] * sd1[z] + sd2[z] * sd2[z];
        prod *= (2.0 * sd1[z] * sd2[z] / v).sqrt();
        let d = mu1[z] - mu2[z];
        quad += d * d / v;
    }
    (2.0 - 2.0 * prod * (-0.25 * quad).exp()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JklConfig {
    pub rho: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for JklConfig {
    fn default() -> Self {
        Self { rho: 0.5, mc_samples: 10_000, seed: 0 }
    }
}

impl JklConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(MixError::InvalidInput(format!("JKL weight must lie in (0, 1), got {}", self.rho)));
        }
        if self.mc_samples < 2 {
            return Err(MixError::InvalidInput("need at least 2 Monte Carlo samples".into()));
        }
        Ok(())
    }

    /// `(1/rho) log(1/(1-rho))`.
    pub fn bound(&self) -> f64 {
        -(-self.rho).ln_1p() / self.rho
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Paired KL and JKL estimates computed from the same draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergencePair {
    pub kl: McEstimate,
    pub jkl: McEstimate,
}

/// Per-row component means and log normalizers, so the density at many `y`
/// costs `O(Kq)` each.
struct RowDensity {
    log_w: Vec<f64>,
    means: Vec<Vec<f64>>,
    inv_var: Vec<Vec<f64>>,
}

impl RowDensity {
    fn new(model: &MixtureRegressionModel, x: &[f64]) -> Self {
        let q = model.q();
        let mut log_w = Vec::with_capacity(model.k());
        let mut means = Vec::with_capacity(model.k());
        let mut inv_var = Vec::with_capacity(model.k());
        for k in 0..model.k() {
            let b = &model.beta()[k];
            let s = &model.sigma_diag()[k];
            let mean: Vec<f64> = (0..q).map(|z| (0..x.len()).map(|j| b[(z, j)] * x[j]).sum()).collect();
            let lw = model.pi()[k].ln() - 0.5 * q as f64 * LN_2PI - 0.5 * s.iter().map(|v| v.ln()).sum::<f64>();
            log_w.push(lw);
            means.push(mean);
            inv_var.push(s.iter().map(|v| 1.0 / v).collect());
        }
        Self { log_w, means, inv_var }
    }

    fn log_density(&self, y: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        for k in 0..self.log_w.len() {
            let mut acc = 0.0;
            for z in 0..y.len() {
                let r = y[z] - self.means[k][z];
                acc += r * r * self.inv_var[k][z];
            }
            buf.push(self.log_w[k] - 0.5 * acc);
        }
        log_sum_exp(buf)
    }
}

fn check_pair(s_true: &MixtureRegressionModel, s_hat: &MixtureRegressionModel, x: &DMatrix<f64>) -> Result<()> {
    if s_true.p() != s_hat.p() || s_true.q() != s_hat.q() {
        return Err(MixError::DimensionMismatch("models disagree on (p, q)".into()));
    }
    if x.ncols() != s_true.p() {
        return Err(MixError::DimensionMismatch(format!(
            "evaluation design has {} columns, models expect {}",
            x.ncols(),
            s_true.p()
        )));
    }
    if x.nrows() == 0 {
        return Err(MixError::InvalidInput("evaluation design has no rows".into()));
    }
    Ok(())
}

/// Row means and variances of the log-ratio terms, for KL and JKL.
fn row_stats(
    s_true: &MixtureRegressionModel,
    s_hat: &MixtureRegressionModel,
    x: &[f64],
    rho: f64,
    m: usize,
    seed: u64,
) -> [(f64, f64); 2] {
    let ts = RowDensity::new(s_true, x);
    let th = RowDensity::new(s_hat, x);
    let comp = WeightedIndex::new(s_true.pi()).expect("valid proportions");
    let sd: Vec<Vec<f64>> = s_true.sigma_diag().iter().map(|s| s.iter().map(|v| v.sqrt()).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = s_true.q();
    let mut y = vec![0.0; q];
    let mut buf = Vec::with_capacity(s_true.k().max(s_hat.k()));
    let (ln1r, lnr) = ((1.0 - rho).ln(), rho.ln());
    let mut sums = [(0.0, 0.0); 2];
    for _ in 0..m {
        let k = comp.sample(&mut rng);
        for z in 0..q {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[z] = ts.means[k][z] + sd[k][z] * e;
        }
        let ls = ts.log_density(&y, &mut buf);
        let lt = th.log_density(&y, &mut buf);
        let kl = ls - lt;
        let jkl = if kl > -30.0 {
            -(rho * (-kl).exp_m1()).ln_1p() / rho
        } else {
            (ls - log_sum_exp(&[ln1r + ls, lnr + lt])) / rho
        };
        for (acc, v) in sums.iter_mut().zip([kl, jkl]) {
            acc.0 += v;
            acc.1 += v * v;
        }
    }
    let mf = m as f64;
    sums.map(|(s, ss)| {
        let mean = s / mf;
        let var = ((ss - mf * mean * mean) / (mf - 1.0)).max(0.0);
        (mean, var)
    })
}

/// Tensorized KL and JKL between `s_true` and `s_hat` over the rows of
/// `x_eval`, from shared draws `y ~ s_true(. | x_i)`.
pub fn divergences_mc(
    s_true: &MixtureRegressionModel,
    s_hat: &MixtureRegressionModel,
    x_eval: &DMatrix<f64>,
    cfg: &JklConfig,
) -> Result<DivergencePair> {
    cfg.validate()?;
    check_pair(s_true, s_hat, x_eval)?;
    let n = x_eval.nrows();
    let rows: Vec<[(f64, f64); 2]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = x_eval.row(i).iter().copied().collect();
            row_stats(s_true, s_hat, &x, cfg.rho, cfg.mc_samples, derive_seed(cfg.seed, &[i as u64]))
        })
        .collect();
    let nf = n as f64;
    let mf = cfg.mc_samples as f64;
    let agg = |t: usize| {
        let mut estimate = rows.iter().map(|r| r[t].0).sum::<f64>() / nf;
        if t == 1 {
            // every term is at most the bound; only summation rounding can exceed it
            estimate = estimate.min(cfg.bound());
        }
        let var = rows.iter().map(|r| r[t].1 / mf).sum::<f64>() / (nf * nf);
        McEstimate { estimate, std_error: var.sqrt() }
    };
    Ok(DivergencePair { kl: agg(0), jkl: agg(1) })
}

/// Tensorized Kullback-Leibler divergence `KL(s_true, s_hat)` by Monte Carlo.
pub fn kl_mc(
    s_true: &MixtureRegressionModel,
    s_hat: &MixtureRegressionModel,
    x_eval: &DMatrix<f64>,
    cfg: &JklConfig,
) -> Result<McEstimate> {
    Ok(divergences_mc(s_true, s_hat, x_eval, cfg)?.kl)
}

/// Tensorized `(1/rho) KL(s_true, (1-rho) s_true + rho s_hat)` by Monte Carlo.
pub fn jkl_mc(
    s_true: &MixtureRegressionModel,
    s_hat: &MixtureRegressionModel,
    x_eval: &DMatrix<f64>,
    cfg: &JklConfig,
) -> Result<McEstimate> {
    Ok(divergences_mc(s_true, s_hat, x_eval, cfg)?.jkl)
}

/// `(misses, false_actives)` as counts.
pub fn support_errors(j_hat: &[usize], j_true: &[usize]) -> (usize, usize) {
    let hat: BTreeSet<usize> = j_hat.iter().copied().collect();
    let truth: BTreeSet<usize> = j_true.iter().copied().collect();
    (truth.difference(&hat).count(), hat.difference(&truth).count())
}

fn choose2(m: u64) -> f64 {
    (m * m.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index by pair counting.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MixError::DimensionMismatch(format!("{} vs {} labels", a.len(), b.len())));
    }
    let n = a.len() as u64;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&u, &v) in a.iter().zip(b) {
        *table.entry((u, v)).or_default() += 1;
        *rows.entry(u).or_default() += 1;
        *cols.entry(v).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mean over rows of `|y_i - beta_khat x_i|^2 / q`, with `khat` the MAP
/// component of `(x_i, y_i)`.
pub fn mse(model: &MixtureRegressionModel, test: &Dataset) -> Result<f64> {
    let w = model.log_weight_matrix(test)?;
    let q = test.q();
    let mut total = 0.0;
    for i in 0..test.n() {
        let k = (0..model.k())
            .max_by(|&a, &b| w[(i, a)].total_cmp(&w[(i, b)]).then(b.cmp(&a)))
            .unwrap();
        let pred = &model.beta()[k] * test.x().row(i).transpose();
        let r = test.y().row(i).transpose() - pred;
        total += r.norm_squared() / q as f64;
    }
    Ok(total / test.n() as f64)
}

/// Evaluation statistics of one fitted model against a known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kl_mean: f64,
    pub kl_std_error: f64,
    pub jkl_mean: f64,
    pub jkl_std_error: f64,
    /// Per-cluster ranks, sorted ascending.
    pub ranks: Vec<usize>,
    pub misses: usize,
    pub false_actives: usize,
    pub ari: f64,
    pub mse: f64,
}

/// Inputs describing the fitted model for [`evaluate`].
pub struct FittedSummary<'a> {
    pub model: &'a MixtureRegressionModel,
    pub support: &'a [usize],
    pub ranks: &'a [usize],
    /// Cluster labels of the training rows.
    pub labels: &'a [usize],
}

/// KL and JKL to truth over the training design, support errors, ARI of the
/// training clustering and test-set MSE.
pub fn evaluate(
    truth: &MixtureRegressionModel,
    true_support: &[usize],
    fitted: &FittedSummary<'_>,
    train: &Dataset,
    test: &Dataset,
    cfg: &JklConfig,
) -> Result<EvalReport> {
    let div = divergences_mc(truth, fitted.model, train.x(), cfg)?;
    let (misses, false_actives) = support_errors(fitted.support, true_support);
    let true_labels = train
        .labels()
        .ok_or_else(|| MixError::InvalidInput("training data carries no labels".into()))?;
    let mut ranks = fitted.ranks.to_vec();
    ranks.sort_unstable();
    Ok(EvalReport {
        kl_mean: div.kl.estimate,
        kl_std_error: div.kl.std_error,
        jkl_mean: div.jkl.estimate,
        jkl_std_error: div.jkl.std_error,
        ranks,
        misses,
        false_actives,
        ari: ari(fitted.labels, true_labels)?,
        mse: mse(fitted.model, test)?,
    })
}
