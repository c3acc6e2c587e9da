//! Initial cluster responsibilities: k-means++ on the data, or a short
//! mixture-of-regressions EM on screened predictors.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lasso_em::Responsibilities;
use crate::model::Dataset;

const LLOYD_ITERS: usize = 50;
const SCREEN_STARTS: usize = 10;
const SCREEN_EM_ITERS: usize = 40;
const REFINE_ROUNDS: usize = 3;

/// Mixes `parts` into `base` (splitmix64 finalizer) to derive independent
/// per-task seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Rows of `[X Y]` with every column standardized; constant columns become 0.
fn standardized_rows(data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    let (p, q) = (data.p(), data.q());
    let mut out = DMatrix::zeros(n, p + q);
    for c in 0..p + q {
        let col = if c < p { data.x().column(c) } else { data.y().column(c - p) };
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            out[(i, c)] = if sd > 0.0 { (col[i] - mean) / sd } else { 0.0 };
        }
    }
    out
}

fn sq_dist(points: &DMatrix<f64>, i: usize, center: &[f64]) -> f64 {
    center
        .iter()
        .enumerate()
        .map(|(c, &m)| (points[(i, c)] - m).powi(2))
        .sum()
}

/// Hard k-means assignment of the standardized `(x, y)` rows, seeded with
/// k-means++. Deterministic given `seed`.
pub fn kmeans_labels(data: &Dataset, k: usize, seed: u64) -> Vec<usize> {
    let n = data.n();
    if k <= 1 {
        return vec![0; n];
    }
    let pts = standardized_rows(data);
    let dim = pts.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let row = |i: usize| -> Vec<f64> { pts.row(i).iter().copied().collect() };
    let mut centers: Vec<Vec<f64>> = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(&pts, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(&pts, i, centers.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for iter in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(&pts, i, &centers[a]).total_cmp(&sq_dist(&pts, i, &centers[b])))
                .unwrap();
            if best != *l {
                *l = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for c in 0..dim {
                sums[l][c] += pts[(i, c)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move the point farthest from its own center into the empty cluster
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&pts, a, &centers[labels[a]])
                            .total_cmp(&sq_dist(&pts, b, &centers[labels[b]]))
                    })
                    .unwrap();
                centers[c] = row(far);
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    labels
}

pub fn kmeans_responsibilities(data: &Dataset, k: usize, seed: u64) -> Responsibilities {
    Responsibilities::from_labels(&kmeans_labels(data, k, seed), k)
}

/// Predictor columns ranked by `||x_j^T (Y - mean Y)||^2 / ||x_j - mean x_j||^2`,
/// the `m` highest first.
pub fn screened_columns(data: &Dataset, m: usize) -> Vec<usize> {
    let (n, p) = (data.n(), data.p());
    let y = data.y();
    let ybar: Vec<f64> = y.column_iter().map(|c| c.mean()).collect();
    let mut scores: Vec<(usize, f64)> = (0..p)
        .map(|j| {
            let col = data.x().column(j);
            let xbar = col.mean();
            let ss: f64 = col.iter().map(|v| (v - xbar).powi(2)).sum();
            if ss <= 0.0 {
                return (j, 0.0);
            }
            let cross: f64 = (0..y.ncols())
                .map(|z| (0..n).map(|i| (col[i] - xbar) * (y[(i, z)] - ybar[z])).sum::<f64>().powi(2))
                .sum();
            (j, cross / ss)
        })
        .collect();
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.into_iter().take(m.min(p)).map(|(j, _)| j).collect()
}

/// Predictor columns ranked by the within-cluster version of the
/// [`screened_columns`] score summed over clusters, the `m` highest first.
pub fn cluster_screened_columns(data: &Dataset, gamma: &DMatrix<f64>, m: usize) -> Vec<usize> {
    let (n, p, q) = (data.n(), data.p(), data.q());
    let (x, y) = (data.x(), data.y());
    let mut scores: Vec<(usize, f64)> = (0..p).map(|j| (j, 0.0)).collect();
    for c in 0..gamma.ncols() {
        let w = gamma.column(c);
        let nk: f64 = w.sum();
        if nk < 1e-8 {
            continue;
        }
        let wmean = |f: &dyn Fn(usize) -> f64| (0..n).map(|i| w[i] * f(i)).sum::<f64>() / nk;
        let ybar: Vec<f64> = (0..q).map(|z| wmean(&|i| y[(i, z)])).collect();
        for (j, score) in scores.iter_mut() {
            let xbar = wmean(&|i| x[(i, *j)]);
            let ss: f64 = (0..n).map(|i| w[i] * (x[(i, *j)] - xbar).powi(2)).sum();
            if ss <= 0.0 {
                continue;
            }
            let cross: f64 = (0..q)
                .map(|z| (0..n).map(|i| w[i] * (x[(i, *j)] - xbar) * (y[(i, z)] - ybar[z])).sum::<f64>().powi(2))
                .sum();
            *score += cross / ss;
        }
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.into_iter().take(m.min(p)).map(|(j, _)| j).collect()
}

/// Soft EM for a Gaussian mixture of regressions with diagonal noise on the
/// given design; returns the final responsibilities and log-likelihood.
fn regression_em(x: &DMatrix<f64>, y: &DMatrix<f64>, mut gamma: DMatrix<f64>, iters: usize) -> (DMatrix<f64>, f64) {
    let (n, d) = x.shape();
    let q = y.ncols();
    let k = gamma.ncols();
    let var_floor: Vec<f64> = y
        .column_iter()
        .map(|c| {
            let m = c.mean();
            (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).max(1e-12) * 1e-3
        })
        .collect();
    let mut loglik = f64::NEG_INFINITY;
    for _ in 0..iters {
        let mut logw = DMatrix::zeros(n, k);
        for c in 0..k {
            let w = gamma.column(c);
            let nk: f64 = w.sum();
            if nk < 1e-8 {
                logw.column_mut(c).fill(f64::NEG_INFINITY);
                continue;
            }
            let xw = DMatrix::from_fn(n, d, |i, j| x[(i, j)] * w[i]);
            let mut gram = x.transpose() * &xw;
            let ridge = 1e-6 * (gram.trace() / d as f64).max(1e-12);
            for j in 0..d {
                gram[(j, j)] += ridge;
            }
            let rhs = xw.transpose() * y;
            let coef = match gram.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => DMatrix::zeros(d, q),
            };
            let resid = y - x * coef;
            let var: Vec<f64> = (0..q)
                .map(|z| ((0..n).map(|i| w[i] * resid[(i, z)].powi(2)).sum::<f64>() / nk).max(var_floor[z]))
                .collect();
            let log_pi = (nk / n as f64).ln();
            for i in 0..n {
                let mut l = log_pi;
                for z in 0..q {
                    l -= 0.5 * ((2.0 * std::f64::consts::PI * var[z]).ln() + resid[(i, z)].powi(2) / var[z]);
                }
                logw[(i, c)] = l;
            }
        }
        loglik = 0.0;
        for i in 0..n {
            let mx = logw.row(i).max();
            let s: f64 = logw.row(i).iter().map(|v| (v - mx).exp()).sum();
            loglik += mx + s.ln();
            for c in 0..k {
                gamma[(i, c)] = (logw[(i, c)] - mx).exp() / s;
            }
        }
    }
    (gamma, loglik)
}

fn design(data: &Dataset, cols: &[usize]) -> DMatrix<f64> {
    let n = data.n();
    let mut x = DMatrix::from_fn(n, cols.len() + 1, |i, j| if j < cols.len() { data.x()[(i, cols[j])] } else { 1.0 });
    for j in 0..cols.len() {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    x
}

fn random_start_em(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    let n = x.nrows();
    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for _ in 0..SCREEN_STARTS {
        let labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let g0 = DMatrix::from_fn(n, k, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
        let (g, ll) = regression_em(x, y, g0, SCREEN_EM_ITERS);
        if ll.is_finite() && best.as_ref().map_or(true, |b| ll > b.1) {
            best = Some((g, ll));
        }
    }
    best.map(|b| b.0)
}

fn hard(gamma: &DMatrix<f64>) -> Responsibilities {
    let k = gamma.ncols();
    let labels: Vec<usize> = (0..gamma.nrows())
        .map(|i| (0..k).max_by(|&a, &b| gamma[(i, a)].total_cmp(&gamma[(i, b)])).unwrap())
        .collect();
    Responsibilities::from_labels(&labels, k)
}

/// Clustering of a mixture of regressions without the full design: a short
/// EM from random partitions on the `n / (8k)` most response-correlated
/// predictors, then rounds of re-screening `n / (4k)` predictors within the
/// current clusters and refitting. Deterministic given `seed`.
pub fn regression_responsibilities(data: &Dataset, k: usize, seed: u64) -> Responsibilities {
    let n = data.n();
    if k <= 1 {
        return Responsibilities::from_labels(&vec![0; n], 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = screened_columns(data, (n / (8 * k)).max(1));
    let Some(mut gamma) = random_start_em(&design(data, &cols), data.y(), k, &mut rng) else {
        return kmeans_responsibilities(data, k, seed);
    };
    for _ in 0..REFINE_ROUNDS {
        let cols = cluster_screened_columns(data, &gamma, (n / (4 * k)).max(1));
        let (g, ll) = regression_em(&design(data, &cols), data.y(), gamma.clone(), SCREEN_EM_ITERS);
        if !ll.is_finite() {
            break;
        }
        gamma = g;
    }
    hard(&gamma)
}

/// Best of several random-partition starts of a short mixture-of-regressions
/// EM on the predictor columns `cols` plus an intercept.
pub fn regression_responsibilities_on(data: &Dataset, cols: &[usize], k: usize, seed: u64) -> Responsibilities {
    let n = data.n();
    if k <= 1 {
        return Responsibilities::from_labels(&vec![0; n], 1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match random_start_em(&design(data, cols), data.y(), k, &mut rng) {
        Some(g) => hard(&g),
        None => kmeans_responsibilities(data, k, seed),
    }
}
