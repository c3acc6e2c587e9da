//! Synthetic sparse low-rank mixtures of regressions.

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::init::derive_seed;
use crate::model::{Dataset, MixtureRegressionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub j_size: usize,
    pub ranks: Vec<usize>,
    /// Covariate scale: rows of `X` are `N(0, rho I)`.
    pub rho: f64,
    pub b: Vec<f64>,
    pub pi: Vec<f64>,
    pub noise_sd: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl SimConfig {
    /// `n = 50, p = 100`.
    pub fn p_gt_n(seed: u64) -> Self {
        Self::two_cluster(50, 100, 0.1, seed)
    }

    /// `n = 200, p = 10`.
    pub fn p_lt_n(seed: u64) -> Self {
        Self::two_cluster(200, 10, 0.01, seed)
    }

    fn two_cluster(n: usize, p: usize, rho: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            q: 10,
            j_size: 6,
            ranks: vec![3, 3],
            rho,
            b: vec![3.0, -3.0],
            pi: vec![0.5, 0.5],
            noise_sd: 1.0,
            n_test: n,
            seed,
        }
    }

    pub fn k(&self) -> usize {
        self.ranks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.b.len() != k || self.pi.len() != k {
            return Err(MixError::InvalidInput(format!(
                "ranks, b and pi must have the same positive length (got {}, {}, {})",
                k,
                self.b.len(),
                self.pi.len()
            )));
        }
        if self.n == 0 || self.n_test == 0 || self.p == 0 || self.q == 0 {
            return Err(MixError::InvalidInput("n, n_test, p and q must be positive".into()));
        }
        if self.j_size == 0 || self.j_size > self.p {
            return Err(MixError::InvalidInput(format!("need 1 <= |J| <= p, got |J|={}", self.j_size)));
        }
        let cap = self.j_size.min(self.q);
        if self.ranks.iter().any(|&r| r == 0 || r > cap) {
            return Err(MixError::InvalidInput(format!("ranks {:?} must lie in 1..={cap}", self.ranks)));
        }
        if !(self.rho > 0.0) || !(self.noise_sd > 0.0) {
            return Err(MixError::InvalidInput("rho and noise_sd must be > 0".into()));
        }
        if self.pi.iter().any(|&p| !(p > 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(MixError::InvalidInput(format!("invalid proportions {:?}", self.pi)));
        }
        Ok(())
    }
}

/// The generating model with its relevant columns and ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub model: MixtureRegressionModel,
    pub support: Vec<usize>,
    pub ranks: Vec<usize>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        scale * e
    })
}

fn sample(
    truth: &MixtureRegressionModel,
    n: usize,
    rho: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, q) = (truth.p(), truth.q());
    let comp = WeightedIndex::new(truth.pi()).map_err(|e| MixError::InvalidInput(e.to_string()))?;
    let labels: Vec<usize> = (0..n).map(|_| comp.sample(&mut rng)).collect();
    let x = gaussian_matrix(&mut rng, n, p, rho.sqrt());
    let mut y = gaussian_matrix(&mut rng, n, q, noise_sd);
    for (i, &k) in labels.iter().enumerate() {
        let mean = &truth.beta()[k] * x.row(i).transpose();
        for z in 0..q {
            y[(i, z)] += mean[z];
        }
    }
    Dataset::new(x, y, Some(labels))
}

/// Draws the true model, then independent training and test samples.
pub fn generate(cfg: &SimConfig) -> Result<(Dataset, Dataset, TrueModel)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let beta: Vec<DMatrix<f64>> = cfg
        .ranks
        .iter()
        .zip(&cfg.b)
        .map(|(&r, &b)| {
            let b0 = gaussian_matrix(&mut rng, cfg.j_size, r, 1.0);
            let b1 = gaussian_matrix(&mut rng, r, cfg.q, 1.0);
            let active = (b0 * b1).transpose() * b;
            let mut full = DMatrix::zeros(cfg.q, cfg.p);
            full.columns_mut(0, cfg.j_size).copy_from(&active);
            full
        })
        .collect();
    let sigma = vec![vec![cfg.noise_sd * cfg.noise_sd; cfg.q]; cfg.k()];
    let model = MixtureRegressionModel::new(cfg.pi.clone(), beta, sigma)?;
    let train = sample(&model, cfg.n, cfg.rho, cfg.noise_sd, derive_seed(cfg.seed, &[1]))?;
    let test = sample(&model, cfg.n_test, cfg.rho, cfg.noise_sd, derive_seed(cfg.seed, &[2]))?;
    let truth = TrueModel { model, support: (0..cfg.j_size).collect(), ranks: cfg.ranks.clone() };
    Ok((train, test, truth))
}
