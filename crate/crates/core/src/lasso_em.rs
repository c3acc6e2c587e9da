//! Generalized EM for the l1-penalized mixture of regressions in the rescaled
//! parametrization `(phi_k, P_k)`, and the data-driven regularization grid.
//!
//! The penalized objective is
//!
//! ```text
//! -(1/n) sum_i log s(y_i | x_i) + lambda * sum_k pi_k ||phi_k||_1
//! ```
//!
//! With diagonal `P_k` the M-step separates over (cluster, response
//! coordinate). Each block (proportions, one coefficient of `phi_k`, one
//! diagonal entry of `P_k`) is minimized exactly with the others held fixed,
//! so every block update weakly decreases the surrogate.

use nalgebra::DMatrix;

use crate::error::{MixError, Result};
use crate::init::{derive_seed, kmeans_responsibilities, regression_responsibilities};
use crate::model::{log_sum_exp, Dataset, MixtureRegressionModel, RescaledParameters, LN_2PI};

/// Columns whose largest rescaled coefficient (in absolute value) exceeds this
/// are reported as relevant.
pub const SUPPORT_EPS: f64 = 1e-7;

const MAX_RESEEDS: u64 = 5;

/// Posterior cluster-membership weights, `n x K`, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    gamma: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.ncols() == 0 || gamma.nrows() == 0 {
            return Err(MixError::InvalidInput("empty responsibility matrix".into()));
        }
        for i in 0..gamma.nrows() {
            let row = gamma.row(i);
            if row.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                return Err(MixError::InvalidInput(format!("row {i} has entries outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(MixError::InvalidInput(format!("row {i} does not sum to 1")));
            }
        }
        Ok(Self { gamma })
    }

    /// One-hot responsibilities for hard labels in `0..k`.
    pub fn from_labels(labels: &[usize], k: usize) -> Self {
        let mut gamma = DMatrix::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            gamma[(i, l)] = 1.0;
        }
        Self { gamma }
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols()
    }

    /// MAP cluster of every row; ties go to the lowest index.
    pub fn map_labels(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                let row = self.gamma.row(i);
                let mut best = 0;
                for k in 1..self.k() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn cluster_weights(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.gamma.column(k).sum()).collect()
    }
}

fn softmax_rows(logw: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (n, k) = logw.shape();
    let mut gamma = DMatrix::zeros(n, k);
    let mut total = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        for (c, r) in row.iter_mut().enumerate() {
            *r = logw[(i, c)];
        }
        let lse = log_sum_exp(&row);
        total += lse;
        for c in 0..k {
            gamma[(i, c)] = (row[c] - lse).exp();
        }
    }
    (gamma, total)
}

/// `n x K` log weights `log pi_k + log det P_k - |P_k y_i - phi_k x_i|^2 / 2 - (q/2) log 2 pi`.
fn rescaled_log_weights(
    pi: &[f64],
    phi: &[DMatrix<f64>],
    p_diag: &[Vec<f64>],
    data: &Dataset,
) -> DMatrix<f64> {
    let n = data.n();
    let q = data.q();
    let mut out = DMatrix::zeros(n, pi.len());
    for k in 0..pi.len() {
        let fitted = data.x() * phi[k].transpose();
        let base = pi[k].ln() + p_diag[k].iter().map(|v| v.ln()).sum::<f64>()
            - 0.5 * q as f64 * LN_2PI;
        for i in 0..n {
            let mut quad = 0.0;
            for z in 0..q {
                let r = p_diag[k][z] * data.y()[(i, z)] - fitted[(i, z)];
                quad += r * r;
            }
            out[(i, k)] = base - 0.5 * quad;
        }
    }
    out
}

/// E-step: posterior membership probabilities under `model`.
pub fn estep(model: &MixtureRegressionModel, data: &Dataset) -> Result<Responsibilities> {
    model.check_dims(data.p(), data.q())?;
    let r = model.to_rescaled();
    let logw = rescaled_log_weights(model.pi(), &r.phi, &r.p_diag, data);
    Ok(Responsibilities { gamma: softmax_rows(&logw).0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFitConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Coordinate-descent sweeps per M-step.
    pub inner_max_sweeps: usize,
    pub inner_tol: f64,
    /// Minimum `sum_i gamma_ik` before a cluster counts as collapsed.
    pub cluster_floor: f64,
}

impl Default for LassoFitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iter: 200,
            rel_tol: 1e-6,
            n_restarts: 5,
            seed: 0,
            inner_max_sweeps: 20,
            inner_tol: 1e-8,
            cluster_floor: 1.0,
        }
    }
}

impl LassoFitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(MixError::InvalidInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iter == 0 || !(self.rel_tol > 0.0) || self.n_restarts == 0 {
            return Err(MixError::InvalidInput(
                "need max_iter >= 1, rel_tol > 0 and n_restarts >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one penalized fit at a fixed `lambda`.
#[derive(Debug, Clone)]
pub struct SupportResult {
    pub lambda: f64,
    /// Relevant columns (0-based, sorted); empty when every coefficient is zero.
    pub support: Vec<usize>,
    pub model: MixtureRegressionModel,
    pub rescaled: RescaledParameters,
    pub objective: f64,
    /// Posterior responsibilities under the final parameters.
    pub responsibilities: Responsibilities,
    /// Penalized objective after each EM iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Mutable EM iterate in the rescaled parametrization.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoState {
    pub pi: Vec<f64>,
    pub phi: Vec<DMatrix<f64>>,
    pub p_diag: Vec<Vec<f64>>,
}

impl LassoState {
    /// Zero means, proportions and precisions at their weighted optimum.
    pub fn null(data: &Dataset, gamma: &Responsibilities) -> Result<Self> {
        let (n, q, p) = (data.n(), data.q(), data.p());
        let weights = gamma.cluster_weights();
        let mut p_diag = Vec::with_capacity(gamma.k());
        for (k, &nk) in weights.iter().enumerate() {
            let mut row = Vec::with_capacity(q);
            for z in 0..q {
                let a: f64 = (0..n).map(|i| gamma.gamma[(i, k)] * data.y()[(i, z)].powi(2)).sum();
                if !(a > 0.0) || !(nk > 0.0) {
                    return Err(MixError::DegenerateFit(format!(
                        "response {z} carries no weight in cluster {k}"
                    )));
                }
                row.push((nk / a).sqrt());
            }
            p_diag.push(row);
        }
        Ok(Self {
            pi: weights.iter().map(|w| w / n as f64).collect(),
            phi: vec![DMatrix::zeros(q, p); gamma.k()],
            p_diag,
        })
    }

    fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for v in self.pi.iter().chain(self.p_diag.iter().flatten()) {
            m = m.max(v.abs());
        }
        for f in &self.phi {
            m = m.max(f.amax());
        }
        m
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = 0.0f64;
        for (a, b) in self.pi.iter().zip(&other.pi) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.p_diag.iter().flatten().zip(other.p_diag.iter().flatten()) {
            m = m.max((a - b).abs());
        }
        for (a, b) in self.phi.iter().zip(&other.phi) {
            m = m.max((a - b).amax());
        }
        m
    }
}

/// Which M-step block a trace entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Proportions,
    Mean { k: usize, z: usize, j: usize },
    Precision { k: usize, z: usize },
}

/// Surrogate value before and after one block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTrace {
    pub block: Block,
    pub before: f64,
    pub after: f64,
}

struct Monitor {
    /// Largest `|c| / pi_k` seen in a coefficient update, where `c` is the
    /// unthresholded coordinate optimum numerator.
    max_zero_ratio: f64,
    trace: Option<Vec<BlockTrace>>,
}

enum StepError {
    Collapsed,
    Other(MixError),
}

impl From<MixError> for StepError {
    fn from(e: MixError) -> Self {
        StepError::Other(e)
    }
}

/// One penalized problem: data, cluster count and regularization level.
pub struct LassoProblem<'a> {
    data: &'a Dataset,
    k: usize,
    lambda: f64,
    inner_max_sweeps: usize,
    inner_tol: f64,
    cluster_floor: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(data: &'a Dataset, k: usize, lambda: f64) -> Self {
        let d = LassoFitConfig::default();
        Self {
            data,
            k,
            lambda,
            inner_max_sweeps: d.inner_max_sweeps,
            inner_tol: d.inner_tol,
            cluster_floor: d.cluster_floor,
        }
    }

    fn with_config(data: &'a Dataset, k: usize, lambda: f64, cfg: &LassoFitConfig) -> Self {
        Self {
            data,
            k,
            lambda,
            inner_max_sweeps: cfg.inner_max_sweeps.max(1),
            inner_tol: cfg.inner_tol,
            cluster_floor: cfg.cluster_floor,
        }
    }

    pub fn penalty(&self, state: &LassoState) -> f64 {
        state
            .pi
            .iter()
            .zip(&state.phi)
            .map(|(&pk, f)| {
                let a: f64 = f.iter().map(|v| v.abs()).sum();
                if a == 0.0 {
                    0.0
                } else {
                    self.lambda * pk * a
                }
            })
            .sum()
    }

    /// Penalized objective `-(1/n) loglik + penalty` together with the
    /// posterior responsibilities at `state`.
    pub fn objective_and_estep(&self, state: &LassoState) -> (f64, Responsibilities) {
        let logw = rescaled_log_weights(&state.pi, &state.phi, &state.p_diag, self.data);
        let (gamma, ll) = softmax_rows(&logw);
        (-ll / self.data.n() as f64 + self.penalty(state), Responsibilities { gamma })
    }

    /// Expected complete-data penalized criterion given fixed responsibilities
    /// (additive constants dropped).
    pub fn surrogate(&self, state: &LassoState, gamma: &Responsibilities) -> f64 {
        let (n, q) = (self.data.n(), self.data.q());
        let mut total = 0.0;
        for k in 0..self.k {
            let fitted = self.data.x() * state.phi[k].transpose();
            let log_det: f64 = state.p_diag[k].iter().map(|v| v.ln()).sum();
            for i in 0..n {
                let g = gamma.gamma[(i, k)];
                if g == 0.0 {
                    continue;
                }
                let mut quad = 0.0;
                for z in 0..q {
                    let r = state.p_diag[k][z] * self.data.y()[(i, z)] - fitted[(i, z)];
                    quad += r * r;
                }
                total += g * (state.pi[k].ln() + log_det - 0.5 * quad);
            }
        }
        -total / n as f64 + self.penalty(state)
    }

    /// Runs one M-step and records the surrogate around every block update.
    pub fn instrumented_m_step(
        &self,
        state: &mut LassoState,
        gamma: &Responsibilities,
    ) -> Result<Vec<BlockTrace>> {
        let mut monitor = Monitor { max_zero_ratio: 0.0, trace: Some(Vec::new()) };
        match self.m_step(state, gamma, &mut monitor) {
            Ok(()) => Ok(monitor.trace.unwrap_or_default()),
            Err(StepError::Collapsed) => Err(MixError::DegenerateFit("cluster collapsed".into())),
            Err(StepError::Other(e)) => Err(e),
        }
    }

    /// Runs a single M-step; used to inspect one update in isolation.
    pub fn m_step_once(&self, state: &mut LassoState, gamma: &Responsibilities) -> Result<()> {
        let mut monitor = Monitor { max_zero_ratio: 0.0, trace: None };
        match self.m_step(state, gamma, &mut monitor) {
            Ok(()) => Ok(()),
            Err(StepError::Collapsed) => Err(MixError::DegenerateFit("cluster collapsed".into())),
            Err(StepError::Other(e)) => Err(e),
        }
    }

    fn record(&self, monitor: &mut Monitor, block: Block, before: f64, state: &LassoState, gamma: &Responsibilities) {
        if let Some(t) = monitor.trace.as_mut() {
            let after = self.surrogate(state, gamma);
            t.push(BlockTrace { block, before, after });
        }
    }

    fn before(&self, monitor: &Monitor, state: &LassoState, gamma: &Responsibilities) -> f64 {
        if monitor.trace.is_some() {
            self.surrogate(state, gamma)
        } else {
            0.0
        }
    }

    fn m_step(
        &self,
        state: &mut LassoState,
        gamma: &Responsibilities,
        monitor: &mut Monitor,
    ) -> std::result::Result<(), StepError> {
        let (n, p, q) = (self.data.n(), self.data.p(), self.data.q());
        let nf = n as f64;
        let weights = gamma.cluster_weights();
        if weights.iter().any(|&w| w < self.cluster_floor) {
            return Err(StepError::Collapsed);
        }
        let xs = self.data.x().as_slice();
        let ys = self.data.y().as_slice();

        let before = self.before(monitor, state, gamma);
        let l1: Vec<f64> = state.phi.iter().map(|f| f.iter().map(|v| v.abs()).sum()).collect();
        state.pi = update_proportions(&state.pi, &weights, &l1, self.lambda, nf);
        self.record(monitor, Block::Proportions, before, state, gamma);

        let mut fitted = vec![0.0; n];
        for k in 0..self.k {
            let w = gamma.gamma.column(k);
            let pi_k = state.pi[k];
            let second_moment: Vec<f64> = (0..p)
                .map(|j| {
                    let col = &xs[j * n..(j + 1) * n];
                    col.iter().zip(w.iter()).map(|(x, g)| g * x * x).sum::<f64>() / nf
                })
                .collect();
            for z in 0..q {
                let yz = &ys[z * n..(z + 1) * n];
                let a: f64 = yz.iter().zip(w.iter()).map(|(y, g)| g * y * y).sum();
                if !(a > 0.0) {
                    return Err(StepError::Other(MixError::DegenerateFit(format!(
                        "response {z} has zero weighted energy in cluster {k}"
                    ))));
                }
                for (i, f) in fitted.iter_mut().enumerate() {
                    *f = (0..p).map(|j| state.phi[k][(z, j)] * xs[j * n + i]).sum();
                }
                for _sweep in 0..self.inner_max_sweeps {
                    let mut delta = 0.0f64;
                    for j in 0..p {
                        let before = self.before(monitor, state, gamma);
                        let old = state.phi[k][(z, j)];
                        let sj = second_moment[j];
                        let new = if sj > 0.0 {
                            let col = &xs[j * n..(j + 1) * n];
                            let rho = state.p_diag[k][z];
                            let mut g = 0.0;
                            for i in 0..n {
                                g += w[i] * col[i] * (rho * yz[i] - fitted[i]);
                            }
                            let c = g / nf + sj * old;
                            let ratio = c.abs() / pi_k;
                            monitor.max_zero_ratio = monitor.max_zero_ratio.max(ratio);
                            if ratio <= self.lambda {
                                0.0
                            } else {
                                (c - c.signum() * self.lambda * pi_k) / sj
                            }
                        } else {
                            0.0
                        };
                        if new != old {
                            let col = &xs[j * n..(j + 1) * n];
                            let d = new - old;
                            for (f, x) in fitted.iter_mut().zip(col) {
                                *f += d * x;
                            }
                            state.phi[k][(z, j)] = new;
                            delta = delta.max(d.abs());
                        }
                        self.record(monitor, Block::Mean { k, z, j }, before, state, gamma);
                    }

                    // precision: positive root of  rho^2 a - rho b - n_k = 0
                    let before = self.before(monitor, state, gamma);
                    let b: f64 = (0..n).map(|i| w[i] * yz[i] * fitted[i]).sum();
                    let rho_old = state.p_diag[k][z];
                    let rho = (b + (b * b + 4.0 * a * weights[k]).sqrt()) / (2.0 * a);
                    state.p_diag[k][z] = rho;
                    self.record(monitor, Block::Precision { k, z }, before, state, gamma);
                    delta = delta.max((rho - rho_old).abs() / rho_old);
                    if delta < self.inner_tol {
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs the EM from `init` responsibilities. The first M-step uses `init`
    /// directly; subsequent ones use the E-step of the current iterate.
    fn run(
        &self,
        init: &Responsibilities,
        max_iter: usize,
        rel_tol: f64,
        monitor: &mut Monitor,
    ) -> std::result::Result<RunOutcome, StepError> {
        let nf = self.data.n() as f64;
        let mut state = LassoState::null(self.data, init).map_err(StepError::Other)?;
        state.pi = average_proportions(&init.cluster_weights(), nf);
        let mut gamma = init.clone();
        let mut history = Vec::with_capacity(max_iter);
        let mut converged = false;
        let mut prev: Option<f64> = None;
        for _ in 0..max_iter {
            let old = state.clone();
            self.m_step(&mut state, &gamma, monitor)?;
            let (obj, post) = self.objective_and_estep(&state);
            if !obj.is_finite() {
                return Err(StepError::Other(MixError::DegenerateFit(
                    "non-finite penalized objective".into(),
                )));
            }
            history.push(obj);
            gamma = post;
            if let Some(prev_obj) = prev {
                let rel_obj = (obj - prev_obj).abs() / prev_obj.abs().max(f64::MIN_POSITIVE);
                let rel_par = state.max_abs_diff(&old) / old.max_abs().max(f64::MIN_POSITIVE);
                if rel_obj < rel_tol && rel_par < rel_tol {
                    converged = true;
                    break;
                }
            }
            prev = Some(obj);
        }
        Ok(RunOutcome {
            objective: *history.last().unwrap(),
            state,
            gamma,
            iterations: history.len(),
            history,
            converged,
        })
    }
}

struct RunOutcome {
    state: LassoState,
    gamma: Responsibilities,
    objective: f64,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Proportion block of the M-step: moves `current` toward the responsibility
/// averages `w_k / n`, halving the step until
/// `-sum_k (w_k / n) log pi_k + lambda sum_k pi_k l1_k` does not increase.
pub fn update_proportions(current: &[f64], weights: &[f64], l1: &[f64], lambda: f64, n: f64) -> Vec<f64> {
    let target = average_proportions(weights, n);
    let f = |p: &[f64]| -> f64 {
        p.iter()
            .zip(weights)
            .zip(l1)
            .map(|((&p, &w), &a)| {
                let pen = if a == 0.0 { 0.0 } else { lambda * p * a };
                -w / n * p.ln() + pen
            })
            .sum()
    };
    let start = f(current);
    let mut t = 1.0;
    for _ in 0..40 {
        let cand: Vec<f64> = current.iter().zip(&target).map(|(c, g)| c + t * (g - c)).collect();
        if f(&cand) <= start {
            return cand;
        }
        t *= 0.5;
    }
    current.to_vec()
}

fn average_proportions(weights: &[f64], n: f64) -> Vec<f64> {
    let v: Vec<f64> = weights.iter().map(|w| w / n).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn support_of(phi: &[DMatrix<f64>]) -> Vec<usize> {
    let p = phi[0].ncols();
    (0..p)
        .filter(|&j| phi.iter().any(|f| f.column(j).amax() > SUPPORT_EPS))
        .collect()
}

fn finish(lambda: f64, out: RunOutcome) -> Result<SupportResult> {
    let rescaled = RescaledParameters { phi: out.state.phi.clone(), p_diag: out.state.p_diag.clone() };
    let model = MixtureRegressionModel::from_rescaled(out.state.pi.clone(), &rescaled)?;
    Ok(SupportResult {
        lambda,
        support: support_of(&out.state.phi),
        model,
        rescaled,
        objective: out.objective,
        responsibilities: out.gamma,
        objective_history: out.history,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Runs the penalized EM from given initial responsibilities (no restarts).
pub fn lasso_em_from_init(
    data: &Dataset,
    k: usize,
    cfg: &LassoFitConfig,
    init: &Responsibilities,
) -> Result<SupportResult> {
    cfg.validate()?;
    if init.n() != data.n() || init.k() != k {
        return Err(MixError::DimensionMismatch("initial responsibilities do not match (n, K)".into()));
    }
    let problem = LassoProblem::with_config(data, k, cfg.lambda, cfg);
    let mut monitor = Monitor { max_zero_ratio: 0.0, trace: None };
    match problem.run(init, cfg.max_iter, cfg.rel_tol, &mut monitor) {
        Ok(out) => finish(cfg.lambda, out),
        Err(StepError::Collapsed) => Err(MixError::DegenerateFit("cluster collapsed".into())),
        Err(StepError::Other(e)) => Err(e),
    }
}

/// Best run across restarts, plus the largest zeroing ratio observed.
fn fit_with_restarts(
    data: &Dataset,
    k: usize,
    lambda: f64,
    cfg: &LassoFitConfig,
) -> Result<(RunOutcome, f64)> {
    if k == 0 {
        return Err(MixError::InvalidInput("K must be >= 1".into()));
    }
    if data.n() < k {
        return Err(MixError::InvalidInput(format!("n={} < K={k}", data.n())));
    }
    let problem = LassoProblem::with_config(data, k, lambda, cfg);
    let mut monitor = Monitor { max_zero_ratio: 0.0, trace: None };
    let mut best: Option<RunOutcome> = None;
    let mut last_err: Option<MixError> = None;
    for restart in 0..cfg.n_restarts as u64 {
        for attempt in 0..MAX_RESEEDS {
            let seed = derive_seed(cfg.seed, &[k as u64, restart, attempt]);
            let init = if restart % 2 == 0 {
                regression_responsibilities(data, k, seed)
            } else {
                kmeans_responsibilities(data, k, seed)
            };
            match problem.run(&init, cfg.max_iter, cfg.rel_tol, &mut monitor) {
                Ok(out) => {
                    if best.as_ref().map_or(true, |b| out.objective < b.objective) {
                        best = Some(out);
                    }
                    break;
                }
                Err(StepError::Collapsed) => {
                    log::debug!("restart {restart} attempt {attempt}: cluster collapsed, reseeding");
                }
                Err(StepError::Other(e)) => {
                    last_err = Some(e);
                    break;
                }
            }
        }
        if k == 1 {
            // a single cluster does not depend on the initialization
            break;
        }
    }
    match best {
        Some(b) => Ok((b, monitor.max_zero_ratio)),
        None => Err(last_err.unwrap_or_else(|| {
            MixError::DegenerateFit(format!("every restart collapsed a cluster (K={k})"))
        })),
    }
}

/// Penalized EM at `cfg.lambda`, best of `cfg.n_restarts` starts alternating
/// between screened regression clustering and k-means++.
pub fn lasso_em_fit(data: &Dataset, k: usize, cfg: &LassoFitConfig) -> Result<SupportResult> {
    cfg.validate()?;
    let (out, _) = fit_with_restarts(data, k, cfg.lambda, cfg)?;
    finish(cfg.lambda, out)
}

/// Smallest regularization level at which [`lasso_em_fit`] with the same
/// configuration keeps every coefficient at zero.
///
/// The all-zero trajectory is replayed with an infinite penalty; the largest
/// `|c| / pi_k` met by any coefficient update along it is the threshold.
pub fn lambda_max(data: &Dataset, k: usize, cfg: &LassoFitConfig) -> Result<f64> {
    if data.y().iter().all(|&v| v == 0.0) {
        return Err(MixError::NoInformativeGrid("responses are identically zero".into()));
    }
    let mut probe = cfg.clone();
    probe.lambda = f64::INFINITY;
    let (_, ratio) = fit_with_restarts(data, k, f64::INFINITY, &probe)?;
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(MixError::NoInformativeGrid(format!(
            "zeroing threshold is {ratio}; covariates carry no signal"
        )));
    }
    Ok(ratio)
}

/// `g` log-spaced regularization levels on `[1e-3 lambda_max, lambda_max]`.
pub fn lambda_grid(data: &Dataset, k: usize, g: usize, cfg: &LassoFitConfig) -> Result<Vec<f64>> {
    if g < 2 {
        return Err(MixError::InvalidInput(format!("grid size must be >= 2, got {g}")));
    }
    let top = lambda_max(data, k, cfg)?;
    Ok(log_spaced(1e-3 * top, top, g))
}

pub(crate) fn log_spaced(lo: f64, hi: f64, g: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = (0..g)
        .map(|i| (a + (b - a) * i as f64 / (g - 1) as f64).exp())
        .collect();
    v[0] = lo;
    v[g - 1] = hi;
    v
}
