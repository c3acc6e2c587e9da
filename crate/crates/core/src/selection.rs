//! Penalized-likelihood model selection: slope heuristic with dimension jump,
//! the theoretical penalty shape with Kraft weights, and BIC.

use std::cmp::Ordering;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::collection::Collection;
use crate::error::{MixError, Result};
use crate::model::{dimension, BoundsConfig, DimensionMode, ModelIndex};
use crate::rank_em::FittedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    SlopeDimensionJump,
    Theoretical,
    Bic,
}

impl std::str::FromStr for SelectionMode {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slope" | "slope-dimension-jump" => Ok(Self::SlopeDimensionJump),
            "theoretical" => Ok(Self::Theoretical),
            "bic" => Ok(Self::Bic),
            other => Err(MixError::InvalidInput(format!("unknown selection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Fixed `kappa`; `None` calibrates it with the dimension jump.
    pub kappa: Option<f64>,
    pub bounds: BoundsConfig,
    pub mode: SelectionMode,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { kappa: None, bounds: BoundsConfig::default(), mode: SelectionMode::SlopeDimensionJump }
    }
}

/// The statistics of one model that selection looks at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: ModelIndex,
    pub loglik: f64,
    pub dim_means: usize,
    pub dim_full: usize,
}

impl From<&FittedModel> for Candidate {
    fn from(f: &FittedModel) -> Self {
        Self { index: f.index.clone(), loglik: f.loglik, dim_means: f.dim_means, dim_full: f.dim_full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub index: ModelIndex,
    pub loglik: f64,
    pub dim_means: usize,
    pub dim_full: usize,
    pub penalty: f64,
    pub criterion: f64,
}

/// Diagnostics of the dimension-jump calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTrace {
    /// One probe inside each interval between consecutive breakpoints, in
    /// increasing order, plus one beyond either end.
    pub kappas: Vec<f64>,
    /// Penalty-shape value of the model selected at each `kappa`.
    pub selected_shape: Vec<f64>,
    pub kappa_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Position of the chosen model in the candidate list.
    pub chosen: usize,
    pub chosen_index: ModelIndex,
    pub kappa_used: f64,
    pub mode_used: SelectionMode,
    /// Set when the requested calibration was not possible and BIC was used.
    pub fell_back_to_bic: bool,
    pub jump: Option<JumpTrace>,
    pub criterion_table: Vec<CriterionRow>,
}

fn tie_key(c: &Candidate) -> (usize, usize, usize, usize) {
    (c.dim_full, c.index.k, c.index.support.len(), c.index.rank_sum())
}

/// Index minimizing `criterion`; ties broken by smaller full dimension, then
/// `(K, |J|, sum R)`, then the index itself.
pub fn argmin_criterion(cands: &[Candidate], criterion: &[f64]) -> usize {
    (0..cands.len())
        .min_by(|&a, &b| {
            criterion[a]
                .total_cmp(&criterion[b])
                .then_with(|| tie_key(&cands[a]).cmp(&tie_key(&cands[b])))
                .then_with(|| cands[a].index.cmp(&cands[b].index))
        })
        .expect("non-empty candidate list")
}

fn table(cands: &[Candidate], penalties: &[f64], n: usize) -> (Vec<CriterionRow>, Vec<f64>) {
    let nf = n as f64;
    let crit: Vec<f64> = cands.iter().zip(penalties).map(|(c, &pen)| -c.loglik / nf + pen).collect();
    let rows = cands
        .iter()
        .zip(penalties)
        .zip(&crit)
        .map(|((c, &penalty), &criterion)| CriterionRow {
            index: c.index.clone(),
            loglik: c.loglik,
            dim_means: c.dim_means,
            dim_full: c.dim_full,
            penalty,
            criterion,
        })
        .collect();
    (rows, crit)
}

fn slope(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1) / (b.0 - a.0)
}

/// Positive slopes between consecutive vertices of the upper concave hull of
/// `(shape, loglik)` points sorted by shape, up to the highest loglik: the
/// `kappa` values at which the penalized argmin changes.
fn hull_slopes(points: &[(f64, f64)]) -> Vec<f64> {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &pt in points {
        while hull.len() >= 2 && slope(hull[hull.len() - 2], hull[hull.len() - 1]) <= slope(hull[hull.len() - 1], pt) {
            hull.pop();
        }
        hull.push(pt);
    }
    hull.windows(2)
        .map(|w| slope(w[0], w[1]))
        .take_while(|s| *s > 0.0)
        .filter(|s| s.is_finite())
        .collect()
}

/// Dimension-jump calibration of `kappa` for penalties `kappa * shape / n`.
///
/// Returns `None` when the selected shape never changes over the scan.
pub fn dimension_jump(cands: &[Candidate], shape: &[f64], n: usize) -> Option<JumpTrace> {
    let nf = n as f64;
    // best loglik per distinct shape value
    let mut by_shape: Vec<(f64, f64)> = Vec::new();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| shape[a].total_cmp(&shape[b]));
    for &i in &order {
        match by_shape.last_mut() {
            Some((s, ll)) if *s == shape[i] => *ll = ll.max(cands[i].loglik),
            _ => by_shape.push((shape[i], cands[i].loglik)),
        }
    }
    let mut breaks = hull_slopes(&by_shape);
    if breaks.is_empty() {
        return None;
    }
    breaks.reverse();
    let mut kappas = vec![0.5 * breaks[0]];
    kappas.extend(breaks.windows(2).map(|w| (w[0] * w[1]).sqrt()));
    kappas.push(2.0 * breaks[breaks.len() - 1]);
    let selected_shape: Vec<f64> = kappas
        .iter()
        .map(|&kappa| {
            let crit: Vec<f64> =
                cands.iter().zip(shape).map(|(c, &s)| -c.loglik / nf + kappa * s / nf).collect();
            shape[argmin_criterion(cands, &crit)]
        })
        .collect();
    let mut best_drop = 0.0;
    let mut at = None;
    for (i, &b) in breaks.iter().enumerate() {
        let drop = selected_shape[i] - selected_shape[i + 1];
        if drop > best_drop {
            best_drop = drop;
            at = Some(b);
        }
    }
    at.map(|kappa_hat| JumpTrace { kappa_hat, kappas, selected_shape })
}

/// BIC: `-2 loglik + dim_full log n`, reported on the `1/n` scale used by the
/// other criteria (`-loglik/n + dim_full log n / (2n)`), which has the same argmin.
pub fn bic_select(cands: &[Candidate], n: usize) -> Result<SelectionResult> {
    if cands.is_empty() {
        return Err(MixError::EmptyCollection("nothing to select from".into()));
    }
    let nf = n as f64;
    let pens: Vec<f64> = cands.iter().map(|c| c.dim_full as f64 * nf.ln() / (2.0 * nf)).collect();
    let (rows, crit) = table(cands, &pens, n);
    let chosen = argmin_criterion(cands, &crit);
    Ok(SelectionResult {
        chosen,
        chosen_index: cands[chosen].index.clone(),
        kappa_used: nf.ln() / 2.0,
        mode_used: SelectionMode::Bic,
        fell_back_to_bic: false,
        jump: None,
        criterion_table: rows,
    })
}

/// Slope heuristic on an arbitrary penalty shape; falls back to BIC when
/// fewer than three distinct shape values exist or no jump is found.
pub fn slope_select_shape(
    cands: &[Candidate],
    shape: &[f64],
    n: usize,
    mode: SelectionMode,
) -> Result<SelectionResult> {
    if cands.is_empty() {
        return Err(MixError::EmptyCollection("nothing to select from".into()));
    }
    let mut distinct: Vec<f64> = shape.to_vec();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let jump = if distinct.len() >= 3 { dimension_jump(cands, shape, n) } else { None };
    let Some(jump) = jump else {
        log::warn!("slope heuristic unavailable ({} distinct dimensions); using BIC", distinct.len());
        let mut r = bic_select(cands, n)?;
        r.fell_back_to_bic = true;
        return Ok(r);
    };
    let kappa = 2.0 * jump.kappa_hat;
    let pens: Vec<f64> = shape.iter().map(|s| kappa * s / n as f64).collect();
    let (rows, crit) = table(cands, &pens, n);
    let chosen = argmin_criterion(cands, &crit);
    Ok(SelectionResult {
        chosen,
        chosen_index: cands[chosen].index.clone(),
        kappa_used: kappa,
        mode_used: mode,
        fell_back_to_bic: false,
        jump: Some(jump),
        criterion_table: rows,
    })
}

/// Slope heuristic with the full parameter count as penalty shape.
pub fn slope_select(collection: &Collection, n: usize) -> Result<SelectionResult> {
    let cands: Vec<Candidate> = collection.fits.iter().map(Candidate::from).collect();
    let shape: Vec<f64> = cands.iter().map(|c| c.dim_full as f64).collect();
    slope_select_shape(&cands, &shape, n, SelectionMode::SlopeDimensionJump)
}

/// `A_Sigma / a_Sigma` and `A_sigma / a_Sigma` from variance bounds.
fn bound_ratios(bounds: &BoundsConfig) -> (f64, f64) {
    let a_sd = bounds.a_sigma_sq.sqrt();
    ((bounds.big_a_sigma_sq / bounds.a_sigma_sq).sqrt(), bounds.a_singular / a_sd)
}

/// `B = 3 + sqrt(log((A_S/a_S + 1/2)(A_s/a_S))) + sqrt(log(p^2 q R + 3q/4))`,
/// with negative logarithms clamped at zero.
pub fn penalty_constant(p: usize, q: usize, max_rank: usize, bounds: &BoundsConfig) -> f64 {
    let (var_ratio, sing_ratio) = bound_ratios(bounds);
    let (p, q, r) = (p as f64, q as f64, max_rank as f64);
    let t1 = ((var_ratio + 0.5) * sing_ratio).ln();
    let t2 = (p * p * q * r + 0.75 * q).ln();
    if t1 < 0.0 || t2 < 0.0 {
        log::debug!("penalty constant: clamping negative logarithm ({t1}, {t2})");
    }
    3.0 + t1.max(0.0).sqrt() + t2.max(0.0).sqrt()
}

/// `(D - q^2) wedge pq`, with `D - q^2` floored at 1.
fn clamped_denominator(d: f64, p: usize, q: usize) -> f64 {
    let qf = q as f64;
    let raw = d - qf * qf;
    if raw < 1.0 {
        log::debug!("clamping D - q^2 = {raw} to 1");
    }
    raw.max(1.0).min((p * q) as f64)
}

/// Penalty of the oracle inequality for model `index`:
///
/// ```text
/// kappa D/n { 2B^2 - log(D/n B^2 wedge 1) + log(4epq / ((D - q^2) wedge pq) + R) }
/// ```
///
/// with `D` the means-only dimension and `R = max_k R(k)`.
pub fn theoretical_penalty(
    index: &ModelIndex,
    n: usize,
    p: usize,
    q: usize,
    bounds: &BoundsConfig,
    kappa: f64,
) -> f64 {
    let d = dimension(index, q, DimensionMode::MeansOnly) as f64;
    let r = index.max_rank() as f64;
    let b = penalty_constant(p, q, index.max_rank(), bounds);
    let dn = d / n as f64;
    let pq = (p * q) as f64;
    let bracket = 2.0 * b * b - (dn * b * b).min(1.0).ln()
        + (4.0 * E * pq / clamped_denominator(d, p, q) + r).ln();
    kappa * dn * bracket
}

/// Kraft weight `D log(4epq / ((D - q^2) wedge pq)) + max_k R(k)`.
pub fn kraft_weight(index: &ModelIndex, p: usize, q: usize) -> f64 {
    let d = dimension(index, q, DimensionMode::MeansOnly) as f64;
    let pq = (p * q) as f64;
    d * (4.0 * E * pq / clamped_denominator(d, p, q)).ln() + index.max_rank() as f64
}

/// Selects from `collection` according to `cfg`.
pub fn select(
    collection: &Collection,
    n: usize,
    p: usize,
    q: usize,
    cfg: &PenaltyConfig,
) -> Result<SelectionResult> {
    let cands: Vec<Candidate> = collection.fits.iter().map(Candidate::from).collect();
    select_candidates(&cands, n, p, q, cfg)
}

pub fn select_candidates(
    cands: &[Candidate],
    n: usize,
    p: usize,
    q: usize,
    cfg: &PenaltyConfig,
) -> Result<SelectionResult> {
    if cands.is_empty() {
        return Err(MixError::EmptyCollection("nothing to select from".into()));
    }
    match cfg.mode {
        SelectionMode::Bic => bic_select(cands, n),
        SelectionMode::SlopeDimensionJump => {
            let shape: Vec<f64> = cands.iter().map(|c| c.dim_full as f64).collect();
            match cfg.kappa {
                None => slope_select_shape(cands, &shape, n, cfg.mode),
                Some(kappa) => fixed(cands, &shape, n, kappa, cfg.mode),
            }
        }
        SelectionMode::Theoretical => {
            // shape such that kappa * shape / n is the theoretical penalty
            let shape: Vec<f64> = cands
                .iter()
                .map(|c| n as f64 * theoretical_penalty(&c.index, n, p, q, &cfg.bounds, 1.0))
                .collect();
            match cfg.kappa {
                None => slope_select_shape(cands, &shape, n, cfg.mode),
                Some(kappa) => fixed(cands, &shape, n, kappa, cfg.mode),
            }
        }
    }
}

fn fixed(cands: &[Candidate], shape: &[f64], n: usize, kappa: f64, mode: SelectionMode) -> Result<SelectionResult> {
    if !(kappa > 0.0) {
        return Err(MixError::InvalidInput(format!("kappa must be > 0, got {kappa}")));
    }
    let pens: Vec<f64> = shape.iter().map(|s| kappa * s / n as f64).collect();
    let (rows, crit) = table(cands, &pens, n);
    let chosen = argmin_criterion(cands, &crit);
    Ok(SelectionResult {
        chosen,
        chosen_index: cands[chosen].index.clone(),
        kappa_used: kappa,
        mode_used: mode,
        fell_back_to_bic: false,
        jump: None,
        criterion_table: rows,
    })
}

/// Orders criterion rows by value, for reports.
pub fn sorted_rows(rows: &[CriterionRow]) -> Vec<CriterionRow> {
    let mut v = rows.to_vec();
    v.sort_by(|a, b| a.criterion.partial_cmp(&b.criterion).unwrap_or(Ordering::Equal));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(k: usize, j: usize, ranks: Vec<usize>, loglik: f64, q: usize) -> Candidate {
        let index = ModelIndex::new(k, (0..j).collect(), ranks, q).unwrap();
        Candidate {
            dim_means: dimension(&index, q, DimensionMode::MeansOnly),
            dim_full: dimension(&index, q, DimensionMode::Full),
            index,
            loglik,
        }
    }

    #[test]
    fn dominant_model_always_wins() {
        let a = cand(1, 2, vec![1], -10.0, 3);
        let b = cand(1, 3, vec![3], -50.0, 3);
        assert!(a.dim_full < b.dim_full);
        let cands = vec![b, a];
        let shape: Vec<f64> = cands.iter().map(|c| c.dim_full as f64).collect();
        for kappa in [1e-6, 1e-3, 1.0, 1e3] {
            let crit: Vec<f64> =
                cands.iter().zip(&shape).map(|(c, s)| -c.loglik / 40.0 + kappa * s / 40.0).collect();
            assert_eq!(argmin_criterion(&cands, &crit), 1);
        }
        let res = slope_select_shape(&cands, &shape, 40, SelectionMode::SlopeDimensionJump).unwrap();
        assert_eq!(res.chosen, 1);
        assert!(res.fell_back_to_bic);
    }

    #[test]
    fn ties_prefer_smaller_dimension() {
        let a = cand(1, 3, vec![2], -10.0, 3);
        let b = cand(1, 2, vec![1], -10.0, 3);
        let r = argmin_criterion(&[a, b], &[1.0, 1.0]);
        assert_eq!(r, 1);
    }

    #[test]
    fn theoretical_penalty_is_linear_in_kappa() {
        let idx = ModelIndex::new(2, (0..6).collect(), vec![3, 3], 10).unwrap();
        let b = BoundsConfig::default();
        let p1 = theoretical_penalty(&idx, 50, 100, 10, &b, 1.0);
        let p2 = theoretical_penalty(&idx, 50, 100, 10, &b, 2.5);
        assert!(p2 > p1);
        assert!((p2 - 2.5 * p1).abs() < 1e-12 * p2);
    }

    #[test]
    fn kraft_weight_direct_substitution() {
        let idx = ModelIndex::new(1, vec![0], vec![1], 1).unwrap();
        let w = kraft_weight(&idx, 2, 1);
        assert!((w - ((8.0 * E).ln() + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn selection_modes_parse() {
        assert_eq!("bic".parse::<SelectionMode>().unwrap(), SelectionMode::Bic);
        assert_eq!("slope".parse::<SelectionMode>().unwrap(), SelectionMode::SlopeDimensionJump);
        assert!("aic".parse::<SelectionMode>().is_err());
    }
}
