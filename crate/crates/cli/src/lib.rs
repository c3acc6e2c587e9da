//! Pipeline orchestration and report types for the `mixrank` command line tool.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mixrank::collection::{build_collection, CollectionConfig, PathPoint, RankMode};
use mixrank::init::derive_seed;
use mixrank::metrics::{evaluate, EvalReport, FittedSummary, JklConfig};
use mixrank::model::{log_likelihood, Dataset, MixtureRegressionModel, ModelIndex};
use mixrank::nalgebra::DMatrix;
use mixrank::selection::{select_candidates, Candidate, CriterionRow, PenaltyConfig, SelectionMode};
use mixrank::simgen::{generate, SimConfig, TrueModel};
use mixrank::{FittedModel, LassoFitConfig, RankFitConfig};
use serde::{Deserialize, Serialize};

pub const REPORT_FORMAT: &str = "mixrank-report";
pub const REPORT_VERSION: u32 = 1;

/// Settings shared by every command that builds a collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub seed: u64,
    pub k_set: Vec<usize>,
    pub grid_size: usize,
    pub rank_min: usize,
    pub rank_max: usize,
    pub rank_mode: RankMode,
    pub selection_mode: SelectionMode,
    pub kappa: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            k_set: vec![2],
            grid_size: 15,
            rank_min: 1,
            rank_max: 4,
            rank_mode: RankMode::Cartesian,
            selection_mode: SelectionMode::SlopeDimensionJump,
            kappa: None,
        }
    }
}

impl FitOptions {
    pub fn collection_config(&self) -> CollectionConfig {
        CollectionConfig {
            k_set: self.k_set.clone(),
            grid_size: self.grid_size,
            r_min: self.rank_min,
            r_max: self.rank_max,
            rank_mode: self.rank_mode,
            lasso: LassoFitConfig::default(),
            rank: RankFitConfig::new(Vec::new()),
            seed: self.seed,
        }
    }

    pub fn penalty_config(&self) -> PenaltyConfig {
        PenaltyConfig { kappa: self.kappa, mode: self.selection_mode, ..PenaltyConfig::default() }
    }
}

/// Plain-array form of a [`MixtureRegressionModel`]; `beta[k][z]` is row `z`
/// of the `q x p` coefficient matrix of cluster `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub pi: Vec<f64>,
    pub beta: Vec<Vec<Vec<f64>>>,
    pub sigma_diag: Vec<Vec<f64>>,
}

impl From<&MixtureRegressionModel> for ModelParams {
    fn from(m: &MixtureRegressionModel) -> Self {
        Self {
            pi: m.pi().to_vec(),
            beta: m
                .beta()
                .iter()
                .map(|b| b.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            sigma_diag: m.sigma_diag().to_vec(),
        }
    }
}

impl ModelParams {
    pub fn to_model(&self) -> Result<MixtureRegressionModel> {
        let beta = self
            .beta
            .iter()
            .map(|rows| {
                let q = rows.len();
                let p = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != p) {
                    bail!("ragged coefficient matrix");
                }
                Ok(DMatrix::from_fn(q, p, |z, j| rows[z][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        // re-normalize so text round trips of pi still sum to one
        let total: f64 = self.pi.iter().sum();
        let pi = self.pi.iter().map(|v| v / total).collect();
        Ok(MixtureRegressionModel::new(pi, beta, self.sigma_diag.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: ModelParams,
    pub support: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl From<&TrueModel> for TruthFile {
    fn from(t: &TrueModel) -> Self {
        Self { model: (&t.model).into(), support: t.support.clone(), ranks: t.ranks.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataShape {
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

impl From<&Dataset> for DataShape {
    fn from(d: &Dataset) -> Self {
        Self { n: d.n(), p: d.p(), q: d.q() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: SelectionMode,
    pub kappa: f64,
    pub fell_back_to_bic: bool,
    pub chosen: ModelIndex,
    pub criterion_table: Vec<CriterionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenModel {
    pub index: ModelIndex,
    pub loglik: f64,
    pub dim_means: usize,
    pub dim_full: usize,
    pub converged: bool,
    pub iterations: usize,
    pub params: ModelParams,
    pub labels: Vec<usize>,
}

impl From<&FittedModel> for ChosenModel {
    fn from(f: &FittedModel) -> Self {
        Self {
            index: f.index.clone(),
            loglik: f.loglik,
            dim_means: f.dim_means,
            dim_full: f.dim_full,
            converged: f.converged,
            iterations: f.iterations,
            params: (&f.model).into(),
            labels: f.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFit {
    pub k: usize,
    pub support: Vec<usize>,
    pub ranks: Vec<usize>,
    pub error: String,
}

/// Everything produced by one collection build and selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub data: DataShape,
    pub options: FitOptions,
    pub lasso_path: Vec<PathPoint>,
    pub failures: Vec<FailedFit>,
    pub selection: SelectionReport,
    pub model: ChosenModel,
}

/// Top-level report written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit: Option<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selection: Option<SelectionReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evaluation: Option<Evaluation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub table1: Option<Table1Report>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            command: command.into(),
            fit: None,
            selection: None,
            evaluation: None,
            table1: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if r.format != REPORT_FORMAT {
            bail!("{} is not a {REPORT_FORMAT} file", path.display());
        }
        Ok(r)
    }
}

fn selection_report(res: &mixrank::SelectionResult) -> SelectionReport {
    SelectionReport {
        mode: res.mode_used,
        kappa: res.kappa_used,
        fell_back_to_bic: res.fell_back_to_bic,
        chosen: res.chosen_index.clone(),
        criterion_table: res.criterion_table.clone(),
    }
}

/// Collection, selection and the chosen fit.
pub struct FitOutcome {
    pub report: FitReport,
    pub chosen: FittedModel,
}

pub fn fit(data: &Dataset, opts: &FitOptions) -> Result<FitOutcome> {
    let collection = build_collection(data, &opts.collection_config())?;
    let cands: Vec<Candidate> = collection.fits.iter().map(Candidate::from).collect();
    let sel = select_candidates(&cands, data.n(), data.p(), data.q(), &opts.penalty_config())?;
    let chosen = collection.fits[sel.chosen].clone();
    let report = FitReport {
        data: data.into(),
        options: opts.clone(),
        lasso_path: collection.path.clone(),
        failures: collection
            .failures
            .iter()
            .map(|(p, e)| FailedFit { k: p.k, support: p.support.clone(), ranks: p.ranks.clone(), error: e.clone() })
            .collect(),
        selection: selection_report(&sel),
        model: (&chosen).into(),
    };
    Ok(FitOutcome { report, chosen })
}

/// Re-runs selection on the criterion table of a saved fit.
pub fn reselect(fit: &FitReport, mode: SelectionMode, kappa: Option<f64>) -> Result<SelectionReport> {
    let cands: Vec<Candidate> = fit
        .selection
        .criterion_table
        .iter()
        .map(|r| Candidate { index: r.index.clone(), loglik: r.loglik, dim_means: r.dim_means, dim_full: r.dim_full })
        .collect();
    let cfg = PenaltyConfig { kappa, mode, ..PenaltyConfig::default() };
    let sel = select_candidates(&cands, fit.data.n, fit.data.p, fit.data.q, &cfg)?;
    Ok(selection_report(&sel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loglik: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<EvalReport>,
}

/// Log-likelihood of a saved model on `data`, plus divergence metrics when
/// the truth and a test set are given.
pub fn evaluate_saved(
    model: &ChosenModel,
    data: &Dataset,
    truth: Option<(&TruthFile, &Dataset)>,
    jkl: &JklConfig,
) -> Result<Evaluation> {
    let m = model.params.to_model()?;
    let loglik = log_likelihood(&m, data)?;
    let metrics = match truth {
        None => None,
        Some((t, test)) => {
            let summary = FittedSummary {
                model: &m,
                support: &model.index.support,
                ranks: &model.index.ranks,
                labels: &model.labels,
            };
            Some(evaluate(&t.model.to_model()?, &t.support, &summary, data, test, jkl)?)
        }
    };
    Ok(Evaluation { loglik, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    PGtN,
    PLtN,
}

impl std::str::FromStr for Setting {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_gt_n" | "p>n" => Ok(Self::PGtN),
            "p_lt_n" | "p<n" => Ok(Self::PLtN),
            other => bail!("unknown setting `{other}` (expected p_gt_n or p_lt_n)"),
        }
    }
}

impl Setting {
    pub fn sim_config(self, seed: u64) -> SimConfig {
        match self {
            Self::PGtN => SimConfig::p_gt_n(seed),
            Self::PLtN => SimConfig::p_lt_n(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub chosen: ModelIndex,
    pub fell_back_to_bic: bool,
    pub metrics: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub kl_mean: f64,
    pub jkl_mean: f64,
    /// Per-cluster median of the sorted rank vectors.
    pub rank_median: Vec<f64>,
    pub rank_mean: Vec<f64>,
    pub misses_mean: f64,
    pub false_actives_mean: f64,
    pub ari_mean: f64,
    pub mse_mean: f64,
    pub k_counts: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub setting: Setting,
    pub runs: usize,
    pub options: FitOptions,
    pub jkl: JklConfig,
    pub per_run: Vec<RunSummary>,
    pub row: Table1Row,
    pub failed_runs: Vec<(usize, String)>,
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

pub fn summarize(per_run: &[RunSummary]) -> Table1Row {
    let width = per_run.iter().map(|r| r.metrics.ranks.len()).max().unwrap_or(0);
    let column = |c: usize| -> Vec<f64> {
        per_run.iter().filter_map(|r| r.metrics.ranks.get(c).map(|&v| v as f64)).collect()
    };
    let mut k_counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for r in per_run {
        *k_counts.entry(r.chosen.k).or_default() += 1;
    }
    Table1Row {
        kl_mean: mean(per_run.iter().map(|r| r.metrics.kl_mean)),
        jkl_mean: mean(per_run.iter().map(|r| r.metrics.jkl_mean)),
        rank_median: (0..width).map(|c| median(&mut column(c))).collect(),
        rank_mean: (0..width).map(|c| mean(column(c).into_iter())).collect(),
        misses_mean: mean(per_run.iter().map(|r| r.metrics.misses as f64)),
        false_actives_mean: mean(per_run.iter().map(|r| r.metrics.false_actives as f64)),
        ari_mean: mean(per_run.iter().map(|r| r.metrics.ari)),
        mse_mean: mean(per_run.iter().map(|r| r.metrics.mse)),
        k_counts: k_counts.into_iter().collect(),
    }
}

/// One simulated replicate: generate, fit, select, evaluate.
pub fn simulated_run(setting: Setting, seed: u64, opts: &FitOptions, jkl: &JklConfig) -> Result<RunSummary> {
    let (train, test, truth) = generate(&setting.sim_config(seed))?;
    let out = fit(&train, &FitOptions { seed, ..opts.clone() })?;
    let summary = FittedSummary {
        model: &out.chosen.model,
        support: &out.chosen.index.support,
        ranks: &out.chosen.index.ranks,
        labels: &out.chosen.labels,
    };
    let metrics = evaluate(&truth.model, &truth.support, &summary, &train, &test, &JklConfig { seed, ..jkl.clone() })?;
    Ok(RunSummary {
        run: 0,
        seed,
        chosen: out.chosen.index.clone(),
        fell_back_to_bic: out.report.selection.fell_back_to_bic,
        metrics,
    })
}

pub fn reproduce_table1(setting: Setting, runs: usize, opts: &FitOptions, jkl: &JklConfig) -> Result<Table1Report> {
    if runs == 0 {
        bail!("need at least one run");
    }
    let mut per_run = Vec::new();
    let mut failed_runs = Vec::new();
    for run in 0..runs {
        let seed = derive_seed(opts.seed, &[run as u64]);
        match simulated_run(setting, seed, opts, jkl) {
            Ok(mut s) => {
                s.run = run;
                log::info!(
                    "run {run}: K={} |J|={} R={:?} ARI={:.3} KL={:.3}",
                    s.chosen.k,
                    s.chosen.support.len(),
                    s.metrics.ranks,
                    s.metrics.ari,
                    s.metrics.kl_mean
                );
                per_run.push(s);
            }
            Err(e) => failed_runs.push((run, format!("{e:#}"))),
        }
    }
    if per_run.is_empty() {
        bail!("every run failed: {:?}", failed_runs);
    }
    Ok(Table1Report {
        setting,
        runs,
        options: opts.clone(),
        jkl: jkl.clone(),
        row: summarize(&per_run),
        per_run,
        failed_runs,
    })
}

/// Writes the criterion table as CSV.
pub fn write_criterion_csv(rows: &[CriterionRow], path: &Path) -> Result<()> {
    let mut out = String::from("k,support,ranks,loglik,dim_means,dim_full,penalty,criterion\n");
    for r in rows {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        out.push_str(&format!(
            "{},{},{},{:?},{},{},{:?},{:?}\n",
            r.index.k,
            join(&r.index.support),
            join(&r.index.ranks),
            r.loglik,
            r.dim_means,
            r.dim_full,
            r.penalty,
            r.criterion
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}
