//! Model collection over `(K, J, R)`: supports from the Lasso path, ranks from
//! a rank grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::init::derive_seed;
use crate::lasso_em::{lambda_grid, lasso_em_fit, LassoFitConfig, Responsibilities};
use crate::model::Dataset;
use crate::rank_em::{rank_em_fit, FittedModel, RankFitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMode {
    /// The same rank in every cluster.
    Shared,
    /// Every K-tuple of ranks.
    Cartesian,
}

impl std::str::FromStr for RankMode {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Self::Shared),
            "cartesian" => Ok(Self::Cartesian),
            other => Err(MixError::InvalidInput(format!("unknown rank mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionConfig {
    pub k_set: Vec<usize>,
    pub grid_size: usize,
    pub r_min: usize,
    pub r_max: usize,
    pub rank_mode: RankMode,
    pub lasso: LassoFitConfig,
    /// Template for the rank refits; `ranks` and `seed` are filled per fit.
    pub rank: RankFitConfig,
    pub seed: u64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            k_set: vec![2],
            grid_size: 15,
            r_min: 1,
            r_max: 4,
            rank_mode: RankMode::Cartesian,
            lasso: LassoFitConfig::default(),
            rank: RankFitConfig::new(Vec::new()),
            seed: 0,
        }
    }
}

impl CollectionConfig {
    fn validate(&self) -> Result<()> {
        if self.k_set.is_empty() || self.k_set.contains(&0) {
            return Err(MixError::InvalidInput("K set must be non-empty and positive".into()));
        }
        if self.r_min == 0 || self.r_max < self.r_min {
            return Err(MixError::InvalidInput(format!(
                "need 1 <= r_min <= r_max (got {}..{})",
                self.r_min, self.r_max
            )));
        }
        if self.grid_size < 2 {
            return Err(MixError::InvalidInput("grid size must be >= 2".into()));
        }
        Ok(())
    }
}

/// Where a fit came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub k: usize,
    /// Smallest-index grid level whose Lasso fit produced this support.
    pub lambda: f64,
    pub lambda_index: usize,
    pub support: Vec<usize>,
    pub ranks: Vec<usize>,
}

/// Diagnostics for one Lasso fit on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub k: usize,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Collection {
    /// Sorted by `(K, J, R)`.
    pub fits: Vec<FittedModel>,
    pub provenance: Vec<Provenance>,
    pub path: Vec<PathPoint>,
    /// Refits that failed, with the reason.
    pub failures: Vec<(Provenance, String)>,
}

impl Collection {
    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }
}

/// Rank vectors for `k` clusters with ranks in `r_min..=cap`.
pub fn rank_vectors(k: usize, r_min: usize, cap: usize, mode: RankMode) -> Vec<Vec<usize>> {
    if cap < r_min {
        return Vec::new();
    }
    match mode {
        RankMode::Shared => (r_min..=cap).map(|r| vec![r; k]).collect(),
        RankMode::Cartesian => {
            let mut out: Vec<Vec<usize>> = vec![Vec::new()];
            for _ in 0..k {
                out = out
                    .into_iter()
                    .flat_map(|prefix| {
                        (r_min..=cap).map(move |r| {
                            let mut v = prefix.clone();
                            v.push(r);
                            v
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

struct SupportSeed {
    k: usize,
    lambda: f64,
    lambda_index: usize,
    support: Vec<usize>,
    init: Responsibilities,
}

/// Lasso path per `K`, then rank refits on every distinct non-empty support.
pub fn build_collection(data: &Dataset, cfg: &CollectionConfig) -> Result<Collection> {
    cfg.validate()?;
    let q = data.q();
    let mut path = Vec::new();
    let mut seeds: Vec<SupportSeed> = Vec::new();
    let mut diagnostics = Vec::new();

    for &k in &cfg.k_set {
        let lasso = LassoFitConfig { seed: derive_seed(cfg.seed, &[1, k as u64]), ..cfg.lasso.clone() };
        let grid = match lambda_grid(data, k, cfg.grid_size, &lasso) {
            Ok(g) => g,
            Err(e) => {
                diagnostics.push(format!("K={k}: grid failed: {e}"));
                continue;
            }
        };
        let fits: Vec<_> = grid
            .par_iter()
            .map(|&lambda| lasso_em_fit(data, k, &LassoFitConfig { lambda, ..lasso.clone() }))
            .collect();
        let mut seen: BTreeMap<Vec<usize>, ()> = BTreeMap::new();
        for (g, (lambda, fit)) in grid.iter().zip(fits).enumerate() {
            match fit {
                Ok(fit) => {
                    path.push(PathPoint {
                        k,
                        lambda: *lambda,
                        support: fit.support.clone(),
                        objective: Some(fit.objective),
                        error: None,
                    });
                    if !fit.support.is_empty() && seen.insert(fit.support.clone(), ()).is_none() {
                        seeds.push(SupportSeed {
                            k,
                            lambda: *lambda,
                            lambda_index: g,
                            support: fit.support,
                            init: fit.responsibilities,
                        });
                    }
                }
                Err(e) => {
                    path.push(PathPoint {
                        k,
                        lambda: *lambda,
                        support: Vec::new(),
                        objective: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        if seen.is_empty() {
            diagnostics.push(format!("K={k}: every grid level gave an empty support"));
        }
    }

    let tasks: Vec<(usize, Vec<usize>)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(s, seed)| {
            let cap = cfg.r_max.min(seed.support.len()).min(q);
            rank_vectors(seed.k, cfg.r_min, cap, cfg.rank_mode)
                .into_iter()
                .map(move |r| (s, r))
        })
        .collect();

    let results: Vec<_> = tasks
        .par_iter()
        .map(|(s, ranks)| {
            let seed = &seeds[*s];
            let mut parts = vec![2, seed.k as u64];
            parts.extend(seed.support.iter().map(|&j| j as u64));
            parts.extend(ranks.iter().map(|&r| r as u64 + 1000));
            let rank_cfg = RankFitConfig {
                ranks: ranks.clone(),
                seed: derive_seed(cfg.seed, &parts),
                ..cfg.rank.clone()
            };
            let prov = Provenance {
                k: seed.k,
                lambda: seed.lambda,
                lambda_index: seed.lambda_index,
                support: seed.support.clone(),
                ranks: ranks.clone(),
            };
            (prov, rank_em_fit(data, &seed.support, seed.k, &rank_cfg, &seed.init))
        })
        .collect();

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for (prov, res) in results {
        match res {
            Ok(fit) => pairs.push((fit, prov)),
            Err(e) => failures.push((prov, e.to_string())),
        }
    }
    if pairs.is_empty() {
        diagnostics.extend(failures.iter().map(|(p, e)| format!("K={} J={:?} R={:?}: {e}", p.k, p.support, p.ranks)));
        return Err(MixError::EmptyCollection(if diagnostics.is_empty() {
            "no supports were produced".into()
        } else {
            diagnostics.join("; ")
        }));
    }
    pairs.sort_by(|a, b| a.0.index.cmp(&b.0.index));
    let (fits, provenance) = pairs.into_iter().unzip();
    Ok(Collection { fits, provenance, path, failures })
}
