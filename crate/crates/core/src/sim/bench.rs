//! Replicated comparison of extreme quantile estimators by integrated
//! squared error over Halton points.

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::halton::halton_points;
use super::models::{SimData, SimModel};
use crate::boost::{fit_gbex, GbexHyperParams};
use crate::error::{Error, Result};
use crate::forest::{ForestConfig, QuantileForest};
use crate::gpd::{self, Exceedance};
use crate::pipeline::{fit_threshold_stage, DEFAULT_TAU0};
use crate::rng;
use crate::tuning::{cv_deviance, CvSettings};

pub const DEFAULT_N_POINTS: usize = 4096;
pub const MIN_N_POINTS: usize = 1024;

/// Mean squared difference between paired predictions.
pub fn ise_values(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "prediction and truth differ in length");
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Squared error of `pred` against `truth` averaged over `n_points` Halton
/// points in `[-1, 1]^d`.
pub fn ise<F, G>(pred: F, truth: G, d: usize, n_points: usize) -> Result<f64>
where
    F: Fn(ArrayView1<f64>) -> f64,
    G: Fn(ArrayView1<f64>) -> f64,
{
    if n_points < MIN_N_POINTS {
        return Err(Error::domain(format!("ISE needs at least {MIN_N_POINTS} points, got {n_points}")));
    }
    let pts = halton_points(n_points, d);
    let (p, t): (Vec<f64>, Vec<f64>) = pts.rows().into_iter().map(|r| (pred(r), truth(r))).unzip();
    Ok(ise_values(&p, &t))
}

/// Everything the methods of one replication share: the sample, the fitted
/// threshold forest, its exceedances and the forest threshold at the
/// evaluation points.
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub model: SimModel,
    pub data: SimData,
    pub tau0: f64,
    pub forest: QuantileForest,
    pub exceedances: Vec<Exceedance>,
    pub points: Array2<f64>,
    pub thresholds: Vec<f64>,
}

/// An estimator of conditional quantiles at the evaluation points.
pub trait Method: Sync {
    fn label(&self) -> String;
    /// One vector per `tau`, each aligned with `ctx.points`.
    fn predict(&self, ctx: &Replication, taus: &[f64]) -> Result<Vec<Vec<f64>>>;
}

/// Boosted GPD tail above the forest threshold, with the tree count chosen
/// by cross-validation when `cv` is set.
#[derive(Clone, Debug)]
pub struct Gbex {
    pub hyper: GbexHyperParams,
    pub cv: Option<CvSettings>,
}

impl Method for Gbex {
    fn label(&self) -> String {
        "gbex".into()
    }

    fn predict(&self, ctx: &Replication, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let x = ctx.data.x.view();
        let mut h = GbexHyperParams {
            seed: rng::derive_seed(ctx.seed, &[2]),
            ..self.hyper.clone()
        };
        if let Some(cv) = &self.cv {
            let cv = CvSettings {
                seed: rng::derive_seed(ctx.seed, &[3]),
                ..cv.clone()
            };
            h.n_trees = cv_deviance(x, &ctx.exceedances, &h, &cv)?.selected_b;
        }
        let m = fit_gbex(x, &ctx.exceedances, &h, None)?;
        let params: Vec<_> = ctx.points.rows().into_iter().map(|r| m.predict_params(r, None)).collect();
        taus.iter()
            .map(|&tau| {
                params
                    .iter()
                    .zip(&ctx.thresholds)
                    .map(|(&p, &q)| gpd::extreme_quantile(q, p, ctx.tau0, tau))
                    .collect()
            })
            .collect()
    }
}

/// Forest threshold with one unconditional GPD fitted to all positive
/// exceedances.
#[derive(Clone, Copy, Debug, Default)]
pub struct Constant;

impl Method for Constant {
    fn label(&self) -> String {
        "constant".into()
    }

    fn predict(&self, ctx: &Replication, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let pos: Vec<Exceedance> = ctx.exceedances.iter().copied().filter(|z| z.is_positive()).collect();
        let p = gpd::fit_unconditional_mle(&pos)?;
        taus.iter()
            .map(|&tau| ctx.thresholds.iter().map(|&q| gpd::extreme_quantile(q, p, ctx.tau0, tau)).collect())
            .collect()
    }
}

/// The quantile forest evaluated directly at the extreme level.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForestDirect;

impl Method for ForestDirect {
    fn label(&self) -> String {
        "forest_direct".into()
    }

    fn predict(&self, ctx: &Replication, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
        let per_point = (0..ctx.points.nrows())
            .into_par_iter()
            .map(|i| ctx.forest.predict_quantiles(ctx.points.row(i), taus))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..taus.len()).map(|k| per_point.iter().map(|q| q[k]).collect()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub model: SimModel,
    pub n: usize,
    pub replications: usize,
    pub taus: Vec<f64>,
    pub tau0: f64,
    pub forest: ForestConfig,
    pub n_points: usize,
    pub seed: u64,
}

impl ComparisonConfig {
    pub fn new(model: SimModel) -> Self {
        ComparisonConfig {
            model,
            n: model.default_n(),
            replications: 20,
            taus: vec![0.99, 0.995, 0.9995],
            tau0: DEFAULT_TAU0,
            forest: ForestConfig::default(),
            n_points: DEFAULT_N_POINTS,
            seed: 0,
        }
    }
}

/// Per-replication ISE of one method at one level, over the replications in
/// which the method succeeded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IseResult {
    pub method: String,
    pub tau: f64,
    pub replications: Vec<usize>,
    pub ise: Vec<f64>,
    pub mise: f64,
    pub failures: usize,
}

impl IseResult {
    pub fn ise_of(&self, replication: usize) -> Option<f64> {
        self.replications.iter().position(|&r| r == replication).map(|k| self.ise[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub config: ComparisonConfig,
    pub results: Vec<IseResult>,
    /// Replications whose shared threshold stage failed; no method ran on them.
    pub failed_replications: Vec<usize>,
}

impl Comparison {
    pub fn get(&self, method: &str, tau: f64) -> Option<&IseResult> {
        self.results.iter().find(|r| r.method == method && r.tau == tau)
    }
}

/// Builds the shared context of replication `index`.
pub fn prepare_replication(cfg: &ComparisonConfig, index: usize, points: &Array2<f64>) -> Result<Replication> {
    let seed = rng::derive_seed(cfg.seed, &[index as u64]);
    let data = cfg.model.generate(cfg.n, rng::derive_seed(seed, &[0]));
    let forest_cfg = ForestConfig {
        seed: rng::derive_seed(seed, &[1]),
        ..cfg.forest.clone()
    };
    let (forest, exceedances) = fit_threshold_stage(data.x.view(), &data.y, cfg.tau0, &forest_cfg)?;
    let thresholds = (0..points.nrows())
        .into_par_iter()
        .map(|i| forest.predict_quantile(points.row(i), cfg.tau0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Replication {
        index,
        seed,
        model: cfg.model,
        data,
        tau0: cfg.tau0,
        forest,
        exceedances,
        points: points.clone(),
        thresholds,
    })
}

/// Runs every method on `cfg.replications` independent samples and records
/// the ISE at each level. Failed fits are counted and left out of the MISE.
pub fn run_comparison(cfg: &ComparisonConfig, methods: &[&dyn Method]) -> Result<Comparison> {
    if cfg.n_points < MIN_N_POINTS {
        return Err(Error::Config(format!("need at least {MIN_N_POINTS} evaluation points")));
    }
    if cfg.taus.iter().any(|&t| !(t >= cfg.tau0 && t < 1.0)) {
        return Err(Error::Config("every tau must lie in [tau0, 1)".into()));
    }
    let points = halton_points(cfg.n_points, cfg.model.dim());
    let truth: Vec<Vec<f64>> = cfg
        .taus
        .iter()
        .map(|&tau| points.rows().into_iter().map(|r| cfg.model.truth(r, tau)).collect())
        .collect();

    // outcome[rep][method] = ISE per tau, or None on failure.
    let outcome: Vec<Option<Vec<Option<Vec<f64>>>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let ctx = prepare_replication(cfg, rep, &points).ok()?;
            Some(
                methods
                    .iter()
                    .map(|m| {
                        let preds = m.predict(&ctx, &cfg.taus).ok()?;
                        if preds.len() != cfg.taus.len() || preds.iter().flatten().any(|v| !v.is_finite()) {
                            return None;
                        }
                        Some(preds.iter().zip(&truth).map(|(p, t)| ise_values(p, t)).collect())
                    })
                    .collect(),
            )
        })
        .collect();

    let failed_replications: Vec<usize> = (0..cfg.replications).filter(|&r| outcome[r].is_none()).collect();
    let mut results = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        for (ti, &tau) in cfg.taus.iter().enumerate() {
            let mut replications = Vec::new();
            let mut ise = Vec::new();
            let mut failures = 0;
            for (rep, o) in outcome.iter().enumerate() {
                match o.as_ref().map(|per_method| &per_method[mi]) {
                    Some(Some(v)) => {
                        replications.push(rep);
                        ise.push(v[ti]);
                    }
                    _ => failures += 1,
                }
            }
            let mise = if ise.is_empty() { f64::NAN } else { ise.iter().sum::<f64>() / ise.len() as f64 };
            results.push(IseResult {
                method: m.label(),
                tau,
                replications,
                ise,
                mise,
                failures,
            });
        }
    }
    Ok(Comparison {
        config: cfg.clone(),
        results,
        failed_replications,
    })
}

/// The three built-in methods with this model's study settings.
pub fn standard_methods(model: SimModel, cv: Option<CvSettings>) -> (Gbex, Constant, ForestDirect) {
    (
        Gbex {
            hyper: model.study_hyper(),
            cv,
        },
        Constant,
        ForestDirect,
    )
}
