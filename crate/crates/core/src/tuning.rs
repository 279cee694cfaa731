//! Repeated K-fold cross-validation of the boosting deviance, used to pick the
//! number of trees and the depth pair.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{fit_gbex, GbexHyperParams, MIN_POSITIVE_EXCEEDANCES};
use crate::error::{Error, Result};
use crate::gpd::Exceedance;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub folds: usize,
    pub repeats: usize,
    pub b_max: usize,
    pub seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings {
            folds: 5,
            repeats: 5,
            b_max: 500,
            seed: 0,
        }
    }
}

/// Fold assignment of the positive exceedances for one repeat. The seed keys
/// both the assignment and the boosting fits of that repeat.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    /// Random partition of `n` rows into `folds` near-equal folds.
    pub fn random(n: usize, folds: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[]));
        let mut fold_of = vec![0; n];
        for (pos, &row) in order.iter().enumerate() {
            fold_of[row] = pos * folds / n.max(1);
        }
        FoldPlan { fold_of, seed }
    }
}

/// Cross-validated deviance as a function of the number of trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub depth_sigma: usize,
    pub depth_gamma: usize,
    pub hyper: GbexHyperParams,
    /// `dev[b]` for `b = 0..=B_max`.
    pub dev: Vec<f64>,
    pub selected_b: usize,
}

/// First index of the minimum.
pub fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// Cross-validated deviance curve over explicit fold plans (one per repeat).
pub fn cv_deviance_with_plans(
    x: ArrayView2<f64>,
    z: &[Exceedance],
    h: &GbexHyperParams,
    folds: usize,
    plans: &[FoldPlan],
) -> Result<CvCurve> {
    if x.nrows() != z.len() {
        return Err(Error::domain("covariates and exceedances differ in length"));
    }
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let positive: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_positive()).collect();
    let n = positive.len();
    for plan in plans {
        if plan.fold_of.len() != n {
            return Err(Error::domain("fold plan does not cover the positive exceedances"));
        }
        for k in 0..folds {
            let train = plan.fold_of.iter().filter(|&&f| f != k).count();
            if train < MIN_POSITIVE_EXCEEDANCES {
                return Err(Error::InsufficientData(format!(
                    "fold {k} leaves {train} positive exceedances for training, need {MIN_POSITIVE_EXCEEDANCES}"
                )));
            }
        }
    }
    let xp = x.select(Axis(0), &positive);
    let zp: Vec<Exceedance> = positive.iter().map(|&i| z[i]).collect();

    let jobs: Vec<(usize, usize)> = (0..plans.len()).flat_map(|r| (0..folds).map(move |k| (r, k))).collect();
    let per_job: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(r, k)| {
            let plan = &plans[r];
            let (train, held): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| plan.fold_of[i] != k);
            let fit_h = GbexHyperParams {
                seed: rng::derive_seed(plan.seed, &[k as u64]),
                ..h.clone()
            };
            let z_train: Vec<Exceedance> = train.iter().map(|&i| zp[i]).collect();
            let model = fit_gbex(xp.select(Axis(0), &train).view(), &z_train, &fit_h, None)?;
            let z_held: Vec<Exceedance> = held.iter().map(|&i| zp[i]).collect();
            Ok(model.staged_deviance(xp.select(Axis(0), &held).view(), &z_held))
        })
        .collect::<Result<_>>()?;

    let mut dev = vec![0.0; h.n_trees + 1];
    for r in 0..plans.len() {
        let mut repeat = vec![0.0; h.n_trees + 1];
        for curve in &per_job[r * folds..(r + 1) * folds] {
            repeat.iter_mut().zip(curve).for_each(|(a, b)| *a += b);
        }
        dev.iter_mut().zip(&repeat).for_each(|(a, b)| *a += b);
    }
    let selected_b = argmin(&dev);
    Ok(CvCurve {
        depth_sigma: h.depth_sigma,
        depth_gamma: h.depth_gamma,
        hyper: h.clone(),
        dev,
        selected_b,
    })
}

/// Repeated K-fold cross-validation deviance for `B = 0..=b_max`.
pub fn cv_deviance(x: ArrayView2<f64>, z: &[Exceedance], h: &GbexHyperParams, settings: &CvSettings) -> Result<CvCurve> {
    let n = z.iter().filter(|z| z.is_positive()).count();
    let plans: Vec<FoldPlan> = (0..settings.repeats)
        .map(|r| FoldPlan::random(n, settings.folds, rng::derive_seed(settings.seed, &[r as u64])))
        .collect();
    let h = GbexHyperParams {
        n_trees: settings.b_max,
        ..h.clone()
    };
    cv_deviance_with_plans(x, z, &h, settings.folds, &plans)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSelection {
    pub curves: Vec<CvCurve>,
    /// Index into `curves` of the winning depth pair.
    pub best: usize,
    pub depth_sigma: usize,
    pub depth_gamma: usize,
    pub n_trees: usize,
    pub deviance: f64,
}

impl DepthSelection {
    /// Hyperparameters of the winning configuration with its selected tree count.
    pub fn hyper(&self) -> GbexHyperParams {
        GbexHyperParams {
            n_trees: self.n_trees,
            ..self.curves[self.best].hyper.clone()
        }
    }
}

/// Cross-validates every depth pair in `grid` and returns the joint minimizer
/// over (depths, B). Ties go to the earlier grid entry and the smaller B.
pub fn select_depths(
    x: ArrayView2<f64>,
    z: &[Exceedance],
    grid: &[(usize, usize)],
    h: &GbexHyperParams,
    settings: &CvSettings,
) -> Result<DepthSelection> {
    if grid.is_empty() {
        return Err(Error::Config("depth grid is empty".into()));
    }
    let curves = grid
        .iter()
        .map(|&(ds, dg)| cv_deviance(x, z, &h.clone().with_depths(ds, dg), settings))
        .collect::<Result<Vec<_>>>()?;
    let minima: Vec<f64> = curves.iter().map(|c| c.dev[c.selected_b]).collect();
    let best = argmin(&minima);
    Ok(DepthSelection {
        depth_sigma: curves[best].depth_sigma,
        depth_gamma: curves[best].depth_gamma,
        n_trees: curves[best].selected_b,
        deviance: minima[best],
        best,
        curves,
    })
}
