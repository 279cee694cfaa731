//! Model interpretation: permutation scores, relative importance from the
//! split records of both tree sequences, and partial dependence.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::GbexModel;
use crate::error::{Error, Result};
use crate::gpd::Exceedance;
use crate::pipeline::ExtremeModel;
use crate::rng;
use crate::tree::RegressionTree;

/// Rescales so the largest score is 100; all-zero (or all-negative) input is
/// returned unscaled.
pub fn normalize_max_100(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        scores.iter().map(|s| 100.0 * s / max).collect()
    } else {
        scores.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub baseline: f64,
    /// Deviance increase per feature after shuffling its column.
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Permutation scores over the rows with positive exceedances, one seeded
/// shuffle per feature.
pub fn permutation_importance(m: &GbexModel, x: ArrayView2<f64>, z: &[Exceedance], seed: u64) -> Result<PermutationImportance> {
    if x.nrows() != z.len() {
        return Err(Error::domain("covariates and exceedances differ in length"));
    }
    if x.ncols() != m.n_features() {
        return Err(Error::domain(format!(
            "model expects {} features, data has {}",
            m.n_features(),
            x.ncols()
        )));
    }
    let positive: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_positive()).collect();
    let xp = x.select(Axis(0), &positive);
    let zp: Vec<Exceedance> = positive.iter().map(|&i| z[i]).collect();
    let baseline = m.deviance(xp.view(), &zp);

    let raw: Vec<f64> = (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut order: Vec<usize> = (0..xp.nrows()).collect();
            order.shuffle(&mut rng::stream(seed, &[j as u64]));
            let mut shuffled = xp.clone();
            for (dst, &src) in order.iter().enumerate() {
                shuffled[[dst, j]] = xp[[src, j]];
            }
            m.deviance(shuffled.view(), &zp) - baseline
        })
        .collect();
    Ok(PermutationImportance {
        baseline,
        normalized: normalize_max_100(&raw),
        raw,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeImportance {
    pub sigma_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
}

fn split_sums(trees: &[RegressionTree], d: usize) -> Vec<f64> {
    let mut sums = vec![0.0; d];
    for s in trees.iter().flat_map(|t| t.splits()) {
        sums[s.feature] += s.rss_decrease;
    }
    sums
}

/// Summed RSS decrease of all splits on each feature, for each sequence.
pub fn relative_importance(m: &GbexModel) -> RelativeImportance {
    let sigma_raw = split_sums(m.trees_sigma(), m.n_features());
    let gamma_raw = split_sums(m.trees_gamma(), m.n_features());
    RelativeImportance {
        sigma: normalize_max_100(&sigma_raw),
        gamma: normalize_max_100(&gamma_raw),
        sigma_raw,
        gamma_raw,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub permutation: PermutationImportance,
    pub relative: RelativeImportance,
}

pub fn importance_report(m: &GbexModel, x: ArrayView2<f64>, z: &[Exceedance], seed: u64) -> Result<ImportanceReport> {
    Ok(ImportanceReport {
        permutation: permutation_importance(m, x, z, seed)?,
        relative: relative_importance(m),
    })
}

/// Quantity whose partial dependence is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PdpOutput {
    Sigma,
    Gamma,
    Quantile(f64),
}

impl PdpOutput {
    pub fn label(&self) -> String {
        match self {
            PdpOutput::Sigma => "sigma".into(),
            PdpOutput::Gamma => "gamma".into(),
            PdpOutput::Quantile(t) => format!("quantile_{t}"),
        }
    }
}

/// A model that can be evaluated for partial dependence.
pub trait PdpSurface: Sync {
    fn n_features(&self) -> usize;
    fn evaluate(&self, x: ArrayView1<f64>, output: PdpOutput) -> Result<f64>;
}

impl PdpSurface for GbexModel {
    fn n_features(&self) -> usize {
        GbexModel::n_features(self)
    }

    fn evaluate(&self, x: ArrayView1<f64>, output: PdpOutput) -> Result<f64> {
        let p = self.predict_params(x, None);
        match output {
            PdpOutput::Sigma => Ok(p.sigma),
            PdpOutput::Gamma => Ok(p.gamma),
            PdpOutput::Quantile(_) => Err(Error::domain(
                "quantile partial dependence needs the threshold model; use the full extreme model",
            )),
        }
    }
}

impl PdpSurface for ExtremeModel {
    fn n_features(&self) -> usize {
        ExtremeModel::n_features(self)
    }

    fn evaluate(&self, x: ArrayView1<f64>, output: PdpOutput) -> Result<f64> {
        match output {
            PdpOutput::Quantile(tau) => self.predict_extreme_quantile(x, tau),
            other => self.gbex().evaluate(x, other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialDependence {
    pub features: Vec<usize>,
    pub output: PdpOutput,
    /// One coordinate per feature at each grid point.
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Evenly spaced grid spanning the observed range of column `j`.
pub fn feature_grid(x: ArrayView2<f64>, j: usize, n_points: usize) -> Vec<f64> {
    let col = x.column(j);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match n_points {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        k => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Average model output over the rows of `x` with the chosen feature(s)
/// overwritten by each grid value (cross product for two features).
pub fn partial_dependence<M: PdpSurface>(
    m: &M,
    x: ArrayView2<f64>,
    features: &[usize],
    grids: &[Vec<f64>],
    output: PdpOutput,
) -> Result<PartialDependence> {
    if !(1..=2).contains(&features.len()) || grids.len() != features.len() {
        return Err(Error::domain("partial dependence takes one or two features with one grid each"));
    }
    if x.ncols() != m.n_features() || features.iter().any(|&j| j >= x.ncols()) {
        return Err(Error::domain("feature index or covariate dimension mismatch"));
    }
    if grids.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("partial dependence grid must be finite"));
    }
    let points: Vec<Vec<f64>> = match grids {
        [g] => g.iter().map(|&v| vec![v]).collect(),
        [g1, g2] => g1.iter().flat_map(|&a| g2.iter().map(move |&b| vec![a, b])).collect(),
        _ => unreachable!(),
    };
    let values = points
        .par_iter()
        .map(|pt| {
            let mut modified: Array2<f64> = x.to_owned();
            for (&j, &v) in features.iter().zip(pt) {
                modified.column_mut(j).fill(v);
            }
            let mut total = 0.0;
            for row in modified.axis_iter(Axis(0)) {
                total += m.evaluate(row, output)?;
            }
            Ok(total / x.nrows() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PartialDependence {
        features: features.to_vec(),
        output,
        points,
        values,
    })
}
