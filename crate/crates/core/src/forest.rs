//! Generalized random forest for quantile regression.
//!
//! Each tree is grown on half of a subsample (the split half) with a
//! multiclass criterion on responses recoded by parent-node quantiles; the
//! other half (the weight half) populates the leaves. Predictions minimize the
//! weighted check loss under the averaged leaf-frequency weights.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{self, eligible, GrowParams, Node, SplitCriterion, Tree};

/// Tolerance on the total weight passed to [`weighted_quantile`].
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

const MIN_GAIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Subsample fraction drawn without replacement for each tree.
    pub subsample: f64,
    /// Features tried per split; `None` resolves to `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    /// Minimum number of split-half observations in each child.
    pub min_node: usize,
    /// Quantile orders used to recode responses into classes at each node.
    pub quantile_orders: Vec<f64>,
    /// When false every tree is grown and weighted on its whole subsample.
    pub honesty: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            subsample: 0.5,
            mtry: None,
            min_node: 5,
            quantile_orders: vec![0.1, 0.5, 0.9],
            honesty: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, d: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!(
                "forest subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        if self.min_node == 0 {
            return Err(Error::Config("min_node must be positive".into()));
        }
        let orders = &self.quantile_orders;
        if orders.is_empty()
            || orders.iter().any(|&t| !(t > 0.0 && t < 1.0))
            || orders.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Config(format!(
                "class quantile orders must be nondecreasing in (0, 1), got {orders:?}"
            )));
        }
        Ok(())
    }
}

/// Multiclass split criterion on responses recoded at each node.
pub fn multiclass_split_gain(left_counts: &[usize], right_counts: &[usize]) -> Result<f64> {
    let n_left: usize = left_counts.iter().sum();
    let n_right: usize = right_counts.iter().sum();
    if n_left == 0 || n_right == 0 {
        return Err(Error::domain("multiclass criterion needs two nonempty children"));
    }
    let sq = |c: &[usize]| c.iter().map(|&k| (k * k) as f64).sum::<f64>();
    Ok(sq(left_counts) / n_left as f64 + sq(right_counts) / n_right as f64)
}

/// Empirical quantile of type 1 (an order statistic).
fn type1_quantile(sorted: &[f64], tau: f64) -> f64 {
    let m = sorted.len();
    let k = ((tau * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

struct Multiclass<'a> {
    y: &'a [f64],
    orders: &'a [f64],
}

struct NodeLabels {
    labels: Vec<u8>,
    parent_sq: f64,
    n_classes: usize,
}

impl SplitCriterion for Multiclass<'_> {
    type State = NodeLabels;

    fn node_state(&self, rows: &[usize]) -> Option<NodeLabels> {
        let mut sorted: Vec<f64> = rows.iter().map(|&r| self.y[r]).collect();
        sorted.sort_by(f64::total_cmp);
        let cuts: Vec<f64> = self.orders.iter().map(|&t| type1_quantile(&sorted, t)).collect();
        let n_classes = cuts.len() + 1;
        let mut labels = vec![0u8; self.y.len()];
        let mut counts = vec![0usize; n_classes];
        for &r in rows {
            let s = cuts.iter().filter(|&&q| self.y[r] <= q).count();
            labels[r] = s as u8;
            counts[s] += 1;
        }
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return None;
        }
        let parent_sq = counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / rows.len() as f64;
        Some(NodeLabels {
            labels,
            parent_sq,
            n_classes,
        })
    }

    fn best_boundary(&self, st: &NodeLabels, ordered: &[usize], values: &[f64], min_leaf: usize) -> Option<(usize, f64)> {
        let m = ordered.len();
        let mut left = vec![0usize; st.n_classes];
        let mut right = vec![0usize; st.n_classes];
        for &r in ordered {
            right[st.labels[r] as usize] += 1;
        }
        let mut sq_left = 0usize;
        let mut sq_right: usize = right.iter().map(|c| c * c).sum();
        let mut best: Option<(usize, f64)> = None;
        for k in 1..m {
            let c = st.labels[ordered[k - 1]] as usize;
            sq_left += 2 * left[c] + 1;
            sq_right -= 2 * right[c] - 1;
            left[c] += 1;
            right[c] -= 1;
            if !eligible(values, k, min_leaf) {
                continue;
            }
            let gain = sq_left as f64 / k as f64 + sq_right as f64 / (m - k) as f64 - st.parent_sq;
            if gain > MIN_GAIN && best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        best
    }
}

/// One honest tree: leaves hold the weight-half indices that fall in them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    tree: Tree<Vec<u32>>,
    split_half: Vec<u32>,
    weight_half: Vec<u32>,
}

impl ForestTree {
    pub fn tree(&self) -> &Tree<Vec<u32>> {
        &self.tree
    }

    /// Observations the structure was grown on (sorted).
    pub fn split_half(&self) -> &[u32] {
        &self.split_half
    }

    /// Observations that carry the weights (sorted).
    pub fn weight_half(&self) -> &[u32] {
        &self.weight_half
    }

    pub fn contains(&self, i: usize) -> bool {
        let i = i as u32;
        self.split_half.binary_search(&i).is_ok() || self.weight_half.binary_search(&i).is_ok()
    }

    pub fn leaf_members(&self, x: ArrayView1<f64>) -> &[u32] {
        self.tree.leaf(x)
    }
}

/// Collapses every split with a child that holds no weight-half member.
fn prune_empty(tree: Tree<Vec<u32>>) -> Tree<Vec<u32>> {
    fn collect(nodes: &[Node<Vec<u32>>], at: usize, out: &mut Vec<u32>) {
        match &nodes[at] {
            Node::Leaf(m) => out.extend_from_slice(m),
            Node::Split(s) => {
                collect(nodes, s.left, out);
                collect(nodes, s.right, out);
            }
        }
    }
    fn count(nodes: &[Node<Vec<u32>>], at: usize) -> usize {
        match &nodes[at] {
            Node::Leaf(m) => m.len(),
            Node::Split(s) => count(nodes, s.left) + count(nodes, s.right),
        }
    }
    fn rebuild(old: &[Node<Vec<u32>>], at: usize, depth: usize, new: &mut Vec<Node<Vec<u32>>>, max_depth: &mut usize) -> usize {
        let idx = new.len();
        *max_depth = (*max_depth).max(depth);
        match &old[at] {
            Node::Split(s) if count(old, s.left) > 0 && count(old, s.right) > 0 => {
                new.push(Node::Split(s.clone()));
                let l = rebuild(old, s.left, depth + 1, new, max_depth);
                let r = rebuild(old, s.right, depth + 1, new, max_depth);
                if let Node::Split(n) = &mut new[idx] {
                    n.left = l;
                    n.right = r;
                }
            }
            _ => {
                let mut members = Vec::new();
                collect(old, at, &mut members);
                members.sort_unstable();
                new.push(Node::Leaf(members));
            }
        }
        idx
    }
    let old = tree.into_nodes();
    let mut new = Vec::with_capacity(old.len());
    let mut depth = 0;
    rebuild(&old, 0, 0, &mut new, &mut depth);
    Tree::from_parts(new, depth)
}

/// Fitted quantile regression forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileForest {
    trees: Vec<ForestTree>,
    x: Array2<f64>,
    y: Vec<f64>,
    config: ForestConfig,
}

pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], config: &ForestConfig) -> Result<QuantileForest> {
    config.validate()?;
    let n = x.nrows();
    if n != y.len() {
        return Err(Error::domain(format!("{n} covariate rows but {} responses", y.len())));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("forest inputs must be finite"));
    }
    if n < 4 * config.min_node {
        return Err(Error::InsufficientData(format!(
            "forest with min_node = {} needs at least {} observations, got {n}",
            config.min_node,
            4 * config.min_node
        )));
    }
    let size = (config.subsample * n as f64).floor() as usize;
    if size < 2 {
        return Err(Error::InsufficientData(format!(
            "subsample of {size} observations is too small to split into halves"
        )));
    }
    let params = GrowParams {
        max_depth: usize::MAX,
        min_leaf: config.min_node,
        mtry: config.resolved_mtry(x.ncols()),
    };

    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(config.seed, &[b as u64]);
            let drawn = index::sample(&mut rng, n, size).into_vec();
            let (mut split_half, mut weight_half) = if config.honesty {
                let cut = size.div_ceil(2);
                (drawn[..cut].to_vec(), drawn[cut..].to_vec())
            } else {
                (drawn.clone(), drawn)
            };
            split_half.sort_unstable();
            weight_half.sort_unstable();

            let local_x = x.select(Axis(0), &split_half);
            let local_y: Vec<f64> = split_half.iter().map(|&i| y[i]).collect();
            let crit = Multiclass {
                y: &local_y,
                orders: &config.quantile_orders,
            };
            let grown = tree::grow(local_x.view(), (0..split_half.len()).collect(), &crit, params, &mut rng);

            // Re-populate the leaves with the weight half.
            let depth = grown.depth();
            let routed = grown.map_leaves(|_| Vec::<u32>::new());
            let mut members: Vec<(usize, u32)> = weight_half
                .iter()
                .map(|&i| (routed.leaf_index(x.row(i)), i as u32))
                .collect();
            members.sort_unstable();
            let mut nodes = routed.into_nodes();
            for (leaf, i) in members {
                if let Node::Leaf(m) = &mut nodes[leaf] {
                    m.push(i);
                }
            }
            ForestTree {
                tree: prune_empty(Tree::from_parts(nodes, depth)),
                split_half: split_half.into_iter().map(|i| i as u32).collect(),
                weight_half: weight_half.into_iter().map(|i| i as u32).collect(),
            }
        })
        .collect();

    Ok(QuantileForest {
        trees,
        x: x.to_owned(),
        y: y.to_vec(),
        config: config.clone(),
    })
}

impl QuantileForest {
    pub fn trees(&self) -> &[ForestTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    fn accumulate<'a>(&self, trees: impl Iterator<Item = &'a ForestTree>, x: ArrayView1<f64>, weights: &mut [f64]) -> usize {
        let mut used = 0;
        for t in trees {
            used += 1;
            let members = t.leaf_members(x);
            if members.is_empty() {
                continue;
            }
            let w = 1.0 / members.len() as f64;
            for &i in members {
                weights[i as usize] += w;
            }
        }
        used
    }

    /// Localizing weights `w_i(x)` averaged over all trees.
    pub fn forest_weights(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let mut w = vec![0.0; self.n_obs()];
        let used = self.accumulate(self.trees.iter(), x, &mut w);
        let scale = 1.0 / used as f64;
        w.iter_mut().for_each(|v| *v *= scale);
        w
    }

    /// Out-of-bag weights at training point `i`, from the trees whose
    /// subsample excludes `i`.
    pub fn oob_weights(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.n_obs() {
            return Err(Error::domain(format!("observation {i} out of range")));
        }
        let mut w = vec![0.0; self.n_obs()];
        let used = self.accumulate(self.trees.iter().filter(|t| !t.contains(i)), self.x.row(i), &mut w);
        if used == 0 {
            return Err(Error::InsufficientData(format!(
                "observation {i} is in every subsample; no out-of-bag trees"
            )));
        }
        let scale = 1.0 / used as f64;
        w.iter_mut().for_each(|v| *v *= scale);
        Ok(w)
    }

    fn quantiles_from_weights(&self, weights: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        let mut pairs: Vec<(f64, f64)> = weights
            .iter()
            .zip(&self.y)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &y)| (y, w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        taus.iter().map(|&t| sorted_weighted_quantile(&pairs, t)).collect()
    }

    pub fn predict_quantile(&self, x: ArrayView1<f64>, tau: f64) -> Result<f64> {
        Ok(self.predict_quantiles(x, &[tau])?[0])
    }

    pub fn predict_quantiles(&self, x: ArrayView1<f64>, taus: &[f64]) -> Result<Vec<f64>> {
        self.quantiles_from_weights(&self.forest_weights(x), taus)
    }

    pub fn oob_quantile(&self, i: usize, tau: f64) -> Result<f64> {
        self.quantiles_from_weights(&self.oob_weights(i)?, &[tau]).map(|v| v[0])
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::domain(format!("quantile level must lie in [0, 1], got {tau}")))
    }
}

/// `pairs` are `(value, weight)` sorted by value with positive weights.
fn sorted_weighted_quantile(pairs: &[(f64, f64)], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if pairs.is_empty() || !(total > 0.0) {
        return Err(Error::domain("weighted quantile needs positive total weight"));
    }
    let target = tau * total * (1.0 - 1e-12);
    let mut cum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            cum += pairs[i].1;
            i += 1;
        }
        if cum >= target {
            return Ok(v);
        }
    }
    Ok(pairs[pairs.len() - 1].0)
}

/// Smallest data value whose cumulative weight reaches `tau`; a minimizer of
/// the weighted check loss `Σ w_i ρ_τ(y_i - q)`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], tau: f64) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::domain("values and weights differ in length"));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::domain("weights must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::domain(format!("weights must sum to 1, got {total}")));
    }
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, &w)| (v, w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted_weighted_quantile(&pairs, tau)
}
