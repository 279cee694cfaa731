//! Binary split trees grown by recursive binary splitting.
//!
//! One node arena serves three kinds of trees: least-squares regression trees,
//! gradient trees whose leaves hold truncated Newton steps, and the honest
//! trees of the quantile forest (whose leaves hold training indices). The
//! split search is shared; only the criterion differs.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Curvature sums at or below this are treated as unusable in a Newton step.
pub const HESSIAN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Improvement of the split criterion: the RSS decrease for regression
    /// and gradient trees, the multiclass gain for forest trees.
    pub rss_decrease: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Leaf(L),
    Split(SplitNode),
}

/// Arena-backed binary tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    nodes: Vec<Node<L>>,
    depth: usize,
}

/// Tree with real leaf values (least-squares means or Newton steps).
pub type RegressionTree = Tree<f64>;

impl<L> Tree<L> {
    pub fn constant(leaf: L) -> Self {
        Tree {
            nodes: vec![Node::Leaf(leaf)],
            depth: 0,
        }
    }

    pub fn nodes(&self) -> &[Node<L>] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Arena index of the leaf containing `x`; `x` goes left iff
    /// `x[feature] <= threshold`.
    pub fn leaf_index(&self, x: ArrayView1<f64>) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(_) => return at,
                Node::Split(s) => {
                    at = if x[s.feature] <= s.threshold { s.left } else { s.right };
                }
            }
        }
    }

    pub fn leaf(&self, x: ArrayView1<f64>) -> &L {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf(l) => l,
            Node::Split(_) => unreachable!("leaf_index stops at a leaf"),
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = &SplitNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split(s) => Some(s),
            Node::Leaf(_) => None,
        })
    }

    pub fn leaves(&self) -> impl Iterator<Item = &L> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split(_) => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn map_leaves<M>(self, mut f: impl FnMut(L) -> M) -> Tree<M> {
        Tree {
            nodes: self
                .nodes
                .into_iter()
                .map(|n| match n {
                    Node::Leaf(l) => Node::Leaf(f(l)),
                    Node::Split(s) => Node::Split(s),
                })
                .collect(),
            depth: self.depth,
        }
    }

    pub(crate) fn from_parts(nodes: Vec<Node<L>>, depth: usize) -> Self {
        Tree { nodes, depth }
    }

    pub(crate) fn into_nodes(self) -> Vec<Node<L>> {
        self.nodes
    }
}

impl RegressionTree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        *self.leaf(x)
    }
}

/// How candidate splits of a node are scored.
pub(crate) trait SplitCriterion {
    type State;

    /// Per-node preparation; `None` means the node cannot be improved.
    fn node_state(&self, rows: &[usize]) -> Option<Self::State>;

    /// Scans `ordered` (node rows sorted by one feature, with `values` the
    /// matching feature values) and returns the best boundary `k` (left child
    /// = first `k` rows) with its gain. Only boundaries between distinct
    /// values leaving `min_leaf` rows on each side are eligible; ties keep the
    /// smallest `k`.
    fn best_boundary(
        &self,
        state: &Self::State,
        ordered: &[usize],
        values: &[f64],
        min_leaf: usize,
    ) -> Option<(usize, f64)>;
}

#[inline]
pub(crate) fn eligible(values: &[f64], k: usize, min_leaf: usize) -> bool {
    k >= min_leaf && values.len() - k >= min_leaf && values[k - 1] < values[k]
}

/// Least-squares criterion: gain is the decrease in residual sum of squares.
pub(crate) struct SquaredError<'a> {
    pub targets: &'a [f64],
}

impl SplitCriterion for SquaredError<'_> {
    type State = f64;

    fn node_state(&self, rows: &[usize]) -> Option<f64> {
        let first = self.targets[rows[0]];
        if rows.iter().all(|&r| self.targets[r] == first) {
            return None;
        }
        Some(rows.iter().map(|&r| self.targets[r]).sum::<f64>() / rows.len() as f64)
    }

    fn best_boundary(&self, mean: &f64, ordered: &[usize], values: &[f64], min_leaf: usize) -> Option<(usize, f64)> {
        let m = ordered.len();
        let mut left_sum = 0.0;
        let mut best: Option<(usize, f64)> = None;
        for k in 1..m {
            left_sum += self.targets[ordered[k - 1]] - mean;
            if !eligible(values, k, min_leaf) {
                continue;
            }
            let gain = left_sum * left_sum * m as f64 / (k as f64 * (m - k) as f64);
            if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub mtry: usize,
}

struct Grower<'x, 'c, C> {
    x: ArrayView2<'x, f64>,
    crit: &'c C,
    params: GrowParams,
    nodes: Vec<Node<Vec<usize>>>,
    depth: usize,
}

impl<C: SplitCriterion> Grower<'_, '_, C> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let at = self.nodes.len();
        self.depth = self.depth.max(depth);
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf.max(1) {
            self.nodes.push(Node::Leaf(rows));
            return at;
        }
        let Some(state) = self.crit.node_state(&rows) else {
            self.nodes.push(Node::Leaf(rows));
            return at;
        };

        let d = self.x.ncols();
        let features: Vec<usize> = if self.params.mtry >= d {
            (0..d).collect()
        } else {
            let mut f = index::sample(rng, d, self.params.mtry.max(1)).into_vec();
            f.sort_unstable();
            f
        };

        // (feature, threshold, k, gain, ordered rows)
        let mut best: Option<(usize, f64, f64, Vec<usize>, usize)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        let mut ordered = Vec::with_capacity(rows.len());
        for &f in &features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[[r, f]], r)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            values.clear();
            values.extend(pairs.iter().map(|p| p.0));
            ordered.clear();
            ordered.extend(pairs.iter().map(|p| p.1));
            if let Some((k, gain)) = self.crit.best_boundary(&state, &ordered, &values, self.params.min_leaf) {
                if best.as_ref().is_none_or(|b| gain > b.2) {
                    let (a, b) = (values[k - 1], values[k]);
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((f, threshold, gain, ordered.clone(), k));
                }
            }
        }

        let Some((feature, threshold, gain, ordered, k)) = best else {
            self.nodes.push(Node::Leaf(rows));
            return at;
        };
        drop(rows);
        let mut left_rows = ordered[..k].to_vec();
        let mut right_rows = ordered[k..].to_vec();
        left_rows.sort_unstable();
        right_rows.sort_unstable();

        self.nodes.push(Node::Split(SplitNode {
            feature,
            threshold,
            left: 0,
            right: 0,
            rss_decrease: gain,
        }));
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        if let Node::Split(s) = &mut self.nodes[at] {
            s.left = left;
            s.right = right;
        }
        at
    }
}

/// Grows a tree on `rows` of `x`; each leaf holds the rows that reached it.
pub(crate) fn grow<C: SplitCriterion>(
    x: ArrayView2<f64>,
    rows: Vec<usize>,
    crit: &C,
    params: GrowParams,
    rng: &mut Rng,
) -> Tree<Vec<usize>> {
    let mut grower = Grower {
        x,
        crit,
        params,
        nodes: Vec::new(),
        depth: 0,
    };
    grower.grow(rows, 0, rng);
    Tree {
        nodes: grower.nodes,
        depth: grower.depth,
    }
}

fn check_sizes(x: ArrayView2<f64>, n_targets: usize, min_leaf: usize) -> Result<()> {
    if x.nrows() != n_targets {
        return Err(Error::domain(format!(
            "{} rows of covariates but {} targets",
            x.nrows(),
            n_targets
        )));
    }
    if x.nrows() == 0 || x.nrows() < min_leaf {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot form a leaf of at least {} points",
            x.nrows(),
            min_leaf
        )));
    }
    Ok(())
}

/// Least-squares regression tree with leaf means.
pub fn fit_regression_tree(
    x: ArrayView2<f64>,
    targets: &[f64],
    max_depth: usize,
    min_leaf: usize,
    feature_subset_size: usize,
    rng: &mut Rng,
) -> Result<RegressionTree> {
    check_sizes(x, targets.len(), min_leaf)?;
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::domain("regression targets must be finite"));
    }
    let params = GrowParams {
        max_depth,
        min_leaf,
        mtry: feature_subset_size,
    };
    let tree = grow(x, (0..x.nrows()).collect(), &SquaredError { targets }, params, rng);
    Ok(tree.map_leaves(|rows| rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64))
}

/// Newton step `-Σg / Σh` clipped to `[-1, 1]`.
///
/// When the curvature sum is unusable the clipped negative mean gradient is
/// used instead.
pub fn truncated_newton_step(grad_sum: f64, hess_sum: f64, count: usize) -> f64 {
    let step = if hess_sum > HESSIAN_FLOOR {
        -grad_sum / hess_sum
    } else if count > 0 {
        -grad_sum / count as f64
    } else {
        0.0
    };
    step.clamp(-1.0, 1.0)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_gradient_tree_on_rows(
    x: ArrayView2<f64>,
    rows: Vec<usize>,
    grads: &[f64],
    hessians: &[f64],
    max_depth: usize,
    min_leaf: usize,
    feature_subset_size: usize,
    rng: &mut Rng,
) -> RegressionTree {
    let params = GrowParams {
        max_depth,
        min_leaf,
        mtry: feature_subset_size,
    };
    let tree = grow(x, rows, &SquaredError { targets: grads }, params, rng);
    tree.map_leaves(|members| {
        let g: f64 = members.iter().map(|&r| grads[r]).sum();
        let h: f64 = members.iter().map(|&r| hessians[r]).sum();
        truncated_newton_step(g, h, members.len())
    })
}

/// Gradient tree: the structure of the least-squares tree fitted to `grads`,
/// with truncated Newton steps as leaf values.
pub fn fit_gradient_tree(
    x: ArrayView2<f64>,
    grads: &[f64],
    hessians: &[f64],
    max_depth: usize,
    min_leaf: usize,
    feature_subset_size: usize,
    rng: &mut Rng,
) -> Result<RegressionTree> {
    check_sizes(x, grads.len(), min_leaf)?;
    if hessians.len() != grads.len() {
        return Err(Error::domain("gradients and hessians differ in length"));
    }
    if grads.iter().chain(hessians).any(|t| !t.is_finite()) {
        return Err(Error::domain("derivatives must be finite"));
    }
    Ok(fit_gradient_tree_on_rows(
        x,
        (0..x.nrows()).collect(),
        grads,
        hessians,
        max_depth,
        min_leaf,
        feature_subset_size,
        rng,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    fn rng() -> Rng {
        stream(1, &[])
    }

    #[test]
    fn four_point_step() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let tree = fit_regression_tree(x.view(), &[0.0, 0.0, 10.0, 10.0], 1, 1, 1, &mut rng()).unwrap();
        let splits: Vec<_> = tree.splits().collect();
        assert_eq!(splits.len(), 1);
        assert_eq!(splits[0].threshold, 1.5);
        assert_eq!(splits[0].feature, 0);
        assert_eq!(tree.predict(array![0.7].view()), 0.0);
        assert_eq!(tree.predict(array![2.9].view()), 10.0);
        assert_eq!(tree.predict(array![1.5].view()), 0.0);
        assert!((splits[0].rss_decrease - 100.0).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_give_a_single_leaf() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let tree = fit_regression_tree(x.view(), &[5.0; 4], 3, 1, 1, &mut rng()).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.predict(array![100.0].view()), 5.0);
    }

    #[test]
    fn zero_depth_is_the_mean() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let tree = fit_regression_tree(x.view(), &[1.0, 2.0, 3.0, 6.0], 0, 1, 1, &mut rng()).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.predict(array![0.0].view()), 3.0);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            fit_regression_tree(x.view(), &[0.0, 1.0], 2, 3, 1, &mut rng()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn newton_leaf_values() {
        let x = array![[0.0], [1.0]];
        let t = fit_gradient_tree(x.view(), &[2.0, 2.0], &[1.0, 1.0], 2, 1, 1, &mut rng()).unwrap();
        assert_eq!(t.predict(array![0.0].view()), -1.0);
        let t = fit_gradient_tree(x.view(), &[0.2, 0.2], &[1.0, 1.0], 2, 1, 1, &mut rng()).unwrap();
        assert!((t.predict(array![0.0].view()) + 0.2).abs() < 1e-15);
        let t = fit_gradient_tree(x.view(), &[0.0, 0.0], &[1.0, 1.0], 2, 1, 1, &mut rng()).unwrap();
        assert_eq!(t.predict(array![0.0].view()), 0.0);
    }

    #[test]
    fn degenerate_curvature_uses_mean_gradient() {
        assert_eq!(truncated_newton_step(0.6, 0.0, 2), -0.3);
        assert_eq!(truncated_newton_step(-6.0, -1.0, 2), 1.0);
        assert_eq!(truncated_newton_step(0.0, 0.0, 0), 0.0);
    }

    #[test]
    fn gradient_tree_shares_structure_with_regression_tree() {
        let mut r = stream(5, &[]);
        let n = 60;
        let x = Array2::<f64>::from_shape_fn((n, 3), |_| r.gen_range(-1.0..1.0));
        let g: Vec<f64> = (0..n).map(|i| x[[i, 1]].signum() * 3.0 + r.gen_range(-0.5..0.5)).collect();
        let h: Vec<f64> = (0..n).map(|_| r.gen_range(0.5..2.0)).collect();
        let reg = fit_regression_tree(x.view(), &g, 2, 5, 3, &mut rng()).unwrap();
        let grad = fit_gradient_tree(x.view(), &g, &h, 2, 5, 3, &mut rng()).unwrap();
        let a: Vec<_> = reg.splits().map(|s| (s.feature, s.threshold)).collect();
        let b: Vec<_> = grad.splits().map(|s| (s.feature, s.threshold)).collect();
        assert_eq!(a, b);
        assert!(grad.leaves().all(|v| v.abs() <= 1.0));
    }
}
