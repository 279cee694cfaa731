use gbex::rng::stream;
use gbex::tree::{fit_gradient_tree, fit_regression_tree, Node};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng as _;

fn sse(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|y| (y - m) * (y - m)).sum()
}

/// Exhaustive best RSS decrease over all (feature, midpoint) candidates.
fn brute_force_gain(x: &Array2<f64>, y: &[f64], rows: &[usize], min_leaf: usize) -> Option<f64> {
    let parent: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let mut best: Option<f64> = None;
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<f64>, Vec<f64>) = rows.iter().map(|&i| (x[[i, f]], y[i])).fold(
                (Vec::new(), Vec::new()),
                |(mut l, mut r), (xv, yv)| {
                    if xv <= t {
                        l.push(yv)
                    } else {
                        r.push(yv)
                    }
                    (l, r)
                },
            );
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let g = sse(&parent) - sse(&l) - sse(&r);
            best = Some(best.map_or(g, |b: f64| b.max(g)));
        }
    }
    best
}

fn routed_rows(tree: &gbex::RegressionTree, x: &Array2<f64>, node: usize) -> Vec<usize> {
    (0..x.nrows())
        .filter(|&i| {
            let mut at = 0;
            loop {
                if at == node {
                    return true;
                }
                match &tree.nodes()[at] {
                    Node::Leaf(_) => return false,
                    Node::Split(s) => at = if x[[i, s.feature]] <= s.threshold { s.left } else { s.right },
                }
            }
        })
        .collect()
}

fn sample() -> impl Strategy<Value = (Array2<f64>, Vec<f64>, usize, usize)> {
    (4usize..=30, 1usize..=3, 1usize..=3, 1usize..=3, any::<u64>()).prop_map(|(n, d, depth, min_leaf, seed)| {
        let mut r = stream(seed, &[]);
        // Coarse values produce ties in both covariates and targets.
        let x = Array2::<f64>::from_shape_fn((n, d), |_| (r.gen_range(0..8) as f64) / 2.0);
        let y = (0..n).map(|_| r.gen_range(-3..4) as f64 + r.gen_range(0.0..0.1)).collect();
        (x, y, depth, min_leaf)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_split_is_the_best_available((x, y, depth, min_leaf) in sample()) {
        let tree = fit_regression_tree(x.view(), &y, depth, min_leaf, x.ncols(), &mut stream(0, &[])).unwrap();
        for (k, node) in tree.nodes().iter().enumerate() {
            if let Node::Split(s) = node {
                let rows = routed_rows(&tree, &x, k);
                let best = brute_force_gain(&x, &y, &rows, min_leaf).unwrap();
                prop_assert!((s.rss_decrease - best).abs() <= 1e-9 * (1.0 + best.abs()),
                    "node {} gain {} vs brute force {}", k, s.rss_decrease, best);
            }
        }
    }

    #[test]
    fn gradient_leaves_are_clipped((x, y, depth, min_leaf) in sample(), scale in 0.01f64..100.0) {
        let g: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let h: Vec<f64> = y.iter().map(|v| v.abs() * 0.1).collect();
        let t = fit_gradient_tree(x.view(), &g, &h, depth, min_leaf, x.ncols(), &mut stream(0, &[])).unwrap();
        prop_assert!(t.leaves().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn each_point_lands_in_exactly_one_leaf() {
    let mut r = stream(3, &[]);
    let x = Array2::<f64>::from_shape_fn((300, 4), |_| r.gen_range(-1.0..1.0));
    let y: Vec<f64> = (0..300).map(|i| x[[i, 0]].sin() + x[[i, 2]] * x[[i, 3]]).collect();
    let tree = fit_regression_tree(x.view(), &y, 4, 5, 4, &mut stream(0, &[])).unwrap();
    let n_leaves = tree.n_leaves();
    for _ in 0..1000 {
        let p = Array1::from_shape_fn(4, |_| r.gen_range(-1.5..1.5));
        let hits = (0..tree.nodes().len())
            .filter(|&k| matches!(tree.nodes()[k], Node::Leaf(_)) && tree.leaf_index(p.view()) == k)
            .count();
        assert_eq!(hits, 1);
    }
    assert!(n_leaves <= 16);
}

#[test]
fn same_seed_same_tree() {
    let mut r = stream(4, &[]);
    let x = Array2::<f64>::from_shape_fn((200, 6), |_| r.gen_range(-1.0..1.0));
    let y: Vec<f64> = (0..200).map(|i| x[[i, 1]] + r.gen_range(-0.1..0.1)).collect();
    let a = fit_regression_tree(x.view(), &y, 3, 3, 2, &mut stream(9, &[])).unwrap();
    let b = fit_regression_tree(x.view(), &y, 3, 3, 2, &mut stream(9, &[])).unwrap();
    assert_eq!(a, b);
}
