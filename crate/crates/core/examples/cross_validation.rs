// Chooses the number of boosting iterations and the tree depths by repeated
// K-fold cross-validation of the deviance.

use gbex::boost::GbexHyperParams;
use gbex::forest::ForestConfig;
use gbex::pipeline::fit_threshold_stage;
use gbex::sim::SimModel;
use gbex::tuning::{select_depths, CvSettings};

pub fn run_example() -> gbex::Result<()> {
    let data = SimModel::Model1.generate(2000, 6);
    let forest = ForestConfig { n_trees: 300, seed: 6, ..Default::default() };
    let (_, z) = fit_threshold_stage(data.x.view(), &data.y, 0.8, &forest)?;

    let settings = CvSettings { folds: 5, repeats: 2, b_max: 200, seed: 6 };
    let h = GbexHyperParams { lambda_scale: 0.02, ..Default::default() };
    let sel = select_depths(data.x.view(), &z, &[(1, 0), (1, 1), (2, 1)], &h, &settings)?;
    for c in &sel.curves {
        println!(
            "depths ({}, {}): B = {:3}, deviance {:.2} (B = 0: {:.2})",
            c.depth_sigma, c.depth_gamma, c.selected_b, c.dev[c.selected_b], c.dev[0]
        );
    }
    println!("selected depths ({}, {}) with {} trees", sel.depth_sigma, sel.depth_gamma, sel.n_trees);
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
