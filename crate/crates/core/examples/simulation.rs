// A small replicated comparison of boosted, constant and forest-only
// quantile estimates, scored by integrated squared error.

use gbex::forest::ForestConfig;
use gbex::sim::bench::{run_comparison, standard_methods, ComparisonConfig};
use gbex::sim::SimModel;

pub fn run_example() -> gbex::Result<()> {
    let model = SimModel::Model1;
    let cfg = ComparisonConfig {
        replications: 3,
        forest: ForestConfig { n_trees: 200, ..Default::default() },
        n_points: 1024,
        seed: 8,
        ..ComparisonConfig::new(model)
    };
    let (mut g, c, f) = standard_methods(model, None);
    g.hyper.n_trees = 150;
    let result = run_comparison(&cfg, &[&g, &c, &f])?;
    println!("{:>8} {:>10} {:>10} {:>14}", "tau", "gbex", "constant", "forest_direct");
    for &tau in &cfg.taus {
        let mise = |m: &str| result.get(m, tau).map_or(f64::NAN, |r| r.mise);
        println!("{tau:>8} {:>10.3} {:>10.3} {:>14.3}", mise("gbex"), mise("constant"), mise("forest_direct"));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> gbex::Result<()> {
    run_example()
}
