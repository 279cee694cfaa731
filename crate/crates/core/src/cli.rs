//! Command-line interface. The binary only forwards its arguments to [`run`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Axis;

use crate::boost::fit_gbex;
use crate::diagnostics::{feature_grid, importance_report, partial_dependence, PdpOutput};
use crate::error::{Error, Result};
use crate::gpd::Exceedance;
use crate::io::{self, load_csv, load_features, load_model, save_model, write_csv, ModelFile, ModelMetadata, RunConfig};
use crate::pipeline::{fit_threshold_stage, ExtremeModel, DEFAULT_TAU0};
use crate::sim::{run_comparison, standard_methods, ComparisonConfig, Method, SimModel};
use crate::tuning::{select_depths, CvSettings};

const DEFAULT_DEPTH_GRID: [(usize, usize); 4] = [(1, 0), (1, 1), (2, 1), (2, 2)];

#[derive(Debug, Parser)]
#[command(name = "gbex", version, about = "Extreme quantile regression with boosted generalized Pareto tails")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the threshold forest and the boosted tail model.
    Fit(FitArgs),
    /// Predict intermediate and extreme conditional quantiles.
    Predict(PredictArgs),
    /// Cross-validate the number of trees over a grid of depth pairs.
    Cv(CvArgs),
    /// Permutation and relative importance of each feature.
    Importance(ImportanceArgs),
    /// Partial dependence of a fitted quantity on one or two features.
    Pdp(PdpArgs),
    /// Replicated simulation comparing gbex, constant and forest quantiles.
    Simulate(SimulateArgs),
}

#[derive(Debug, clap::Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long)]
    tau0: Option<f64>,
    /// Flat JSON configuration; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Choose the number of trees (and depths, if the config has a grid) by cross-validation.
    #[arg(long)]
    cv: bool,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    depth_sigma: Option<usize>,
    #[arg(long)]
    depth_gamma: Option<usize>,
    #[arg(long)]
    forest_trees: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Quantile level; repeat or separate by commas for several.
    #[arg(long, required = true, value_delimiter = ',')]
    tau: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON list of depth pairs, e.g. [[1,0],[1,1]].
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long = "Bmax", alias = "bmax")]
    b_max: Option<usize>,
    #[arg(long = "K", alias = "folds")]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    forest_trees: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Response column; defaults to the one the model was trained on.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PdpKind {
    Sigma,
    Gamma,
    Quantile,
}

#[derive(Debug, clap::Args)]
struct PdpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    feature: String,
    #[arg(long)]
    feature2: Option<String>,
    #[arg(long, value_enum, default_value = "quantile")]
    output: PdpKind,
    #[arg(long)]
    tau: Option<f64>,
    /// Grid points per feature.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    model_id: u32,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "R", alias = "replications", default_value_t = 20)]
    replications: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.99, 0.995, 0.9995])]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TAU0)]
    tau0: f64,
    #[arg(long, default_value_t = crate::sim::bench::DEFAULT_N_POINTS)]
    n_points: usize,
    #[arg(long)]
    forest_trees: Option<usize>,
    /// Use a fixed number of trees instead of cross-validating it.
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long = "Bmax", alias = "bmax", default_value_t = 500)]
    b_max: usize,
    #[arg(long = "K", alias = "folds", default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::Config(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Exit status per failure class.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 3,
        Error::Parse { .. } | Error::MissingTarget(_) | Error::EmptyDataset | Error::Format(_) => 4,
        Error::Domain(_) | Error::InsufficientData(_) | Error::Config(_) => 5,
        Error::NonConvergence(_) => 6,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Cv(a) => cv(a),
        Command::Importance(a) => importance(a),
        Command::Pdp(a) => pdp(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    path.as_ref().map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn cv_settings(cfg: &RunConfig, seed: u64) -> CvSettings {
    let d = CvSettings::default();
    CvSettings {
        folds: cfg.cv_folds.unwrap_or(d.folds),
        repeats: cfg.cv_repeats.unwrap_or(d.repeats),
        b_max: cfg.cv_b_max.unwrap_or(d.b_max),
        seed,
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let mut cfg = load_config(&a.data.config)?;
    cfg.seed = a.data.seed.or(cfg.seed);
    cfg.tau0 = a.data.tau0.or(cfg.tau0);
    cfg.n_trees = a.n_trees.or(cfg.n_trees);
    cfg.depth_sigma = a.depth_sigma.or(cfg.depth_sigma);
    cfg.depth_gamma = a.depth_gamma.or(cfg.depth_gamma);
    cfg.forest_n_trees = a.forest_trees.or(cfg.forest_n_trees);
    let seed = cfg.seed.unwrap_or(0);
    let tau0 = cfg.tau0.unwrap_or(DEFAULT_TAU0);

    let data = load_csv(&a.data.data, &a.data.target)?;
    let forest_cfg = cfg.forest();
    let (forest, z) = fit_threshold_stage(data.x.view(), &data.y, tau0, &forest_cfg)?;
    let mut hyper = cfg.gbex_hyper();
    let mut cv_selected_b = None;
    if a.cv {
        let grid = cfg.depth_grid.clone().unwrap_or_else(|| vec![(hyper.depth_sigma, hyper.depth_gamma)]);
        let sel = select_depths(data.x.view(), &z, &grid, &hyper, &cv_settings(&cfg, seed))?;
        hyper = sel.hyper();
        cv_selected_b = Some(sel.n_trees);
    }
    let gbex = fit_gbex(data.x.view(), &z, &hyper, None)?;
    let model = ExtremeModel::from_parts(forest, gbex, tau0)?;
    let theta0 = model.gbex().theta0();
    let n_pos = z.iter().filter(|z| z.is_positive()).count();
    save_model(
        &a.out,
        &ModelFile {
            metadata: ModelMetadata {
                format_version: io::MODEL_FORMAT_VERSION,
                tau0,
                seed,
                feature_names: data.feature_names,
                target: data.target,
                hyper: hyper.clone(),
                forest: forest_cfg,
                cv_selected_b,
            },
            model,
        },
    )?;
    println!("observations: {}", data.y.len());
    println!("positive exceedances: {n_pos}");
    println!("initial sigma: {}", theta0.sigma);
    println!("initial gamma: {}", theta0.gamma);
    println!("depths: ({}, {})", hyper.depth_sigma, hyper.depth_gamma);
    match cv_selected_b {
        Some(b) => println!("trees (cross-validated): {b}"),
        None => println!("trees: {}", hyper.n_trees),
    }
    println!("model written to {}", a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let mf = load_model(&a.model)?;
    let m = &mf.model;
    if let Some(&t) = a.tau.iter().find(|&&t| t < m.tau0()) {
        return Err(Error::Domain(format!("tau below tau0 ({t} < {})", m.tau0())));
    }
    let x = load_features(&a.data, &mf.metadata.feature_names)?;
    let rows = x
        .axis_iter(Axis(0))
        .map(|r| {
            let tail = m.tail_model(r)?;
            let mut row = vec![tail.threshold, tail.params.sigma, tail.params.gamma];
            for &t in &a.tau {
                row.push(tail.quantile(t)?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut header: Vec<String> = ["intermediate", "sigma", "gamma"].map(String::from).to_vec();
    header.extend(a.tau.iter().map(|t| format!("q_{t}")));
    write_csv(&a.out, &header, &rows)
}

fn cv(a: CvArgs) -> Result<()> {
    let mut cfg = load_config(&a.data.config)?;
    cfg.seed = a.data.seed.or(cfg.seed);
    cfg.tau0 = a.data.tau0.or(cfg.tau0);
    cfg.cv_b_max = a.b_max.or(cfg.cv_b_max);
    cfg.cv_folds = a.folds.or(cfg.cv_folds);
    cfg.cv_repeats = a.repeats.or(cfg.cv_repeats);
    cfg.forest_n_trees = a.forest_trees.or(cfg.forest_n_trees);
    if let Some(g) = &a.grid {
        let text = fs::read_to_string(g).map_err(|e| Error::io(g, e))?;
        cfg.depth_grid = Some(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", g.display())))?);
    }
    let seed = cfg.seed.unwrap_or(0);
    let grid = cfg.depth_grid.clone().unwrap_or_else(|| DEFAULT_DEPTH_GRID.to_vec());

    let data = load_csv(&a.data.data, &a.data.target)?;
    let (_, z) = fit_threshold_stage(data.x.view(), &data.y, cfg.tau0.unwrap_or(DEFAULT_TAU0), &cfg.forest())?;
    let sel = select_depths(data.x.view(), &z, &grid, &cfg.gbex_hyper(), &cv_settings(&cfg, seed))?;

    let mut header = vec!["B".to_string()];
    header.extend(sel.curves.iter().map(|c| format!("dev_{}_{}", c.depth_sigma, c.depth_gamma)));
    let b_max = sel.curves[0].dev.len();
    let rows: Vec<Vec<f64>> = (0..b_max)
        .map(|b| std::iter::once(b as f64).chain(sel.curves.iter().map(|c| c.dev[b])).collect())
        .collect();
    write_csv(&a.out, &header, &rows)?;
    for c in &sel.curves {
        println!("depths ({}, {}): B = {}, deviance = {}", c.depth_sigma, c.depth_gamma, c.selected_b, c.dev[c.selected_b]);
    }
    println!("selected depths: ({}, {})", sel.depth_sigma, sel.depth_gamma);
    println!("selected B: {}", sel.n_trees);
    Ok(())
}

/// Exceedances of the given responses over the model threshold. On the
/// training sample the out-of-bag threshold is used, as during fitting.
fn exceedances_for(m: &ExtremeModel, x: ndarray::ArrayView2<f64>, y: &[f64]) -> Result<Vec<Exceedance>> {
    let f = m.forest();
    if f.covariates() == x && f.responses() == y {
        return crate::pipeline::compute_exceedances(f, y, m.tau0());
    }
    x.axis_iter(Axis(0))
        .zip(y)
        .map(|(r, &yi)| Ok(Exceedance::over(yi, m.threshold(r)?)))
        .collect()
}

fn importance(a: ImportanceArgs) -> Result<()> {
    let mf = load_model(&a.model)?;
    let names = &mf.metadata.feature_names;
    let target = a.target.unwrap_or_else(|| mf.metadata.target.clone());
    let x = load_features(&a.data, names)?;
    let y = load_features(&a.data, std::slice::from_ref(&target))?.column(0).to_vec();
    let z = exceedances_for(&mf.model, x.view(), &y)?;
    let rep = importance_report(mf.model.gbex(), x.view(), &z, a.seed)?;
    let header = ["feature", "permutation", "permutation_relative", "relative_sigma", "relative_gamma"].map(String::from);
    let rows: Vec<Vec<f64>> = (0..names.len())
        .map(|j| {
            vec![
                j as f64,
                rep.permutation.raw[j],
                rep.permutation.normalized[j],
                rep.relative.sigma[j],
                rep.relative.gamma[j],
            ]
        })
        .collect();
    write_csv(&a.out, &header, &rows)?;
    for (j, name) in names.iter().enumerate() {
        println!("{j}\t{name}\t{}", rep.permutation.normalized[j]);
    }
    Ok(())
}

fn feature_index(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Config(format!("model has no feature '{name}'")))
}

fn pdp(a: PdpArgs) -> Result<()> {
    let mf = load_model(&a.model)?;
    let names = &mf.metadata.feature_names;
    let x = load_features(&a.data, names)?;
    let output = match (a.output, a.tau) {
        (PdpKind::Sigma, _) => PdpOutput::Sigma,
        (PdpKind::Gamma, _) => PdpOutput::Gamma,
        (PdpKind::Quantile, Some(t)) => PdpOutput::Quantile(t),
        (PdpKind::Quantile, None) => return Err(Error::Config("--output quantile needs --tau".into())),
    };
    let mut features = vec![feature_index(names, &a.feature)?];
    if let Some(f2) = &a.feature2 {
        features.push(feature_index(names, f2)?);
    }
    let grids: Vec<Vec<f64>> = features.iter().map(|&j| feature_grid(x.view(), j, a.grid)).collect();
    let pd = partial_dependence(&mf.model, x.view(), &features, &grids, output)?;
    let mut header: Vec<String> = features.iter().map(|&j| names[j].clone()).collect();
    header.push(output.label());
    let rows: Vec<Vec<f64>> = pd
        .points
        .iter()
        .zip(&pd.values)
        .map(|(p, &v)| p.iter().copied().chain(std::iter::once(v)).collect())
        .collect();
    write_csv(&a.out, &header, &rows)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let model = SimModel::from_id(a.model_id)?;
    let mut cfg = ComparisonConfig::new(model);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.replications = a.replications;
    cfg.taus = a.taus;
    cfg.tau0 = a.tau0;
    cfg.n_points = a.n_points;
    cfg.seed = a.seed;
    cfg.forest.n_trees = a.forest_trees.unwrap_or(cfg.forest.n_trees);
    let cv = match a.n_trees {
        Some(_) => None,
        None => Some(CvSettings {
            folds: a.folds,
            repeats: a.repeats,
            b_max: a.b_max,
            seed: 0,
        }),
    };
    let (mut gbex, constant, direct) = standard_methods(model, cv);
    if let Some(b) = a.n_trees {
        gbex.hyper.n_trees = b;
    }
    let methods: [&dyn Method; 3] = [&gbex, &constant, &direct];
    let res = run_comparison(&cfg, &methods)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let labels: Vec<String> = methods.iter().map(|m| m.label()).collect();
    let header = |first: &[&str]| -> Vec<String> {
        first.iter().map(|s| s.to_string()).chain(labels.iter().cloned()).collect()
    };
    let mut ise_rows = Vec::new();
    let mut mise_rows = Vec::new();
    let mut fail_rows = Vec::new();
    for &tau in &cfg.taus {
        let per_method: Vec<_> = labels.iter().map(|l| res.get(l, tau).expect("result for every method")).collect();
        for rep in 0..cfg.replications {
            let vals: Option<Vec<f64>> = per_method.iter().map(|r| r.ise_of(rep)).collect();
            if let Some(v) = vals {
                ise_rows.push([rep as f64, tau].into_iter().chain(v).collect());
            }
        }
        mise_rows.push(std::iter::once(tau).chain(per_method.iter().map(|r| r.mise)).collect());
        fail_rows.push(std::iter::once(tau).chain(per_method.iter().map(|r| r.failures as f64)).collect());
    }
    write_csv(a.out.join("ise.csv"), &header(&["replication", "tau"]), &ise_rows)?;
    write_mise(&a.out.join("mise.csv"), &header(&["tau"]), &mise_rows)?;
    write_csv(a.out.join("failures.csv"), &header(&["tau"]), &fail_rows)?;
    for row in &mise_rows {
        let cells: Vec<String> = labels.iter().zip(&row[1..]).map(|(l, v)| format!("{l}={v}")).collect();
        println!("tau {}: MISE {}", row[0], cells.join(" "));
    }
    Ok(())
}

/// MISE is undefined for a method that failed in every replication; such
/// rows are reported on stderr and left out so the table stays numeric.
fn write_mise(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let (ok, bad): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.iter().cloned().partition(|r| r.iter().all(|v| v.is_finite()));
    for r in bad {
        eprintln!("warning: no successful replication for some method at tau {}", r[0]);
    }
    write_csv(path, header, &ok)
}
