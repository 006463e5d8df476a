use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use moment_knockoffs::harness::{self, timegrid, trace, ExperimentConfig, GridCell, InputSource};
use moment_knockoffs::marginals::MarginalKind;
use moment_knockoffs::moments::build_constraints;
use moment_knockoffs::optimizer::{Method, OptimizerConfig, PenaltyWeights};
use moment_knockoffs::{DataMatrix, KnockoffError, Result};

#[derive(Parser)]
#[command(name = "knockoffs", version, about = "Model-X knockoffs by co-moment matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a shuffled synthetic data set.
    Synth {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        common: Common,
        /// Shuffle strength; defaults to 3/n.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Fit marginals and the Gaussian copula.
    Fit {
        /// Feature CSV; defaults to OUT/data.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "t")]
        marginal: Marginal,
        #[command(flatten)]
        common: Common,
    },
    /// Draw the second-order Gaussian knockoff used as the starting point.
    Init {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        copula: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Optimize an initial guess.
    Optimize {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        copula: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Every stage end to end, on synthetic data or a CSV file.
    Run {
        /// Number of synthetic features.
        #[arg(long, requires = "n", conflicts_with = "data")]
        p: Option<usize>,
        /// Number of synthetic observations.
        #[arg(long, requires = "p")]
        n: Option<usize>,
        /// Shuffle strength; defaults to 3/n.
        #[arg(long)]
        beta: Option<f64>,
        /// Feature CSV with a header row, instead of synthetic data.
        #[arg(long, required_unless_present = "p")]
        data: Option<PathBuf>,
        #[arg(long, default_value = "t")]
        marginal: Marginal,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opt: OptArgs,
    },
    /// Time the optimization over a grid of (p, n, iterations) cells.
    Timegrid {
        /// Comma-separated `PxN` shapes; an empty list gives an empty table.
        #[arg(long, default_value = "4x100,8x100,4x1000,8x1000")]
        shapes: String,
        /// Comma-separated iteration counts.
        #[arg(long, default_value = "3,10,20")]
        grid_iters: String,
        #[arg(long, default_value = "t")]
        marginal: Marginal,
        #[command(flatten)]
        common: Common,
    },
    /// Draw SVG charts from a detail trace.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Detail trace JSON; defaults to OUT/detail_trace.json.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Seeds data generation and the initial guess.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory; stage inputs default to files inside it.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct OptArgs {
    /// Maximum number of iterations.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Step multiplier.
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Stop once an iteration improves the objective by less than this.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Penalty weights corr,coskew,cokurt,ks.
    #[arg(long, default_value = "100,10,1,10")]
    weights: String,
    /// Weight on the feature-knockoff correlation objective.
    #[arg(long, default_value_t = 1.0)]
    objective_weight: f64,
    #[arg(long, value_enum, default_value = "gauss-newton")]
    method: MethodArg,
    /// Record every constraint value at every iteration (needed for plots).
    #[arg(long)]
    detail_trace: bool,
    /// Re-center and re-scale knockoff columns after every step.
    #[arg(long)]
    restandardize: bool,
    /// Skip the SVG charts even with a detail trace.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Marginal {
    Normal,
    T,
    Empirical,
}

impl From<Marginal> for MarginalKind {
    fn from(m: Marginal) -> Self {
        match m {
            Marginal::Normal => MarginalKind::Normal,
            Marginal::T => MarginalKind::StudentT,
            Marginal::Empirical => MarginalKind::Empirical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    GaussNewton,
    GradientDescent,
}

impl OptArgs {
    fn config(&self, seed: u64) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig {
            max_iterations: self.iters,
            learning_rate: self.lr,
            tolerance: self.tol,
            penalty_weights: PenaltyWeights::parse(&self.weights)?,
            objective_weight: self.objective_weight,
            seed,
            restandardize: self.restandardize,
            detail_trace: self.detail_trace,
            method: match self.method {
                MethodArg::GaussNewton => Method::GaussNewton,
                MethodArg::GradientDescent => Method::GradientDescent,
            },
            ..OptimizerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn or_in(path: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(name))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| KnockoffError::Config(format!("bad {what} `{s}`"))))
        .collect()
}

fn parse_grid(shapes: &str, iters: &str) -> Result<Vec<GridCell>> {
    let iterations: Vec<usize> = parse_list(iters, "iteration count")?;
    let mut cells = Vec::new();
    for shape in shapes.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (p, n) =
            shape.split_once('x').ok_or_else(|| KnockoffError::Config(format!("shape `{shape}` is not PxN")))?;
        let p: usize = parse_list(p, "p")?.first().copied().ok_or_else(|| KnockoffError::Config("empty p".into()))?;
        let n: usize = parse_list(n, "n")?.first().copied().ok_or_else(|| KnockoffError::Config("empty n".into()))?;
        cells.extend(iterations.iter().map(|&iterations| GridCell { p, n, iterations }));
    }
    Ok(cells)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { p, n, common, beta } => {
            harness::synth_stage(p, n, common.seed, beta, &common.out)?;
        }
        Command::Fit { data, marginal, common } => {
            let features = DataMatrix::read_csv_path(or_in(&data, &common.out, harness::DATA_CSV))?;
            let kinds = vec![marginal.into(); features.ncols()];
            harness::fit_stage(&features, &kinds, &common.out)?;
        }
        Command::Init { data, copula, common } => {
            let features = DataMatrix::read_csv_path(or_in(&data, &common.out, harness::DATA_CSV))?;
            let model = harness::read_copula(&or_in(&copula, &common.out, harness::COPULA_JSON))?;
            harness::init_stage(&features, &model, common.seed, &common.out)?;
        }
        Command::Optimize { data, copula, init, common, opt } => {
            let cfg = opt.config(common.seed)?;
            let features = DataMatrix::read_csv_path(or_in(&data, &common.out, harness::DATA_CSV))?;
            let model = harness::read_copula(&or_in(&copula, &common.out, harness::COPULA_JSON))?;
            let guess = DataMatrix::read_csv_path(or_in(&init, &common.out, harness::INITIAL_CSV))?;
            let (report, _) = harness::optimize_stage(&features, &model, &guess, &cfg, !opt.no_plots, &common.out)?;
            print_summary(&report);
        }
        Command::Run { p, n, beta, data, marginal, common, opt } => {
            let input = match (p, n, data) {
                (Some(p), Some(n), None) => InputSource::Synthetic { p, n, seed: common.seed, beta },
                (None, None, Some(path)) => InputSource::Csv(path),
                _ => return Err(KnockoffError::Config("give either --p and --n, or --data".into())),
            };
            let cfg = ExperimentConfig {
                input,
                marginal: marginal.into(),
                column_marginals: None,
                optimizer: opt.config(common.seed)?,
                out_dir: common.out,
                plots: !opt.no_plots,
            };
            let outcome = harness::run_experiment(&cfg)?;
            print_summary(&outcome.report);
        }
        Command::Timegrid { shapes, grid_iters, marginal, common } => {
            let cells = parse_grid(&shapes, &grid_iters)?;
            std::fs::create_dir_all(&common.out)?;
            let base = OptimizerConfig { seed: common.seed, ..OptimizerConfig::default() };
            let rows = timegrid::time_grid(&cells, common.seed, marginal.into(), &base);
            let path = common.out.join("timegrid.csv");
            timegrid::write_grid_csv_path(&rows, &path)?;
            for r in &rows {
                match (&r.elapsed, &r.error) {
                    (Some(d), _) => println!(
                        "p={} n={} iterations={}: {} ({} ms)",
                        r.cell.p,
                        r.cell.n,
                        r.cell.iterations,
                        timegrid::format_hms(*d),
                        d.as_millis()
                    ),
                    (None, Some(e)) => {
                        println!("p={} n={} iterations={}: failed: {e}", r.cell.p, r.cell.n, r.cell.iterations)
                    }
                    (None, None) => {}
                }
            }
        }
        Command::Plot { data, trace: trace_path, common } => {
            let features = DataMatrix::read_csv_path(or_in(&data, &common.out, harness::DATA_CSV))?;
            let detail_path = or_in(&trace_path, &common.out, harness::DETAIL_JSON);
            let detail = trace::read_detail_trace(&detail_path).map_err(|e| {
                KnockoffError::Config(format!(
                    "cannot read detail trace {}: {e}; rerun the optimization with --detail-trace",
                    detail_path.display()
                ))
            })?;
            let cs = build_constraints(&features)?;
            for path in harness::emit_plots(&detail, &cs, features.nrows(), &common.out.join(harness::PLOTS_DIR))? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn print_summary(report: &harness::Report) {
    println!("iterations run: {}, best iteration: {}", report.iterations_run, report.best_iteration);
    if let Some(last) = report.final_summary() {
        let r = last.residuals;
        println!("residuals: corr {:.6} coskew {:.6} cokurt {:.6}", r.correlation, r.coskewness, r.cokurtosis);
        for (i, k) in last.knockoffs.iter().enumerate() {
            println!(
                "{}: corr {:+.4}  KS p {:.4}  mean {:+.4}  var {:.4}",
                report.names[i], k.feature_correlation, k.ks_p_value, k.mean, k.variance
            );
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
