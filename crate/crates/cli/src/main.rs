use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dnnroute_core::cost::CostWeights;
use dnnroute_core::flow::compute_traffic;
use dnnroute_core::harness::{
    emit_outputs, ensure_writable, expand_scenarios, resolve_params, run_compare, sweep_eta,
    sweep_rate, CellStatus, Experiment, ExperimentSpec, ResultsTable,
};
use dnnroute_core::marginals::MarginalState;
use dnnroute_core::placement::score_partitions;
use dnnroute_core::problem::Problem;
use dnnroute_core::solvers::{solve, Method};
use dnnroute_core::topology::{load_scenario, Scenario, SolverOverrides};

#[derive(Parser)]
#[command(
    name = "dnnroute",
    version,
    about = "Congestion-aware DNN partition placement and traffic routing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// Outer iterations of the alternating solver.
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    /// Relative objective change that stops the outer loop.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Forwarding step size.
    #[arg(long, global = true)]
    alpha0: Option<f64>,
    /// Forwarding rounds per outer iteration.
    #[arg(long, global = true)]
    t_phi: Option<usize>,
    /// Trade-off weight on communication cost (compare, sweep-rate, solve).
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Scenario seed; defaults to the scenario's own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated methods: alt, oneshot, unaware, coloc.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Record wall-clock milliseconds in results.csv.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method on one or more scenarios.
    Compare {
        /// Scenario name (iot, mesh, sw, geant), `all`, or a TOML file.
        #[arg(long, default_value = "all", value_delimiter = ',')]
        scenario: Vec<String>,
    },
    /// Scale every input rate over a grid of factors.
    SweepRate {
        #[arg(long, default_value = "iot")]
        scenario: String,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Re-solve over a grid of communication weights.
    SweepEta {
        #[arg(long, default_value = "iot")]
        scenario: String,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Solve one scenario with one method and dump its internal state.
    Solve {
        #[arg(long, default_value = "iot")]
        scenario: String,
        #[arg(long, default_value = "alt")]
        method: Method,
    },
}

fn overrides(g: &GlobalOpts) -> SolverOverrides {
    SolverOverrides {
        eta: g.eta,
        alpha0: g.alpha0,
        t_phi: g.t_phi,
        max_iters: g.max_iters,
        tol: g.tol,
    }
}

fn experiment_spec(
    experiment: Experiment,
    scenarios: Vec<String>,
    grid: Option<Vec<f64>>,
    g: &GlobalOpts,
) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(experiment, expand_scenarios(&scenarios), &g.out);
    if let Some(methods) = &g.methods {
        spec.methods = methods.clone();
    }
    if let Some(grid) = grid {
        spec.grid = grid;
    }
    spec.seed = g.seed;
    spec.overrides = overrides(g);
    spec.timing = g.timing;
    spec
}

fn print_summary(table: &ResultsTable) {
    for r in &table.rows {
        let param = r.param.map(|p| format!(" @ {p}")).unwrap_or_default();
        match (&r.status, r.j) {
            (CellStatus::Ok, Some(j)) => println!(
                "{:<6} {:<12}{param}: J = {j:.6}",
                r.scenario,
                r.method.name()
            ),
            (status, _) => println!(
                "{:<6} {:<12}{param}: {}",
                r.scenario,
                r.method.name(),
                status.label()
            ),
        }
    }
}

fn run_experiment(spec: ExperimentSpec) -> Result<()> {
    spec.validate()?;
    ensure_writable(&spec.out_dir).with_context(|| {
        format!(
            "output directory {} is not writable",
            spec.out_dir.display()
        )
    })?;
    let table = match spec.experiment {
        Experiment::Compare => run_compare(&spec)?,
        Experiment::SweepRate => sweep_rate(&spec)?,
        Experiment::SweepEta => sweep_eta(&spec)?,
    };
    print_summary(&table);
    for path in emit_outputs(&table, &spec)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn run_solve(scenario_name: &str, method: Method, g: &GlobalOpts) -> Result<()> {
    ensure_writable(&g.out)
        .with_context(|| format!("output directory {} is not writable", g.out.display()))?;
    let mut scenario = load_scenario(scenario_name)?;
    if let Some(seed) = g.seed {
        scenario = Scenario::build(scenario.config.clone().with_seed(seed))?;
    }
    let (params, eta) = resolve_params(&overrides(g), &scenario.config.solver);
    let problem = Problem::from_scenario(&scenario, CostWeights::new(eta)?)?;
    let report = solve(&problem, method, &params)?;
    let traffic = compute_traffic(&problem, &report.placement, &report.policy)?;
    let marginals = MarginalState::compute(&problem, &report.placement, &report.policy, &traffic)?;
    let scores = score_partitions(&problem, &traffic, &report.placement)?;

    let create = |name: &str| -> Result<BufWriter<File>> {
        let path = g.out.join(name);
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    };
    report.write_placement_csv(create("placement.csv")?)?;
    report.write_trace_csv(create("trace.csv")?)?;
    traffic.write_csv(&problem.graph, create("traffic.csv")?)?;
    marginals.write_csv(&problem, create("marginals.csv")?)?;
    scores.write_csv(create("scores.csv")?)?;

    println!(
        "{} on {}: J = {:.6} (comm {:.6}, comp {:.6}), {} iterations, converged = {}",
        method,
        scenario.name(),
        report.objective.weighted,
        report.objective.comm,
        report.objective.comp,
        report.iterations,
        report.converged
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    match cli.command {
        Command::Compare { scenario } => {
            run_experiment(experiment_spec(Experiment::Compare, scenario, None, g))
        }
        Command::SweepRate { scenario, grid } => run_experiment(experiment_spec(
            Experiment::SweepRate,
            vec![scenario],
            grid,
            g,
        )),
        Command::SweepEta { scenario, grid } => {
            if g.eta.is_some() {
                bail!("--eta cannot be combined with sweep-eta; use --grid");
            }
            run_experiment(experiment_spec(
                Experiment::SweepEta,
                vec![scenario],
                grid,
                g,
            ))
        }
        Command::Solve { scenario, method } => run_solve(&scenario, method, g),
    }
}
