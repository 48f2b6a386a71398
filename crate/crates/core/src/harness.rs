//! Experiment driver for solver comparisons and parameter sweeps.
//!
//! Results go to `results.csv` alongside a run log and gnuplot scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::flow::Objective;
use crate::forwarding::SweepParams;
use crate::problem::Problem;
use crate::solvers::{solve, Method, SolveParams};
use crate::topology::{load_scenario, Scenario, ScenarioConfig, ScenarioKind, SolverOverrides};

/// Objectives above this value are reported as saturated.
pub const CENSOR_LIMIT: f64 = 1e9;

pub const DEFAULT_RATE_GRID: [f64; 5] = [0.5, 0.75, 1.0, 1.25, 1.5];
pub const DEFAULT_ETA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const DEFAULT_ETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Compare,
    SweepRate,
    SweepEta,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Compare => "compare",
            Experiment::SweepRate => "sweep_rate",
            Experiment::SweepEta => "sweep_eta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Preset names (`iot`, `mesh`, `sw`, `geant`) or scenario file paths.
    pub scenarios: Vec<String>,
    pub methods: Vec<Method>,
    /// Rate factors or trade-off weights; ignored by `Compare`.
    pub grid: Vec<f64>,
    /// Replaces the scenario's own seed when set.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Command-line solver settings. They take precedence over scenario files.
    pub overrides: SolverOverrides,
    /// Record wall-clock times in `results.csv`. Off by default so repeated
    /// runs produce identical files.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn new(
        experiment: Experiment,
        scenarios: Vec<String>,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        let (methods, grid) = match experiment {
            Experiment::Compare => (Method::ALL.to_vec(), Vec::new()),
            Experiment::SweepRate => (Method::ALL.to_vec(), DEFAULT_RATE_GRID.to_vec()),
            Experiment::SweepEta => (vec![Method::Alt], DEFAULT_ETA_GRID.to_vec()),
        };
        Self {
            experiment,
            scenarios,
            methods,
            grid,
            seed: None,
            out_dir: out_dir.into(),
            overrides: SolverOverrides::default(),
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios selected".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.experiment == Experiment::Compare {
            return Ok(());
        }
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self
            .grid
            .windows(2)
            .any(|w| w[0] >= w[1] || w.iter().any(|x| x.is_nan()))
        {
            return Err(Error::Config(format!(
                "sweep grid must be strictly increasing: {:?}",
                self.grid
            )));
        }
        let in_range = |v: f64| match self.experiment {
            Experiment::SweepRate => v.is_finite() && v > 0.0,
            _ => (0.0..=1.0).contains(&v),
        };
        if let Some(bad) = self.grid.iter().find(|&&v| !in_range(v)) {
            return Err(Error::Config(format!(
                "grid value {bad} is out of range for {}",
                self.experiment.name()
            )));
        }
        Ok(())
    }
}

/// Expands `all` and checks that every scenario name or path resolves.
pub fn expand_scenarios(names: &[String]) -> Vec<String> {
    names
        .iter()
        .flat_map(|n| {
            if n.eq_ignore_ascii_case("all") {
                ScenarioKind::ALL
                    .iter()
                    .map(|k| k.name().to_string())
                    .collect()
            } else {
                vec![n.clone()]
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    /// Objective above [`CENSOR_LIMIT`].
    Censored,
    Failed(String),
}

impl CellStatus {
    pub fn label(&self) -> String {
        match self {
            CellStatus::Ok => "ok".into(),
            CellStatus::Censored => "censored".into(),
            CellStatus::Failed(msg) => format!("error: {msg}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub experiment: Experiment,
    pub scenario: String,
    pub method: Method,
    pub param: Option<f64>,
    pub objective: Option<Objective>,
    /// Reported objective: `J_comm + J_comp` for comparisons and rate sweeps,
    /// the weighted objective for trade-off sweeps.
    pub j: Option<f64>,
    pub normalized: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub status: CellStatus,
    pub wall: Duration,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ResultsTable {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn rows_for<'a>(&'a self, scenario: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.scenario == scenario)
    }

    /// The reported objective of one cell, if it completed.
    pub fn value(&self, scenario: &str, method: Method, param: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.method == method && r.param == param)
            .and_then(|r| r.j)
    }

    pub fn to_csv(&self, timing: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "experiment",
            "scenario",
            "method",
            "param",
            "J",
            "J_comm",
            "J_comp",
            "J_normalized",
            "iters",
            "converged",
            "status",
            "wall_ms",
        ])?;
        let num = |v: Option<f64>| {
            v.filter(|x| x.is_finite())
                .map(|x| x.to_string())
                .unwrap_or_default()
        };
        for r in &self.rows {
            w.write_record([
                r.experiment.name().to_string(),
                r.scenario.clone(),
                r.method.name().to_string(),
                num(r.param),
                num(r.j),
                num(r.objective.map(|o| o.comm)),
                num(r.objective.map(|o| o.comp)),
                num(r.normalized),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.status.label(),
                if timing {
                    r.wall.as_millis().to_string()
                } else {
                    String::new()
                },
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

struct LoadedScenario {
    label: String,
    scenario: Scenario,
}

fn load(spec: &ExperimentSpec, name: &str) -> Result<LoadedScenario> {
    let mut scenario = load_scenario(name)?;
    if let Some(seed) = spec.seed.filter(|&s| s != scenario.config.seed) {
        let config: ScenarioConfig = scenario.config.clone().with_seed(seed);
        scenario = Scenario::build(config)?;
    }
    let label = match name.parse::<ScenarioKind>() {
        Ok(kind) => kind.name().to_string(),
        Err(_) => Path::new(name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.to_string()),
    };
    Ok(LoadedScenario { label, scenario })
}

/// Solver settings for one scenario: command line first, then the scenario
/// file, then built-in defaults.
pub fn resolve_params(cli: &SolverOverrides, file: &SolverOverrides) -> (SolveParams, f64) {
    let defaults = SolveParams::default();
    let params = SolveParams {
        sweep: SweepParams {
            alpha0: cli.alpha0.or(file.alpha0).unwrap_or(defaults.sweep.alpha0),
            t_phi: cli.t_phi.or(file.t_phi).unwrap_or(defaults.sweep.t_phi),
            ..defaults.sweep
        },
        max_iters: cli
            .max_iters
            .or(file.max_iters)
            .unwrap_or(defaults.max_iters),
        tol: cli.tol.or(file.tol).unwrap_or(defaults.tol),
    };
    (params, cli.eta.or(file.eta).unwrap_or(DEFAULT_ETA))
}

struct Cell {
    scenario: usize,
    param: Option<f64>,
    method: Method,
}

fn run_cell(spec: &ExperimentSpec, loaded: &LoadedScenario, cell: &Cell) -> ResultRow {
    let (params, base_eta) = resolve_params(&spec.overrides, &loaded.scenario.config.solver);
    let start = Instant::now();
    let outcome = (|| {
        params.validate()?;
        let eta = match spec.experiment {
            Experiment::SweepEta => cell.param.unwrap_or(base_eta),
            _ => base_eta,
        };
        let mut problem = Problem::from_scenario(&loaded.scenario, CostWeights::new(eta)?)?;
        if spec.experiment == Experiment::SweepRate {
            problem = problem.with_rate_scale(cell.param.unwrap_or(1.0));
        }
        solve(&problem, cell.method, &params)
    })();
    let wall = start.elapsed();
    let mut row = ResultRow {
        experiment: spec.experiment,
        scenario: loaded.label.clone(),
        method: cell.method,
        param: cell.param,
        objective: None,
        j: None,
        normalized: None,
        iterations: 0,
        converged: false,
        status: CellStatus::Ok,
        wall,
        trace: Vec::new(),
    };
    match outcome {
        Ok(report) => {
            let j = match spec.experiment {
                Experiment::SweepEta => report.objective.weighted,
                _ => report.objective.total(),
            };
            row.objective = Some(report.objective);
            row.j = Some(j);
            row.iterations = report.iterations;
            row.converged = report.converged;
            row.trace = report.trace;
            if !(j.is_finite() && j <= CENSOR_LIMIT) {
                row.status = CellStatus::Censored;
            }
        }
        Err(e) => {
            log::warn!("{} / {} / {:?}: {e}", loaded.label, cell.method, cell.param);
            row.status = CellStatus::Failed(e.to_string());
        }
    }
    row
}

/// Divides each completed cell by the largest completed value among cells
/// sharing its scenario and grid point.
fn normalize(rows: &mut [ResultRow]) {
    let group_max = |rows: &[ResultRow], scenario: &str, param: Option<f64>| {
        rows.iter()
            .filter(|r| r.scenario == scenario && r.param == param && r.status == CellStatus::Ok)
            .filter_map(|r| r.j)
            .fold(0.0_f64, f64::max)
    };
    let maxima: Vec<f64> = rows
        .iter()
        .map(|r| group_max(rows, &r.scenario, r.param))
        .collect();
    for (row, max) in rows.iter_mut().zip(maxima) {
        if row.status == CellStatus::Ok && max > 0.0 {
            row.normalized = row.j.map(|j| j / max);
        }
    }
}

/// Runs every (scenario, grid point, method) cell. Cells run in parallel;
/// rows come back in scenario, grid, method order. A failing cell is recorded
/// and does not stop the experiment.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultsTable> {
    spec.validate()?;
    let loaded = spec
        .scenarios
        .iter()
        .map(|n| load(spec, n))
        .collect::<Result<Vec<_>>>()?;
    let params: Vec<Option<f64>> = match spec.experiment {
        Experiment::Compare => vec![None],
        _ => spec.grid.iter().copied().map(Some).collect(),
    };
    let cells: Vec<Cell> = (0..loaded.len())
        .flat_map(|s| {
            params.iter().flat_map(move |&param| {
                spec.methods.iter().map(move |&method| Cell {
                    scenario: s,
                    param,
                    method,
                })
            })
        })
        .collect();
    let mut rows: Vec<ResultRow> = cells
        .par_iter()
        .map(|c| run_cell(spec, &loaded[c.scenario], c))
        .collect();
    normalize(&mut rows);
    Ok(ResultsTable {
        experiment: spec.experiment,
        rows,
    })
}

pub fn run_compare(spec: &ExperimentSpec) -> Result<ResultsTable> {
    debug_assert_eq!(spec.experiment, Experiment::Compare);
    run_experiment(spec)
}

pub fn sweep_rate(spec: &ExperimentSpec) -> Result<ResultsTable> {
    debug_assert_eq!(spec.experiment, Experiment::SweepRate);
    run_experiment(spec)
}

pub fn sweep_eta(spec: &ExperimentSpec) -> Result<ResultsTable> {
    debug_assert_eq!(spec.experiment, Experiment::SweepEta);
    run_experiment(spec)
}

/// Creates the output directory and confirms it accepts files.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn run_log(table: &ResultsTable) -> String {
    let mut log = String::new();
    for r in &table.rows {
        let param = r.param.map(|p| format!(" param={p}")).unwrap_or_default();
        let _ = writeln!(
            log,
            "[{}] {} {}{param}: status={} J={} iters={} converged={} wall_ms={}",
            r.experiment.name(),
            r.scenario,
            r.method,
            r.status.label(),
            r.j.map(|j| j.to_string()).unwrap_or_else(|| "-".into()),
            r.iterations,
            r.converged,
            r.wall.as_millis(),
        );
        if !r.trace.is_empty() {
            let trace: Vec<String> = r.trace.iter().map(|j| format!("{j:.9}")).collect();
            let _ = writeln!(log, "    trace: {}", trace.join(" "));
        }
    }
    log
}

fn quoted_words(items: impl IntoIterator<Item = String>) -> String {
    items.into_iter().collect::<Vec<_>>().join(" ")
}

fn compare_script(table: &ResultsTable, spec: &ExperimentSpec) -> String {
    let mut scenarios: Vec<String> = Vec::new();
    for r in &table.rows {
        if !scenarios.contains(&r.scenario) {
            scenarios.push(r.scenario.clone());
        }
    }
    let methods = quoted_words(spec.methods.iter().map(|m| m.name().to_string()));
    let xtics: Vec<String> = scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| format!("\"{s}\" {}", i + 1))
        .collect();
    format!(
        r#"# Normalized objective per scenario, one bar per method.
set datafile separator ','
set terminal pngcairo size 900,500
set output 'compare.png'
methods = "{methods}"
scenarios = "{scen}"
nm = words(methods)
idx(s) = sum [k=1:words(scenarios)] (word(scenarios, k) eq s ? k : 0)
set style fill solid 0.8 border -1
set boxwidth 0.8 / nm
set yrange [0:1.05]
set ylabel 'normalized J'
set xtics ({xtics})
set key outside right
plot for [m=1:nm] 'results.csv' skip 1 \
    using (idx(strcol(2)) + (m - (nm + 1) / 2.0) * 0.8 / nm):(strcol(3) eq word(methods, m) ? column(8) : 1/0) \
    with boxes title word(methods, m)
"#,
        scen = quoted_words(scenarios.iter().cloned()),
        xtics = xtics.join(", "),
    )
}

fn sweep_script(spec: &ExperimentSpec) -> String {
    let methods = quoted_words(spec.methods.iter().map(|m| m.name().to_string()));
    let nm = spec.methods.len();
    match spec.experiment {
        Experiment::SweepEta => format!(
            r#"# Weighted objective and its two components against the trade-off weight.
set datafile separator ','
set terminal pngcairo size 900,500
set output 'sweep_eta.png'
set xlabel 'eta'
set ylabel 'cost'
set key outside right
methods = "{methods}"
nm = {nm}
plot for [m=1:nm] 'results.csv' skip 1 every nm::(m-1) using 4:5 with linespoints title word(methods, m).' J', \
     for [m=1:nm] 'results.csv' skip 1 every nm::(m-1) using 4:6 with linespoints title word(methods, m).' J_comm', \
     for [m=1:nm] 'results.csv' skip 1 every nm::(m-1) using 4:7 with linespoints title word(methods, m).' J_comp'
"#
        ),
        _ => format!(
            r#"# Objective against the input-rate scaling factor, one line per method.
set datafile separator ','
set terminal pngcairo size 900,500
set output 'sweep_rate.png'
set xlabel 'rate factor'
set ylabel 'J'
set logscale y
set key outside right
methods = "{methods}"
nm = {nm}
plot for [m=1:nm] 'results.csv' skip 1 every nm::(m-1) using 4:5 with linespoints title word(methods, m)
"#
        ),
    }
}

/// Writes `results.csv`, `run.log` and a gnuplot script for the experiment.
pub fn emit_outputs(table: &ResultsTable, spec: &ExperimentSpec) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::Config("no results to write".into()));
    }
    ensure_writable(&spec.out_dir)?;
    let csv_path = spec.out_dir.join("results.csv");
    fs::write(&csv_path, table.to_csv(spec.timing)?)?;
    let log_path = spec.out_dir.join("run.log");
    fs::write(&log_path, run_log(table))?;
    let (script_name, script) = match spec.experiment {
        Experiment::Compare => ("plot_compare.gp", compare_script(table, spec)),
        Experiment::SweepRate => ("plot_sweep_rate.gp", sweep_script(spec)),
        Experiment::SweepEta => ("plot_sweep_eta.gp", sweep_script(spec)),
    };
    let script_path = spec.out_dir.join(script_name);
    fs::write(&script_path, script)?;
    Ok(vec![csv_path, log_path, script_path])
}
