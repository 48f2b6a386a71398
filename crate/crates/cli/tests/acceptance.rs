//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dnnroute_core::cost::{CostKind, CostWeights};
use dnnroute_core::flow::{compute_traffic, validate};
use dnnroute_core::forwarding::SweepParams;
use dnnroute_core::harness::{
    run_compare, sweep_eta, sweep_rate, Experiment, ExperimentSpec, ResultsTable,
};
use dnnroute_core::marginals::{finite_diff_check, FiniteDiffCheck, LoadMarginals};
use dnnroute_core::paths::{dijkstra, Direction};
use dnnroute_core::placement::{brute_force_placement, gamma_distances};
use dnnroute_core::problem::Problem;
use dnnroute_core::solvers::{alt_solve, alt_solve_observed, Method, Phase, SolveParams};
use dnnroute_core::topology::{
    Application, CostSettings, Link, NetworkGraph, Scenario, ScenarioConfig, ScenarioKind,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario_names() -> Vec<String> {
    ScenarioKind::ALL
        .iter()
        .map(|k| k.name().to_string())
        .collect()
}

fn j(table: &ResultsTable, scenario: &str, method: Method, param: Option<f64>) -> f64 {
    table
        .value(scenario, method, param)
        .unwrap_or(f64::INFINITY)
}

/// Method ordering on every preset scenario.
fn criterion_1(out: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut alt_strict = true;
    let mut unaware_worst = 0;
    let mut slowest = 0.0_f64;
    for name in scenario_names() {
        let mut spec =
            ExperimentSpec::new(Experiment::Compare, vec![name.clone()], out.join(&name));
        spec.methods = Method::ALL.to_vec();
        let start = Instant::now();
        let table = match run_compare(&spec) {
            Ok(t) => t,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let alt = j(&table, &name, Method::Alt, None);
        let others: Vec<f64> = [Method::OneShot, Method::CongUnaware, Method::CoLocated]
            .iter()
            .map(|&m| j(&table, &name, m, None))
            .collect();
        if !others.iter().all(|&o| alt < o) {
            alt_strict = false;
            notes.push(format!(
                "{name}: ALT {alt:.4e} not strictly lowest {others:?}"
            ));
        }
        let unaware = j(&table, &name, Method::CongUnaware, None);
        if Method::ALL
            .iter()
            .all(|&m| j(&table, &name, m, None) <= unaware)
        {
            unaware_worst += 1;
        }
    }
    let pass = alt_strict && unaware_worst >= 3 && slowest < 60.0;
    let detail = format!(
        "ALT strictly lowest on all scenarios: {alt_strict}; CongUnaware highest on {unaware_worst}/4; slowest scenario {slowest:.1}s{}",
        if notes.is_empty() { String::new() } else { format!(" ({})", notes.join("; ")) }
    );
    outcome(pass, detail)
}

/// Rate sweep on the IoT scenario.
fn criterion_2(out: &Path) -> Outcome {
    let spec = ExperimentSpec::new(
        Experiment::SweepRate,
        vec!["iot".into()],
        out.join("sweep_rate"),
    );
    let table = match sweep_rate(&spec) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let baselines = [Method::OneShot, Method::CongUnaware, Method::CoLocated];
    let mut dominated = true;
    for &factor in &spec.grid {
        let alt = j(&table, "iot", Method::Alt, Some(factor));
        for &m in &baselines {
            if alt > j(&table, "iot", m, Some(factor)) {
                dominated = false;
            }
        }
    }
    let (lo, hi) = (spec.grid[0], *spec.grid.last().unwrap());
    let mut widening = 0;
    let mut ratios = Vec::new();
    for &m in &baselines {
        let r_lo = j(&table, "iot", m, Some(lo)) / j(&table, "iot", Method::Alt, Some(lo));
        let r_hi = j(&table, "iot", m, Some(hi)) / j(&table, "iot", Method::Alt, Some(hi));
        if r_hi > r_lo {
            widening += 1;
        }
        ratios.push(format!("{}: {r_lo:.4} -> {r_hi:.4}", m.name()));
    }
    outcome(
        dominated && widening >= 2,
        format!(
            "ALT <= baselines at every factor: {dominated}; gap widens for {widening}/3 ({})",
            ratios.join(", ")
        ),
    )
}

/// Trade-off sweep on the IoT scenario.
fn criterion_3(out: &Path) -> Outcome {
    let spec = ExperimentSpec::new(
        Experiment::SweepEta,
        vec!["iot".into()],
        out.join("sweep_eta"),
    );
    let table = match sweep_eta(&spec) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let get = |eta: f64| {
        table
            .rows
            .iter()
            .find(|r| r.method == Method::Alt && r.param == Some(eta))
            .and_then(|r| r.objective)
    };
    let (lo, hi) = (spec.grid[0], *spec.grid.last().unwrap());
    let (Some(a), Some(b)) = (get(lo), get(hi)) else {
        return outcome(false, "missing sweep rows");
    };
    let comm_ok = b.comm <= a.comm * 1.05;
    let comp_ok = a.comp <= b.comp * 1.05;
    let opposite = (b.comm - a.comm) * (b.comp - a.comp) < 0.0;
    outcome(
        comm_ok && comp_ok && opposite,
        format!(
            "J_comm {:.4e} -> {:.4e}, J_comp {:.4e} -> {:.4e} from eta={lo} to eta={hi}",
            a.comm, b.comm, a.comp, b.comp
        ),
    )
}

/// Small random instance: a bidirectional ring plus random chords.
fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize, max_apps: usize) -> Problem {
    let n = rng.gen_range(3..=max_nodes);
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push((i, (i + 1) % n, rng.gen_range(6.0..14.0)));
    }
    for a in 0..n {
        for b in (a + 2)..n {
            if (a, b) != (0, n - 1) && rng.gen_bool(0.3) {
                edges.push((a, b, rng.gen_range(6.0..14.0)));
            }
        }
    }
    let compute = (0..n).map(|_| rng.gen_range(4.0..12.0)).collect();
    let graph = NetworkGraph::from_undirected(compute, &edges).expect("valid random graph");
    let apps = (0..rng.gen_range(1..=max_apps))
        .map(|id| {
            let s = rng.gen_range(0..n);
            let d = rng.gen_range(0..n);
            Application::new(
                id,
                s,
                d,
                rng.gen_range(0.5..3.0),
                [2.0, 0.8, 0.3],
                [0.5, 1.0],
            )
        })
        .collect();
    Problem::new(graph, apps, CostSettings::default(), CostWeights::default())
        .expect("valid random problem")
}

/// ALT against exhaustive placement search on tiny instances.
fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut gaps = Vec::new();
    for _ in 0..20 {
        let problem = random_instance(&mut rng, 6, 2);
        let alt = match alt_solve(&problem, &SolveParams::default()) {
            Ok(r) => r.objective.weighted,
            Err(e) => return outcome(false, format!("ALT failed: {e}")),
        };
        let oracle = match brute_force_placement(&problem, 400, &SweepParams::default()) {
            Ok(r) => r.objective.weighted,
            Err(e) => return outcome(false, format!("oracle failed: {e}")),
        };
        gaps.push((alt - oracle) / oracle);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let worst = gaps.iter().copied().fold(f64::MIN, f64::max);
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[9] + sorted[10]) / 2.0;
    outcome(
        worst <= 0.05 && median <= 0.01 && elapsed < 120.0,
        format!(
            "{} instances, worst gap {:.3}%, median gap {:.3}%, {elapsed:.1}s",
            gaps.len(),
            worst * 100.0,
            median * 100.0
        ),
    )
}

/// Closed-form cost-to-go against finite differences.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = [0.0_f64; 2];
    let mut probes = [0usize; 2];
    for (slot, kind) in [CostKind::Mm1, CostKind::Linear].into_iter().enumerate() {
        for name in scenario_names() {
            let mut config = ScenarioConfig::preset(name.parse().unwrap());
            config.cost.kind = kind;
            let scenario = Scenario::build(config).expect("preset builds");
            let problem = Problem::from_scenario(&scenario, CostWeights::default()).unwrap();
            let report = alt_solve(
                &problem,
                &SolveParams {
                    max_iters: 3,
                    ..Default::default()
                },
            )
            .unwrap();
            while probes[slot]
                < 15 * (ScenarioKind::ALL
                    .iter()
                    .position(|k| k.name() == name)
                    .unwrap()
                    + 1)
            {
                let node = rng.gen_range(0..problem.node_count());
                let app = rng.gen_range(0..problem.app_count());
                match finite_diff_check(&problem, &report.placement, &report.policy, node, app) {
                    Ok(FiniteDiffCheck::Checked { rel_error, .. }) => {
                        worst[slot] = worst[slot].max(rel_error);
                        probes[slot] += 1;
                    }
                    Ok(FiniteDiffCheck::Skipped { .. }) => {}
                    Err(e) => return outcome(false, e.to_string()),
                }
            }
        }
    }
    outcome(
        worst[0] < 1e-3 && worst[1] < 1e-9 && probes.iter().all(|&p| p >= 50),
        format!(
            "mm1: {} probes, max rel error {:.2e}; linear: {} probes, max rel error {:.2e}",
            probes[0], worst[0], probes[1], worst[1]
        ),
    )
}

/// Structural invariants and a non-increasing objective, checked after every
/// phase of the alternating method.
fn criterion_6() -> Outcome {
    let mut failures = Vec::new();
    let mut checks = 0;
    for name in scenario_names() {
        let scenario = Scenario::build(ScenarioConfig::preset(name.parse().unwrap())).unwrap();
        let problem = Problem::from_scenario(&scenario, CostWeights::default()).unwrap();
        let mut last = f64::INFINITY;
        let result = alt_solve_observed(&problem, &SolveParams::default(), &mut |event| {
            checks += 1;
            let tag = format!("{name} iter {} {:?}", event.iteration, event.phase);
            let violations = validate(&problem.graph, &problem.apps, event.placement, event.policy);
            if !violations.is_empty() {
                failures.push(format!("{tag}: {:?}", violations[0]));
            }
            for a in 0..problem.app_count() {
                for k in 0..3 {
                    if let Err(cycle) = event.policy.stage(a, k).topological_order() {
                        failures.push(format!("{tag}: app {a} stage {k} cycle {cycle:?}"));
                    }
                }
            }
            match compute_traffic(&problem, event.placement, event.policy) {
                Ok(traffic) => {
                    for (a, app) in problem.apps.iter().enumerate() {
                        let h1 = event.placement.hosts(a).h1;
                        if (traffic.t[a][0][h1] - app.rate).abs() > 1e-9 {
                            failures.push(format!(
                                "{tag}: app {a} absorbs {} of {}",
                                traffic.t[a][0][h1], app.rate
                            ));
                        }
                    }
                }
                Err(e) => failures.push(format!("{tag}: {e}")),
            }
            if event.phase == Phase::AfterReassign || event.phase == Phase::AfterSweep {
                if event.objective.weighted > last + 1e-9 {
                    failures.push(format!(
                        "{tag}: objective rose from {last} to {}",
                        event.objective.weighted
                    ));
                }
                last = event.objective.weighted;
            }
        });
        match result {
            Ok(report) => {
                if report.trace.windows(2).any(|w| w[1] > w[0] + 1e-9) {
                    failures.push(format!("{name}: trace not monotone"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checks} phase snapshots checked")
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

fn bellman_ford(
    graph: &NetworkGraph,
    weights: &[f64],
    anchor: usize,
    direction: Direction,
) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    dist[anchor] = 0.0;
    for _ in 0..graph.node_count() {
        let mut changed = false;
        for (l, link) in graph.links().iter().enumerate() {
            let (from, to) = match direction {
                Direction::From => (link.tail, link.head),
                Direction::To => (link.head, link.tail),
            };
            let candidate = dist[from] + weights[l];
            if candidate < dist[to] {
                dist[to] = candidate;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    dist
}

/// Shortest marginal distances against Bellman-Ford, and stage scaling.
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut worst_scaling = 0.0_f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=15);
        let mut links = Vec::new();
        for tail in 0..n {
            for head in 0..n {
                if tail != head && rng.gen_bool(0.25) {
                    links.push(Link {
                        tail,
                        head,
                        mu: 1.0,
                    });
                }
            }
        }
        let graph = NetworkGraph::new(vec![1.0; n], links).unwrap();
        let sizes = [
            rng.gen_range(0.5..3.0),
            rng.gen_range(0.1..1.0),
            rng.gen_range(0.05..0.5),
        ];
        let app = Application::new(0, 0, 0, 1.0, sizes, [0.5, 1.0]);
        let link_marginal: Vec<f64> = (0..graph.link_count())
            .map(|_| rng.gen_range(0.0..2.0))
            .collect();
        let loads = LoadMarginals {
            link: link_marginal.clone(),
            node: vec![0.0; n],
        };
        let problem = Problem::new(
            graph.clone(),
            vec![app],
            CostSettings::default(),
            CostWeights::default(),
        )
        .unwrap();
        let anchor = rng.gen_range(0..n);
        for direction in [Direction::From, Direction::To] {
            let base = dijkstra(&graph, &link_marginal, anchor, direction).dist;
            for (k, size) in sizes.iter().enumerate() {
                let gamma = gamma_distances(&problem, &loads, 0, k, anchor, direction);
                let weights: Vec<f64> = link_marginal.iter().map(|m| size * m).collect();
                if gamma != bellman_ford(&graph, &weights, anchor, direction) {
                    mismatches += 1;
                }
                for (g, b) in gamma.iter().zip(&base) {
                    if g.is_finite() && *b > 0.0 {
                        worst_scaling = worst_scaling.max(((g - size * b) / g).abs());
                    } else if g.is_finite() != b.is_finite() {
                        worst_scaling = f64::INFINITY;
                    }
                }
            }
        }
    }
    outcome(
        mismatches == 0 && worst_scaling <= 1e-12,
        format!("100 graphs: {mismatches} Bellman-Ford mismatches, worst scaling error {worst_scaling:.2e}"),
    )
}

/// Two CLI runs with the same seed write identical CSV files.
fn criterion_8(out: &Path) -> Outcome {
    let exe = env!("CARGO_BIN_EXE_dnnroute");
    let mut files = Vec::new();
    for run in ["first", "second"] {
        let dir = out.join(run);
        let status = Command::new(exe)
            .args(["compare", "--scenario", "all", "--seed", "7", "--out"])
            .arg(&dir)
            .output();
        match status {
            Ok(o) if o.status.success() => {}
            Ok(o) => {
                return outcome(
                    false,
                    format!("run failed: {}", String::from_utf8_lossy(&o.stderr)),
                )
            }
            Err(e) => return outcome(false, e.to_string()),
        }
        match std::fs::read(dir.join("results.csv")) {
            Ok(bytes) => files.push(bytes),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let same = files[0] == files[1];
    outcome(
        same,
        format!("results.csv {} bytes, identical: {same}", files[0].len()),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "method ordering on all scenarios",
            Box::new(|| criterion_1(&tmp.path().join("c1"))),
        ),
        (
            "rate sweep dominance and widening gap",
            Box::new(|| criterion_2(tmp.path())),
        ),
        (
            "trade-off sweep direction",
            Box::new(|| criterion_3(tmp.path())),
        ),
        ("oracle optimality gap", Box::new(criterion_4)),
        ("gradient correctness", Box::new(criterion_5)),
        ("invariants after every phase", Box::new(criterion_6)),
        ("shortest-path oracle", Box::new(criterion_7)),
        (
            "CLI determinism",
            Box::new(|| criterion_8(&tmp.path().join("c8"))),
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked"));
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict}: {name}: {}", i + 1, result.detail);
        if !result.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
