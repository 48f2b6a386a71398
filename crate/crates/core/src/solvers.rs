//! End-to-end solvers: the alternating method and three baselines.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{compute_traffic, ForwardingPolicy, Hosts, Objective, Placement, STAGES};
use crate::forwarding::{
    forwarding_sweep, init_forwarding, route_stage_on_tree, run_rounds, SweepParams,
};
use crate::marginals::link_and_node_marginals;
use crate::paths::{dijkstra, Direction};
use crate::placement::{argmin, gamma_distances, reassign_placements};
use crate::problem::Problem;
use crate::topology::{Link, NetworkGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Alt,
    OneShot,
    CongUnaware,
    CoLocated,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Alt,
        Method::OneShot,
        Method::CongUnaware,
        Method::CoLocated,
    ];

    /// Label used in reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::Alt => "ALT",
            Method::OneShot => "OneShot",
            Method::CongUnaware => "CongUnaware",
            Method::CoLocated => "CoLocated",
        }
    }

    /// Short key accepted on the command line.
    pub fn key(self) -> &'static str {
        match self {
            Method::Alt => "alt",
            Method::OneShot => "oneshot",
            Method::CongUnaware => "unaware",
            Method::CoLocated => "coloc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.key() == lower || m.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected alt, oneshot, unaware or coloc)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    pub sweep: SweepParams,
    /// Outer iterations of the alternating method.
    pub max_iters: usize,
    /// Relative objective change below which the outer loop stops.
    pub tol: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            sweep: SweepParams::default(),
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::Config(format!(
                "tol must be non-negative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub method: Method,
    pub placement: Placement,
    pub policy: ForwardingPolicy,
    pub objective: Objective,
    /// Weighted objective after each outer iteration (after each forwarding
    /// round for the co-located baseline).
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SolveReport {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective"])?;
        for (m, j) in self.trace.iter().enumerate() {
            w.write_record([(m + 1).to_string(), j.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_placement_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["app", "h1", "h2"])?;
        for (a, h) in self.placement.iter().enumerate() {
            w.write_record([a.to_string(), h.h1.to_string(), h.h2.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AfterSweep,
    AfterReassign,
}

/// Snapshot handed to an observer during the alternating method.
#[derive(Debug, Clone, Copy)]
pub struct SolveEvent<'a> {
    pub iteration: usize,
    pub phase: Phase,
    pub objective: Objective,
    pub placement: &'a Placement,
    pub policy: &'a ForwardingPolicy,
}

pub fn solve(problem: &Problem, method: Method, params: &SolveParams) -> Result<SolveReport> {
    match method {
        Method::Alt => alt_solve(problem, params),
        Method::OneShot => oneshot_solve(problem, params),
        Method::CongUnaware => cong_unaware_solve(problem),
        Method::CoLocated => colocated_solve(problem, params),
    }
}

pub fn alt_solve(problem: &Problem, params: &SolveParams) -> Result<SolveReport> {
    alt_solve_observed(problem, params, &mut |_| {})
}

pub fn oneshot_solve(problem: &Problem, params: &SolveParams) -> Result<SolveReport> {
    let single = SolveParams {
        max_iters: 1,
        ..*params
    };
    let mut report = alt_solve(problem, &single)?;
    report.method = Method::OneShot;
    Ok(report)
}

/// Alternates a forwarding phase with a placement update until the weighted
/// objective stops moving, starting from the congestion-unaware solution.
pub fn alt_solve_observed(
    problem: &Problem,
    params: &SolveParams,
    observer: &mut dyn FnMut(SolveEvent<'_>),
) -> Result<SolveReport> {
    params.validate()?;
    let (mut placement, mut policy) = unaware_state(problem)?;
    let mut current = compute_traffic(problem, &placement, &policy)?.objective;
    let mut trace = Vec::with_capacity(params.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    for m in 1..=params.max_iters {
        iterations = m;
        forwarding_sweep(problem, &placement, &mut policy, &params.sweep)?;
        let swept = compute_traffic(problem, &placement, &policy)?.objective;
        observer(SolveEvent {
            iteration: m,
            phase: Phase::AfterSweep,
            objective: swept,
            placement: &placement,
            policy: &policy,
        });
        let outcome = reassign_placements(problem, &mut placement, &mut policy)?;
        observer(SolveEvent {
            iteration: m,
            phase: Phase::AfterReassign,
            objective: outcome.objective,
            placement: &placement,
            policy: &policy,
        });
        let previous = current.weighted;
        current = outcome.objective;
        trace.push(current.weighted);
        log::debug!("alt iteration {m}: J = {:.6}", current.weighted);
        if (previous - current.weighted).abs() <= params.tol * previous.abs() {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        method: Method::Alt,
        placement,
        policy,
        objective: current,
        trace,
        iterations,
        converged,
    })
}

/// Hosts chosen per application on a three-layer graph: layer `k` carries
/// stage `k` traffic with link weights `L_k * D'(0)`, and moving from layer
/// `p - 1` to layer `p` at node `v` costs `w_p(v) * C'_v(0)`. The cheapest path
/// from the source in layer 0 to the destination in layer 2 fixes both hosts.
pub fn cong_unaware_placement(problem: &Problem) -> Result<Placement> {
    let graph = &problem.graph;
    let n = graph.node_count();
    let (comm, comp) = problem.weights.weighted_pair();
    let link_slope: Vec<f64> = problem
        .link_costs
        .iter()
        .map(|m| m.deriv_unchecked(0.0))
        .collect();
    let node_slope: Vec<f64> = problem
        .node_costs
        .iter()
        .map(|m| m.deriv_unchecked(0.0))
        .collect();

    let mut hosts = Vec::with_capacity(problem.app_count());
    for (a, app) in problem.apps.iter().enumerate() {
        let mut links = Vec::with_capacity(3 * graph.link_count() + 2 * n);
        let mut weights = Vec::with_capacity(links.capacity());
        for (k, size) in app.stage_sizes.iter().enumerate() {
            for (l, link) in graph.links().iter().enumerate() {
                links.push(Link {
                    tail: k * n + link.tail,
                    head: k * n + link.head,
                    mu: 1.0,
                });
                weights.push(comm * size * link_slope[l]);
            }
        }
        for p in 1..STAGES {
            for v in (0..n).filter(|&v| app.may_host(p, v)) {
                links.push(Link {
                    tail: (p - 1) * n + v,
                    head: p * n + v,
                    mu: 1.0,
                });
                weights.push(comp * app.workloads.get(v, p) * node_slope[v]);
            }
        }
        let layered = NetworkGraph::new(vec![1.0; STAGES * n], links)?;
        let tree = dijkstra(&layered, &weights, app.source, Direction::From);
        let mut at = 2 * n + app.dest;
        if tree.dist[at].is_infinite() {
            return Err(Error::NoCandidate {
                app: a,
                partition: 1,
            });
        }
        let mut chosen = [0; 2];
        while at != app.source {
            let link = layered.link(tree.tree_link[at].expect("reachable node has a tree link"));
            let (from_layer, to_layer) = (link.tail / n, link.head / n);
            if from_layer != to_layer {
                chosen[from_layer] = link.head % n;
            }
            at = link.tail;
        }
        hosts.push(Hosts::new(chosen[0], chosen[1]));
    }
    Ok(Placement::new(hosts))
}

fn unaware_state(problem: &Problem) -> Result<(Placement, ForwardingPolicy)> {
    let placement = cong_unaware_placement(problem)?;
    let policy = init_forwarding(problem, &placement)?;
    Ok((placement, policy))
}

pub fn cong_unaware_solve(problem: &Problem) -> Result<SolveReport> {
    let (placement, policy) = unaware_state(problem)?;
    let objective = compute_traffic(problem, &placement, &policy)?.objective;
    Ok(SolveReport {
        method: Method::CongUnaware,
        placement,
        policy,
        objective,
        trace: vec![objective.weighted],
        iterations: 0,
        converged: true,
    })
}

/// Both partitions of each application share one host, picked greedily in
/// application order under the loads left by the applications before it.
/// Forwarding is then optimized for the resulting placement.
pub fn colocated_solve(problem: &Problem, params: &SolveParams) -> Result<SolveReport> {
    params.validate()?;
    let (mut placement, mut policy) = unaware_state(problem)?;
    for (a, app) in problem.apps.iter().enumerate() {
        let traffic = compute_traffic(problem, &placement, &policy)?;
        let loads = link_and_node_marginals(problem, &traffic);
        let to_host = gamma_distances(problem, &loads, a, 0, app.source, Direction::From);
        let to_dest = gamma_distances(problem, &loads, a, 2, app.dest, Direction::To);
        let scores: Vec<f64> = (0..problem.node_count())
            .map(|v| {
                if app.may_host(1, v) && app.may_host(2, v) {
                    to_host[v]
                        + loads.kappa(problem, a, 1, v)
                        + loads.kappa(problem, a, 2, v)
                        + to_dest[v]
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let v = argmin(&scores).ok_or(Error::NoCandidate {
            app: a,
            partition: 1,
        })?;
        placement.set(a, Hosts::new(v, v));
        let weights: Vec<f64> = problem
            .link_costs
            .iter()
            .zip(&traffic.link_load)
            .map(|(m, &x)| m.deriv_unchecked(x.max(0.0)))
            .collect();
        for stage in 0..STAGES {
            route_stage_on_tree(problem, &placement, &mut policy, a, stage, &weights)?;
        }
    }
    let rounds = params.max_iters * params.sweep.t_phi;
    let stats = run_rounds(
        problem,
        &placement,
        &mut policy,
        &params.sweep,
        rounds,
        params.tol,
    )?;
    let objective = compute_traffic(problem, &placement, &policy)?.objective;
    let trace = if stats.trace.is_empty() {
        vec![objective.weighted]
    } else {
        stats.trace.clone()
    };
    Ok(SolveReport {
        method: Method::CoLocated,
        placement,
        policy,
        objective,
        iterations: stats.trace.len(),
        converged: stats.trace.len() < rounds,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostModel, CostWeights};
    use crate::flow::validate;
    use crate::topology::Application;
    use approx::assert_relative_eq;

    fn linear_line() -> Problem {
        let g = NetworkGraph::from_undirected(vec![8.0; 3], &[(0, 1, 8.0), (1, 2, 8.0)]).unwrap();
        Problem::with_costs(
            g,
            vec![Application::new(0, 0, 2, 1.0, [2.0, 0.8, 0.3], [1.0, 1.0])],
            vec![CostModel::linear(0.2).unwrap(); 4],
            vec![CostModel::linear(0.4).unwrap(); 3],
            CostWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.key().parse::<Method>().unwrap(), m);
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("gradient".parse::<Method>().is_err());
    }

    #[test]
    fn single_node_network() {
        let g = NetworkGraph::from_undirected(vec![8.0], &[]).unwrap();
        let p = Problem::new(
            g,
            vec![Application::new(0, 0, 0, 2.0, [2.0, 0.8, 0.3], [0.5, 1.0])],
            Default::default(),
            CostWeights::default(),
        )
        .unwrap();
        let expected = 0.5 * (3.0 / (8.0 - 3.0));
        for m in Method::ALL {
            let r = solve(&p, m, &SolveParams::default()).unwrap();
            assert_eq!(r.placement.hosts(0), Hosts::new(0, 0));
            assert_relative_eq!(r.objective.weighted, expected, max_relative = 1e-12);
            assert_eq!(r.objective.comm, 0.0);
        }
    }

    #[test]
    fn linear_line_reaches_the_optimum() {
        let p = linear_line();
        let r = alt_solve(&p, &SolveParams::default()).unwrap();
        assert_relative_eq!(r.objective.weighted, 0.46, max_relative = 1e-12);
        assert!(r.converged);
        assert!(validate(&p.graph, &p.apps, &r.placement, &r.policy).is_empty());
    }

    #[test]
    fn oneshot_matches_single_iteration() {
        let p = linear_line();
        let one = oneshot_solve(&p, &SolveParams::default()).unwrap();
        let alt = alt_solve(
            &p,
            &SolveParams {
                max_iters: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(one.objective, alt.objective);
        assert_eq!(one.placement, alt.placement);
        assert_eq!(one.method, Method::OneShot);
    }

    #[test]
    fn unaware_picks_cheapest_layered_path() {
        // Compute at node 0 is expensive, so both partitions move to node 1.
        let g = NetworkGraph::from_undirected(vec![8.0; 3], &[(0, 1, 8.0), (1, 2, 8.0)]).unwrap();
        let p = Problem::with_costs(
            g,
            vec![Application::new(0, 0, 0, 1.0, [2.0, 0.8, 0.3], [1.0, 1.0])],
            vec![CostModel::linear(0.01).unwrap(); 4],
            vec![
                CostModel::linear(5.0).unwrap(),
                CostModel::linear(1.0).unwrap(),
                CostModel::linear(1.0).unwrap(),
            ],
            CostWeights::default(),
        )
        .unwrap();
        assert_eq!(
            cong_unaware_placement(&p).unwrap().hosts(0),
            Hosts::new(1, 1)
        );
    }

    #[test]
    fn splitting_beats_colocation_with_thin_intermediate() {
        // Large input and output, negligible intermediate: the first partition
        // belongs at the source and the second at the destination.
        let g =
            NetworkGraph::from_undirected(vec![8.0; 4], &[(0, 1, 8.0), (1, 2, 8.0), (2, 3, 8.0)])
                .unwrap();
        let app = Application::new(0, 0, 3, 1.0, [3.0, 0.01, 3.0], [1.0, 1.0]);
        let p = Problem::new(g, vec![app], Default::default(), CostWeights::default()).unwrap();
        let params = SolveParams::default();
        let alt = alt_solve(&p, &params).unwrap();
        let coloc = colocated_solve(&p, &params).unwrap();
        assert_eq!(alt.placement.hosts(0), Hosts::new(0, 3));
        let h = coloc.placement.hosts(0);
        assert_eq!(h.h1, h.h2);
        assert!(alt.objective.weighted < coloc.objective.weighted);
    }

    #[test]
    fn observer_sees_both_phases() {
        let p = linear_line();
        let mut phases = Vec::new();
        alt_solve_observed(&p, &SolveParams::default(), &mut |e| {
            phases.push((e.iteration, e.phase))
        })
        .unwrap();
        assert_eq!(phases[0], (1, Phase::AfterSweep));
        assert_eq!(phases[1], (1, Phase::AfterReassign));
        assert_eq!(phases.len() % 2, 0);
    }
}
