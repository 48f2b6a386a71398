//! Forwarding updates for a fixed placement.
//!
//! Each round shifts forwarding mass at every node toward the outgoing link
//! with the smallest marginal `delta = ell + q(next hop)`, in the style of
//! Gallager's minimum-delay routing. New mass may only move strictly downhill
//! in cost-to-go (node blocking), and a new link is never opened toward a node
//! that already forwards back to the updating node, so every stage's forwarding
//! graph stays acyclic.
//!
//! Marginals are frozen at the start of a round. Each (application, stage) is
//! then updated in turn and kept only if the objective drops; otherwise its
//! step is halved and retried.

use crate::error::{Error, Result};
use crate::flow::{
    app_flows, compute_traffic, stage_sink, ForwardingPolicy, Placement, StageRouting,
    TrafficState, STAGES,
};
use crate::marginals::MarginalState;
use crate::paths::{dijkstra, Direction};
use crate::problem::Problem;
use crate::topology::NodeId;

/// Step-size halvings tried before a round is abandoned.
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepParams {
    /// Base step size.
    pub alpha0: f64,
    /// Rounds per forwarding phase.
    pub t_phi: usize,
    /// Traffic floor in the step normalization `alpha0 / max(t, eps_t)`.
    pub eps_t: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            alpha0: 0.05,
            t_phi: 10,
            eps_t: 1e-9,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return Err(Error::Config(format!(
                "alpha0 must be positive, got {}",
                self.alpha0
            )));
        }
        if self.t_phi == 0 {
            return Err(Error::Config("t_phi must be at least 1".into()));
        }
        if self.eps_t.is_nan() || self.eps_t <= 0.0 {
            return Err(Error::Config(format!(
                "eps_t must be positive, got {}",
                self.eps_t
            )));
        }
        Ok(())
    }
}

/// Per-link weights `D'(0)` used for the zero-load shortest-path policy.
pub fn zero_load_weights(problem: &Problem) -> Vec<f64> {
    problem
        .link_costs
        .iter()
        .map(|m| m.deriv_unchecked(0.0))
        .collect()
}

/// Replaces the forwarding of `(app, stage)` by the in-tree of shortest paths
/// toward the stage sink under `weights`. Every node able to reach the sink
/// forwards all its traffic to its tree parent.
pub fn route_stage_on_tree(
    problem: &Problem,
    placement: &Placement,
    policy: &mut ForwardingPolicy,
    app: usize,
    stage: usize,
    weights: &[f64],
) -> Result<()> {
    let application = &problem.apps[app];
    let hosts = placement.hosts(app);
    let sink = stage_sink(application, hosts, stage);
    let start = match stage {
        0 => application.source,
        1 => hosts.h1,
        _ => hosts.h2,
    };
    let tree = dijkstra(&problem.graph, weights, sink, Direction::To);
    if tree.dist[start].is_infinite() {
        return Err(Error::Unreachable {
            app,
            stage,
            from: start,
            to: sink,
        });
    }
    let routing = policy.stage_mut(app, stage);
    for i in 0..problem.node_count() {
        match tree.tree_link[i] {
            Some(l) if i != sink => routing.set(i, vec![(problem.graph.link(l).head, 1.0)]),
            _ => routing.clear(i),
        }
    }
    Ok(())
}

/// Single-path forwarding along zero-load shortest paths: stage 0 toward the
/// partition-1 host, stage 1 toward the partition-2 host, stage 2 toward the
/// destination.
pub fn init_forwarding(problem: &Problem, placement: &Placement) -> Result<ForwardingPolicy> {
    let weights = zero_load_weights(problem);
    let mut policy = ForwardingPolicy::empty(problem.app_count(), problem.node_count());
    for app in 0..problem.app_count() {
        for stage in 0..STAGES {
            route_stage_on_tree(problem, placement, &mut policy, app, stage, &weights)?;
        }
    }
    Ok(policy)
}

/// Moves mass away from non-best links of one node.
///
/// `options` holds `(neighbour, fraction, delta)` for every eligible neighbour
/// and `best` indexes the target neighbour. Returns the new fraction list.
pub fn shift_toward_best(
    options: &[(NodeId, f64, f64)],
    best: usize,
    alpha: f64,
) -> Vec<(NodeId, f64)> {
    let delta_min = options[best].2;
    let mut out = Vec::with_capacity(options.len());
    let mut moved_total = 0.0;
    for (idx, &(j, phi, delta)) in options.iter().enumerate() {
        if idx == best {
            continue;
        }
        let reduced = (phi - alpha * (delta - delta_min)).max(0.0);
        moved_total += reduced;
        out.push((j, reduced));
    }
    out.push((options[best].0, (1.0 - moved_total).max(0.0)));
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepStats {
    /// Weighted objective after each completed round.
    pub trace: Vec<f64>,
    /// Rounds in which no (app, stage) update lowered the objective.
    pub stalled_rounds: usize,
    /// (app, stage) updates reverted because they formed a cycle.
    pub cyclic_reverts: usize,
}

/// One forwarding phase: up to `params.t_phi` rounds. Stops early at a fixed
/// point.
pub fn forwarding_sweep(
    problem: &Problem,
    placement: &Placement,
    policy: &mut ForwardingPolicy,
    params: &SweepParams,
) -> Result<SweepStats> {
    run_rounds(problem, placement, policy, params, params.t_phi, 0.0)
}

/// Runs up to `rounds` forwarding rounds, stopping once a round improves the
/// objective by less than `rel_tol` (relative) or reaches a fixed point.
pub fn run_rounds(
    problem: &Problem,
    placement: &Placement,
    policy: &mut ForwardingPolicy,
    params: &SweepParams,
    rounds: usize,
    rel_tol: f64,
) -> Result<SweepStats> {
    params.validate()?;
    let mut stats = SweepStats::default();
    let mut traffic = compute_traffic(problem, placement, policy)?;
    for _ in 0..rounds {
        let before = traffic.objective.weighted;
        let marginals = MarginalState::compute(problem, placement, policy, &traffic)?;
        let changed = update_round(
            problem,
            placement,
            policy,
            &mut traffic,
            &marginals,
            params,
            &mut stats,
        )?;
        if !changed {
            stats.stalled_rounds += 1;
            break;
        }
        let after = traffic.objective.weighted;
        stats.trace.push(after);
        log::trace!("forwarding round: J = {after:.9}");
        if before - after <= rel_tol * before.abs() {
            break;
        }
    }
    Ok(stats)
}

/// Shifts the forwarding of every eligible node of one (app, stage) toward
/// its best next hop, using marginals from the start of the round. Returns
/// whether any fraction changed.
#[allow(clippy::too_many_arguments)]
fn shift_stage(
    problem: &Problem,
    routing: &mut StageRouting,
    nodes: &[NodeId],
    t: &[f64],
    q: &[f64],
    marginals: &MarginalState,
    size: f64,
    step: f64,
    eps_t: f64,
) -> bool {
    let graph = &problem.graph;
    let mut changed = false;
    for &i in nodes {
        // A new link toward a node that already forwards back to `i` would
        // close a cycle, so such neighbours are not options.
        let mut options: Vec<(NodeId, f64, f64)> = graph
            .out_links(i)
            .iter()
            .filter_map(|&l| {
                let j = graph.link(l).head;
                let phi = routing.fraction(i, j);
                let admissible = phi > 0.0 || (q[j] < q[i] && !routing.reaches(j, i));
                admissible.then(|| (j, phi, size * marginals.loads.link[l] + q[j]))
            })
            .collect();
        if options.is_empty() {
            continue;
        }
        options.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)));
        let alpha = step / t[i].max(eps_t);
        let updated = shift_toward_best(&options, 0, alpha);
        let old = routing.fractions(i).to_vec();
        routing.set(i, updated);
        if routing.fractions(i) != old.as_slice() {
            changed = true;
        }
    }
    changed
}

/// One round of updates. Each (app, stage) update is accepted only if it
/// lowers the objective, halving its step until it does. `traffic` is kept in
/// sync with `policy`. Returns whether anything changed.
fn update_round(
    problem: &Problem,
    placement: &Placement,
    policy: &mut ForwardingPolicy,
    traffic: &mut TrafficState,
    marginals: &MarginalState,
    params: &SweepParams,
    stats: &mut SweepStats,
) -> Result<bool> {
    let n = problem.node_count();
    let mut changed = false;
    for (a, app) in problem.apps.iter().enumerate() {
        let hosts = placement.hosts(a);
        for k in 0..STAGES {
            let sink = stage_sink(app, hosts, k);
            let t = traffic.t[a][k].clone();
            let q = &marginals.q[a][k];
            let saved = policy.stage(a, k).clone();
            let mut nodes: Vec<NodeId> = (0..n)
                .filter(|&i| {
                    i != sink && t[i] > 0.0 && q[i].is_finite() && !saved.fractions(i).is_empty()
                })
                .collect();
            if nodes.is_empty() {
                continue;
            }
            nodes.sort_by(|&x, &y| q[y].total_cmp(&q[x]).then(x.cmp(&y)));
            let current = traffic.objective.weighted;
            let mut scale = 1.0;
            for _ in 0..MAX_HALVINGS {
                let mut routing = saved.clone();
                let size = app.stage_sizes[k];
                if !shift_stage(
                    problem,
                    &mut routing,
                    &nodes,
                    &t,
                    q,
                    marginals,
                    size,
                    params.alpha0 * scale,
                    params.eps_t,
                ) {
                    break;
                }
                if let Err(cycle) = routing.topological_order() {
                    log::warn!("app {a} stage {k}: forwarding update closed the cycle {cycle:?}, reverting");
                    stats.cyclic_reverts += 1;
                    break;
                }
                *policy.stage_mut(a, k) = routing;
                let (ta, fa) = app_flows(problem, placement, policy, a)?;
                let old_t = std::mem::replace(&mut traffic.t[a], ta);
                let old_f = std::mem::replace(&mut traffic.f[a], fa);
                let old_loads = (
                    traffic.link_load.clone(),
                    traffic.node_load.clone(),
                    traffic.objective,
                );
                traffic.refresh(problem, placement);
                if traffic.objective.weighted < current {
                    changed = true;
                    break;
                }
                *policy.stage_mut(a, k) = saved.clone();
                traffic.t[a] = old_t;
                traffic.f[a] = old_f;
                (traffic.link_load, traffic.node_load, traffic.objective) = old_loads;
                scale *= 0.5;
            }
        }
    }
    Ok(changed)
}
