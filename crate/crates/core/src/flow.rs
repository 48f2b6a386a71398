//! Placement and forwarding variables with their feasibility checks.
//! Per-stage traffic and the resulting loads and objective are derived here.
//!
//! Stage `k` traffic of an application is routed hop by hop using the
//! forwarding fractions until it reaches the stage's sink: the host of
//! partition 1 (stage 0), the host of partition 2 (stage 1) or the destination
//! (stage 2). Each processed request emits exactly one next-stage request.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::topology::{Application, NetworkGraph, NodeId};

pub const STAGES: usize = 3;
/// Tolerance on forwarding-fraction sums.
pub const FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hosts {
    pub h1: NodeId,
    pub h2: NodeId,
}

impl Hosts {
    pub fn new(h1: NodeId, h2: NodeId) -> Self {
        Self { h1, h2 }
    }

    /// `partition` is 1 or 2.
    pub fn get(&self, partition: usize) -> NodeId {
        match partition {
            1 => self.h1,
            2 => self.h2,
            _ => panic!("partition index must be 1 or 2, got {partition}"),
        }
    }
}

/// Host of each partition of each application (exactly one per partition).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    hosts: Vec<Hosts>,
}

impl Placement {
    pub fn new(hosts: Vec<Hosts>) -> Self {
        Self { hosts }
    }

    pub fn hosts(&self, app: usize) -> Hosts {
        self.hosts[app]
    }

    pub fn set(&mut self, app: usize, hosts: Hosts) {
        self.hosts[app] = hosts;
    }

    pub fn len(&self) -> usize {
        self.hosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Hosts> + '_ {
        self.hosts.iter().copied()
    }
}

/// Node where stage `stage` traffic of `app` leaves the stage.
pub fn stage_sink(app: &Application, hosts: Hosts, stage: usize) -> NodeId {
    match stage {
        0 => hosts.h1,
        1 => hosts.h2,
        2 => app.dest,
        _ => panic!("stage index must be 0..3, got {stage}"),
    }
}

/// Forwarding fractions of one (application, stage): per node, a sorted list
/// of `(neighbour, fraction)` with strictly positive fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRouting {
    out: Vec<Vec<(NodeId, f64)>>,
}

impl StageRouting {
    pub fn empty(node_count: usize) -> Self {
        Self {
            out: vec![Vec::new(); node_count],
        }
    }

    pub fn node_count(&self) -> usize {
        self.out.len()
    }

    pub fn fractions(&self, node: NodeId) -> &[(NodeId, f64)] {
        &self.out[node]
    }

    pub fn fraction(&self, from: NodeId, to: NodeId) -> f64 {
        self.out[from]
            .iter()
            .find(|(j, _)| *j == to)
            .map_or(0.0, |(_, f)| *f)
    }

    pub fn sum(&self, node: NodeId) -> f64 {
        self.out[node].iter().map(|(_, f)| f).sum()
    }

    /// Stores fractions as given (dropping non-positive entries).
    pub fn set_raw(&mut self, node: NodeId, mut fractions: Vec<(NodeId, f64)>) {
        fractions.retain(|(_, f)| *f > 0.0);
        fractions.sort_by_key(|(j, _)| *j);
        self.out[node] = fractions;
    }

    /// Stores fractions and renormalizes a positive total to exactly one.
    pub fn set(&mut self, node: NodeId, fractions: Vec<(NodeId, f64)>) {
        self.set_raw(node, fractions);
        let total = self.sum(node);
        if total > 0.0 && total != 1.0 {
            for (_, f) in &mut self.out[node] {
                *f /= total;
            }
        }
    }

    pub fn clear(&mut self, node: NodeId) {
        self.out[node].clear();
    }

    /// Nodes in topological order of the positive-fraction sub-graph, or a
    /// cycle if there is one.
    pub fn topological_order(&self) -> std::result::Result<Vec<NodeId>, Vec<NodeId>> {
        let n = self.out.len();
        let mut indegree = vec![0usize; n];
        for list in &self.out {
            for &(j, _) in list {
                indegree[j] += 1;
            }
        }
        let mut queue: VecDeque<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(j, _) in &self.out[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // Every leftover node still has a leftover predecessor, so walking
        // backward among leftovers must revisit a node.
        let leftover: Vec<bool> = indegree.iter().map(|&d| d > 0).collect();
        let mut pred = vec![usize::MAX; n];
        for (i, list) in self.out.iter().enumerate() {
            for &(j, _) in list {
                if leftover[i] && leftover[j] && pred[j] == usize::MAX {
                    pred[j] = i;
                }
            }
        }
        let start = (0..n).find(|&i| leftover[i]).expect("leftover node");
        let mut position = vec![usize::MAX; n];
        let mut walk = Vec::new();
        let mut cur = start;
        while position[cur] == usize::MAX {
            position[cur] = walk.len();
            walk.push(cur);
            cur = pred[cur];
        }
        let mut cycle = walk[position[cur]..].to_vec();
        cycle.reverse();
        Err(cycle)
    }

    /// True when `target` is reachable from `start` over positive fractions.
    pub fn reaches(&self, start: NodeId, target: NodeId) -> bool {
        let mut seen = vec![false; self.out.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            if i == target {
                return true;
            }
            for &(j, _) in &self.out[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        false
    }
}

/// Forwarding fractions for every application and stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardingPolicy {
    stages: Vec<[StageRouting; STAGES]>,
}

impl ForwardingPolicy {
    pub fn empty(app_count: usize, node_count: usize) -> Self {
        Self {
            stages: (0..app_count)
                .map(|_| std::array::from_fn(|_| StageRouting::empty(node_count)))
                .collect(),
        }
    }

    pub fn app_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stage(&self, app: usize, stage: usize) -> &StageRouting {
        &self.stages[app][stage]
    }

    pub fn stage_mut(&mut self, app: usize, stage: usize) -> &mut StageRouting {
        &mut self.stages[app][stage]
    }

    pub fn app(&self, app: usize) -> &[StageRouting; STAGES] {
        &self.stages[app]
    }

    pub fn fractions(&self, app: usize, stage: usize, node: NodeId) -> &[(NodeId, f64)] {
        self.stages[app][stage].fractions(node)
    }
}

/// A violated feasibility constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    HostOutOfRange {
        app: usize,
        partition: usize,
        node: NodeId,
    },
    HostNotAllowed {
        app: usize,
        partition: usize,
        node: NodeId,
    },
    FractionSum {
        app: usize,
        stage: usize,
        node: NodeId,
        sum: f64,
        expected: f64,
    },
    MissingLink {
        app: usize,
        stage: usize,
        from: NodeId,
        to: NodeId,
    },
    FractionRange {
        app: usize,
        stage: usize,
        from: NodeId,
        to: NodeId,
        value: f64,
    },
    ShapeMismatch(String),
}

/// Checks placement uniqueness/admissibility and forwarding conservation.
///
/// Nodes that cannot reach the stage sink at all are exempt from the sum rule:
/// no admissible fractions exist for them.
pub fn validate(
    graph: &NetworkGraph,
    apps: &[Application],
    placement: &Placement,
    policy: &ForwardingPolicy,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let n = graph.node_count();
    if placement.len() != apps.len() || policy.app_count() != apps.len() {
        violations.push(Violation::ShapeMismatch(format!(
            "{} applications, {} placements, {} policies",
            apps.len(),
            placement.len(),
            policy.app_count()
        )));
        return violations;
    }
    for (a, app) in apps.iter().enumerate() {
        let hosts = placement.hosts(a);
        let mut hosts_ok = true;
        for p in 1..=2 {
            let node = hosts.get(p);
            if node >= n {
                violations.push(Violation::HostOutOfRange {
                    app: a,
                    partition: p,
                    node,
                });
                hosts_ok = false;
            } else if !app.may_host(p, node) {
                violations.push(Violation::HostNotAllowed {
                    app: a,
                    partition: p,
                    node,
                });
            }
        }
        if !hosts_ok {
            continue;
        }
        for k in 0..STAGES {
            let routing = policy.stage(a, k);
            if routing.node_count() != n {
                violations.push(Violation::ShapeMismatch(format!(
                    "app {a} stage {k}: routing covers {} nodes",
                    routing.node_count()
                )));
                continue;
            }
            let sink = stage_sink(app, hosts, k);
            let can_reach = graph.reaching(sink);
            for (i, &reaches_sink) in can_reach.iter().enumerate() {
                for &(j, value) in routing.fractions(i) {
                    if j >= n || graph.find_link(i, j).is_none() {
                        violations.push(Violation::MissingLink {
                            app: a,
                            stage: k,
                            from: i,
                            to: j,
                        });
                    }
                    if !(0.0..=1.0 + FRACTION_TOL).contains(&value) {
                        violations.push(Violation::FractionRange {
                            app: a,
                            stage: k,
                            from: i,
                            to: j,
                            value,
                        });
                    }
                }
                let expected = if i == sink { 0.0 } else { 1.0 };
                if !reaches_sink {
                    continue;
                }
                let sum = routing.sum(i);
                if (sum - expected).abs() > FRACTION_TOL {
                    violations.push(Violation::FractionSum {
                        app: a,
                        stage: k,
                        node: i,
                        sum,
                        expected,
                    });
                }
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Objective {
    /// `eta * comm + (1 - eta) * comp`, the quantity the solvers minimize.
    pub weighted: f64,
    pub comm: f64,
    pub comp: f64,
}

impl Objective {
    /// Unweighted `J_comm + J_comp`.
    pub fn total(&self) -> f64 {
        self.comm + self.comp
    }
}

/// Derived traffic for a (placement, forwarding) pair.
#[derive(Debug, Clone)]
pub struct TrafficState {
    /// Request rate per application, stage and node.
    pub t: Vec<[Vec<f64>; STAGES]>,
    /// Request rate per application, stage and link.
    pub f: Vec<[Vec<f64>; STAGES]>,
    /// Bits/sec per link.
    pub link_load: Vec<f64>,
    /// Work units/sec per node.
    pub node_load: Vec<f64>,
    pub objective: Objective,
}

/// Propagates per-node injections through one stage's forwarding fractions.
fn propagate(
    routing: &StageRouting,
    injection: &[f64],
    app: usize,
    stage: usize,
) -> Result<Vec<f64>> {
    let order = routing
        .topological_order()
        .map_err(|cycle| Error::CyclicFlow { app, stage, cycle })?;
    let mut t = injection.to_vec();
    for i in order {
        let ti = t[i];
        if ti == 0.0 {
            continue;
        }
        for &(j, phi) in routing.fractions(i) {
            t[j] += ti * phi;
        }
    }
    Ok(t)
}

/// Stage traffic of one application given its stage-0 injection vector.
pub(crate) fn app_traffic(
    app_index: usize,
    hosts: Hosts,
    routing: &[StageRouting; STAGES],
    stage0_injection: Vec<f64>,
) -> Result<[Vec<f64>; STAGES]> {
    let n = stage0_injection.len();
    let t0 = propagate(&routing[0], &stage0_injection, app_index, 0)?;
    let mut inj = vec![0.0; n];
    inj[hosts.h1] = t0[hosts.h1];
    let t1 = propagate(&routing[1], &inj, app_index, 1)?;
    let mut inj = vec![0.0; n];
    inj[hosts.h2] = t1[hosts.h2];
    let t2 = propagate(&routing[2], &inj, app_index, 2)?;
    Ok([t0, t1, t2])
}

/// Per-link rates `f = t * phi` for one stage.
pub(crate) fn link_flows(
    graph: &NetworkGraph,
    routing: &StageRouting,
    t: &[f64],
) -> Result<Vec<f64>> {
    let mut f = vec![0.0; graph.link_count()];
    for (i, &ti) in t.iter().enumerate() {
        for &(j, phi) in routing.fractions(i) {
            let link = graph.find_link(i, j).ok_or_else(|| {
                Error::InvalidPolicy(format!("fraction on missing link ({i}, {j})"))
            })?;
            f[link] = ti * phi;
        }
    }
    Ok(f)
}

/// One vector per stage, indexed by node or link.
pub(crate) type StageVectors = [Vec<f64>; STAGES];

/// Solves the stage recursions for one application.
pub(crate) fn app_flows(
    problem: &Problem,
    placement: &Placement,
    policy: &ForwardingPolicy,
    a: usize,
) -> Result<(StageVectors, StageVectors)> {
    let graph = &problem.graph;
    let app = &problem.apps[a];
    let mut injection = vec![0.0; graph.node_count()];
    injection[app.source] = app.rate;
    let ta = app_traffic(a, placement.hosts(a), policy.app(a), injection)?;
    let fa = [
        link_flows(graph, policy.stage(a, 0), &ta[0])?,
        link_flows(graph, policy.stage(a, 1), &ta[1])?,
        link_flows(graph, policy.stage(a, 2), &ta[2])?,
    ];
    Ok((ta, fa))
}

/// Aggregate link and node loads from per-application traffic. The
/// summation order is fixed so that equal inputs give bit-identical loads.
pub(crate) fn accumulate_loads(
    problem: &Problem,
    placement: &Placement,
    t: &[[Vec<f64>; STAGES]],
    f: &[[Vec<f64>; STAGES]],
) -> (Vec<f64>, Vec<f64>) {
    let mut link_load = vec![0.0; problem.graph.link_count()];
    let mut node_load = vec![0.0; problem.node_count()];
    for (a, app) in problem.apps.iter().enumerate() {
        let hosts = placement.hosts(a);
        for (size, flows) in app.stage_sizes.iter().zip(&f[a]) {
            for (load, flow) in link_load.iter_mut().zip(flows) {
                *load += size * flow;
            }
        }
        node_load[hosts.h1] += app.workloads.get(hosts.h1, 1) * t[a][0][hosts.h1];
        node_load[hosts.h2] += app.workloads.get(hosts.h2, 2) * t[a][1][hosts.h2];
    }
    (link_load, node_load)
}

impl TrafficState {
    /// Recomputes aggregate loads and the objective from `t` and `f`.
    pub(crate) fn refresh(&mut self, problem: &Problem, placement: &Placement) {
        let (link_load, node_load) = accumulate_loads(problem, placement, &self.t, &self.f);
        self.objective = objective(problem, &link_load, &node_load);
        self.link_load = link_load;
        self.node_load = node_load;
    }
}

/// Solves the stage recursions and accumulates loads and costs.
pub fn compute_traffic(
    problem: &Problem,
    placement: &Placement,
    policy: &ForwardingPolicy,
) -> Result<TrafficState> {
    let mut t = Vec::with_capacity(problem.apps.len());
    let mut f = Vec::with_capacity(problem.apps.len());
    for a in 0..problem.apps.len() {
        let (ta, fa) = app_flows(problem, placement, policy, a)?;
        t.push(ta);
        f.push(fa);
    }
    let (link_load, node_load) = accumulate_loads(problem, placement, &t, &f);
    let objective = objective(problem, &link_load, &node_load);
    Ok(TrafficState {
        t,
        f,
        link_load,
        node_load,
        objective,
    })
}

/// Communication, computation and weighted cost of the given loads.
pub fn objective(problem: &Problem, link_load: &[f64], node_load: &[f64]) -> Objective {
    let comm: f64 = problem
        .link_costs
        .iter()
        .zip(link_load)
        .map(|(m, &x)| m.value_unchecked(x.max(0.0)))
        .sum();
    let comp: f64 = problem
        .node_costs
        .iter()
        .zip(node_load)
        .map(|(m, &x)| m.value_unchecked(x.max(0.0)))
        .sum();
    let (wc, wp) = problem.weights.weighted_pair();
    Objective {
        weighted: wc * comm + wp * comp,
        comm,
        comp,
    }
}

/// Cheap objective evaluation used inside the optimizers.
pub fn evaluate(
    problem: &Problem,
    placement: &Placement,
    policy: &ForwardingPolicy,
) -> Result<Objective> {
    compute_traffic(problem, placement, policy).map(|s| s.objective)
}

impl TrafficState {
    /// Writes `quantity,app,stage,element,value` rows: `t` per node, `f` per
    /// link, then aggregate `F` per link and `G` per node.
    pub fn write_csv<W: Write>(&self, graph: &NetworkGraph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "app", "stage", "element", "value"])?;
        for (a, stages) in self.t.iter().enumerate() {
            for (k, values) in stages.iter().enumerate() {
                for (i, v) in values.iter().enumerate() {
                    if *v != 0.0 {
                        w.write_record([
                            "t",
                            &a.to_string(),
                            &k.to_string(),
                            &i.to_string(),
                            &v.to_string(),
                        ])?;
                    }
                }
            }
        }
        for (a, stages) in self.f.iter().enumerate() {
            for (k, values) in stages.iter().enumerate() {
                for (l, v) in values.iter().enumerate() {
                    if *v != 0.0 {
                        let link = graph.link(l);
                        let element = format!("{}->{}", link.tail, link.head);
                        w.write_record([
                            "f",
                            &a.to_string(),
                            &k.to_string(),
                            &element,
                            &v.to_string(),
                        ])?;
                    }
                }
            }
        }
        for (l, v) in self.link_load.iter().enumerate() {
            let link = graph.link(l);
            w.write_record([
                "F",
                "",
                "",
                &format!("{}->{}", link.tail, link.head),
                &v.to_string(),
            ])?;
        }
        for (i, v) in self.node_load.iter().enumerate() {
            w.write_record(["G", "", "", &i.to_string(), &v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
