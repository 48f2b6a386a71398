//! Marginal costs of the current operating point.
//!
//! `q[a][k][i]` is the increase of the weighted objective per unit of extra
//! stage-`k` request rate of application `a` entering at node `i`, under the
//! current placement and forwarding. It is obtained by a backward sweep over
//! each stage's forwarding DAG, starting from the destination: a host node adds
//! the marginal compute cost of its partition plus the next stage's cost-to-go
//! at the same node.

use std::io::Write;

use crate::error::Result;
use crate::flow::{
    app_traffic, link_flows, stage_sink, ForwardingPolicy, Placement, TrafficState, STAGES,
};
use crate::problem::Problem;
use crate::topology::{LinkId, NodeId};

/// Weighted first derivatives of every link and node cost at the current loads.
/// Stage- and application-specific marginals are these times a packet size or
/// workload.
#[derive(Debug, Clone)]
pub struct LoadMarginals {
    /// `eta * D'_ij(F_ij)` per link.
    pub link: Vec<f64>,
    /// `(1 - eta) * C'_i(G_i)` per node.
    pub node: Vec<f64>,
}

impl LoadMarginals {
    /// Marginal transmission cost of stage `stage` traffic of `app` on `link`.
    pub fn ell(&self, problem: &Problem, app: usize, stage: usize, link: LinkId) -> f64 {
        problem.apps[app].stage_sizes[stage] * self.link[link]
    }

    /// Marginal computation cost of partition `partition` (1 or 2) of `app` at `node`.
    pub fn kappa(&self, problem: &Problem, app: usize, partition: usize, node: NodeId) -> f64 {
        problem.apps[app].workloads.get(node, partition) * self.node[node]
    }
}

pub fn link_and_node_marginals(problem: &Problem, traffic: &TrafficState) -> LoadMarginals {
    let (wc, wp) = problem.weights.weighted_pair();
    LoadMarginals {
        link: problem
            .link_costs
            .iter()
            .zip(&traffic.link_load)
            .map(|(m, &x)| wc * m.deriv_unchecked(x.max(0.0)))
            .collect(),
        node: problem
            .node_costs
            .iter()
            .zip(&traffic.node_load)
            .map(|(m, &x)| wp * m.deriv_unchecked(x.max(0.0)))
            .collect(),
    }
}

/// Cost-to-go per application, stage and node. Nodes that neither forward nor
/// absorb a stage get `f64::INFINITY`.
pub fn cost_to_go(
    problem: &Problem,
    placement: &Placement,
    policy: &ForwardingPolicy,
    marginals: &LoadMarginals,
) -> Result<Vec<[Vec<f64>; STAGES]>> {
    let graph = &problem.graph;
    let n = graph.node_count();
    let mut all = Vec::with_capacity(problem.apps.len());
    for (a, app) in problem.apps.iter().enumerate() {
        let hosts = placement.hosts(a);
        let mut q: [Vec<f64>; STAGES] = std::array::from_fn(|_| vec![f64::INFINITY; n]);
        for k in (0..STAGES).rev() {
            let routing = policy.stage(a, k);
            let order = routing
                .topological_order()
                .map_err(|cycle| crate::Error::CyclicFlow {
                    app: a,
                    stage: k,
                    cycle,
                })?;
            let sink = stage_sink(app, hosts, k);
            let size = app.stage_sizes[k];
            for &i in order.iter().rev() {
                if i == sink {
                    // partition k+1 runs here and the request continues as stage k+1
                    q[k][i] = if k == 2 {
                        0.0
                    } else {
                        marginals.kappa(problem, a, k + 1, i) + q[k + 1][i]
                    };
                    continue;
                }
                let fractions = routing.fractions(i);
                if fractions.is_empty() {
                    continue;
                }
                let mut value = 0.0;
                for &(j, phi) in fractions {
                    let link = graph.find_link(i, j).ok_or_else(|| {
                        crate::Error::InvalidPolicy(format!("fraction on missing link ({i}, {j})"))
                    })?;
                    value += phi * (size * marginals.link[link] + q[k][j]);
                }
                q[k][i] = value;
            }
        }
        all.push(q);
    }
    Ok(all)
}

/// `delta[a][k][link] = ell + q[head]` for every link.
pub fn forwarding_marginals(
    problem: &Problem,
    marginals: &LoadMarginals,
    q: &[[Vec<f64>; STAGES]],
) -> Vec<[Vec<f64>; STAGES]> {
    let graph = &problem.graph;
    problem
        .apps
        .iter()
        .enumerate()
        .map(|(a, app)| {
            std::array::from_fn(|k| {
                graph
                    .links()
                    .iter()
                    .enumerate()
                    .map(|(l, link)| app.stage_sizes[k] * marginals.link[l] + q[a][k][link.head])
                    .collect()
            })
        })
        .collect()
}

/// Everything the forwarding and placement updates need about the current
/// operating point.
#[derive(Debug, Clone)]
pub struct MarginalState {
    pub loads: LoadMarginals,
    pub q: Vec<[Vec<f64>; STAGES]>,
}

impl MarginalState {
    pub fn compute(
        problem: &Problem,
        placement: &Placement,
        policy: &ForwardingPolicy,
        traffic: &TrafficState,
    ) -> Result<Self> {
        let loads = link_and_node_marginals(problem, traffic);
        let q = cost_to_go(problem, placement, policy, &loads)?;
        Ok(Self { loads, q })
    }

    pub fn delta(&self, problem: &Problem, app: usize, stage: usize, link: LinkId) -> f64 {
        self.loads.ell(problem, app, stage, link)
            + self.q[app][stage][problem.graph.link(link).head]
    }

    /// Writes `kind,app,stage,element,value` rows for `q` per node and `delta`
    /// per link.
    pub fn write_csv<W: Write>(&self, problem: &Problem, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "app", "stage", "element", "value"])?;
        let delta = forwarding_marginals(problem, &self.loads, &self.q);
        for (a, stages) in self.q.iter().enumerate() {
            for (k, values) in stages.iter().enumerate() {
                for (i, v) in values.iter().enumerate() {
                    w.write_record([
                        "q",
                        &a.to_string(),
                        &k.to_string(),
                        &i.to_string(),
                        &v.to_string(),
                    ])?;
                }
                for (l, v) in delta[a][k].iter().enumerate() {
                    let link = problem.graph.link(l);
                    let element = format!("{}->{}", link.tail, link.head);
                    w.write_record([
                        "delta",
                        &a.to_string(),
                        &k.to_string(),
                        &element,
                        &v.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FiniteDiffCheck {
    Checked {
        q: f64,
        finite_difference: f64,
        rel_error: f64,
    },
    Skipped {
        reason: String,
    },
}

impl FiniteDiffCheck {
    pub fn rel_error(&self) -> Option<f64> {
        match self {
            FiniteDiffCheck::Checked { rel_error, .. } => Some(*rel_error),
            FiniteDiffCheck::Skipped { .. } => None,
        }
    }
}

/// Compares `q[app][0][node]` with a central difference of the weighted
/// objective under `±eps` extra stage-0 rate at `node`, `eps = 1e-6 * rate`.
///
/// Traffic is linear in the injections, so the perturbed loads are
/// `F ± eps * dF` where `dF` comes from forward-propagating a unit injection.
/// Each cost term's divided difference is then evaluated in closed form,
/// avoiding the cancellation of subtracting two nearly equal totals. Loads
/// pushed below zero use the cost's analytic continuation.
pub fn finite_diff_check(
    problem: &Problem,
    placement: &Placement,
    policy: &ForwardingPolicy,
    node: NodeId,
    app: usize,
) -> Result<FiniteDiffCheck> {
    let application = &problem.apps[app];
    if application.rate <= 0.0 {
        return Ok(FiniteDiffCheck::Skipped {
            reason: format!("application {app} has zero rate"),
        });
    }
    let traffic = crate::flow::compute_traffic(problem, placement, policy)?;
    let marginals = MarginalState::compute(problem, placement, policy, &traffic)?;
    let q = marginals.q[app][0][node];
    if !q.is_finite() {
        return Ok(FiniteDiffCheck::Skipped {
            reason: format!("node {node} cannot route stage-0 traffic of application {app}"),
        });
    }
    let graph = &problem.graph;
    let hosts = placement.hosts(app);
    let mut unit = vec![0.0; graph.node_count()];
    unit[node] = 1.0;
    let u = app_traffic(app, hosts, policy.app(app), unit)?;
    let mut d_link = vec![0.0; graph.link_count()];
    for (k, uk) in u.iter().enumerate() {
        let flows = link_flows(graph, policy.stage(app, k), uk)?;
        for (d, f) in d_link.iter_mut().zip(flows) {
            *d += application.stage_sizes[k] * f;
        }
    }
    let mut d_node = vec![0.0; graph.node_count()];
    d_node[hosts.h1] += application.workloads.get(hosts.h1, 1) * u[0][hosts.h1];
    d_node[hosts.h2] += application.workloads.get(hosts.h2, 2) * u[1][hosts.h2];

    let eps = 1e-6 * application.rate;
    let (wc, wp) = problem.weights.weighted_pair();
    let mut fd = 0.0;
    for (l, &d) in d_link.iter().enumerate() {
        if d != 0.0 {
            fd += wc * d * problem.link_costs[l].central_slope(traffic.link_load[l], eps * d);
        }
    }
    for (i, &d) in d_node.iter().enumerate() {
        if d != 0.0 {
            fd += wp * d * problem.node_costs[i].central_slope(traffic.node_load[i], eps * d);
        }
    }
    let rel_error = (fd - q).abs() / q.max(1e-12);
    Ok(FiniteDiffCheck::Checked {
        q,
        finite_difference: fd,
        rel_error,
    })
}
