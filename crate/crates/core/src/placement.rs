//! Placement updates for fixed forwarding.
//!
//! A candidate host is scored by the first-order cost it would induce: the
//! cheapest marginal transmission cost to bring the partition's input there,
//! the marginal compute cost at the node, and the cheapest marginal cost to
//! ship its output onward. Stage weights differ from the base link marginal
//! `D'(F)` only by the packet size, so four shortest-path trees per
//! application (from the source and from the new partition-1 host, toward the
//! partition-2 host and toward the destination) cover every score.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{compute_traffic, ForwardingPolicy, Hosts, Objective, Placement, TrafficState};
use crate::forwarding::{init_forwarding, route_stage_on_tree, run_rounds, SweepParams};
use crate::marginals::{link_and_node_marginals, LoadMarginals};
use crate::paths::{dijkstra, Direction};
use crate::problem::Problem;
use crate::topology::NodeId;

/// Minimum marginal transmission cost of stage `stage` traffic of `app`
/// between `anchor` and every node.
pub fn gamma_distances(
    problem: &Problem,
    loads: &LoadMarginals,
    app: usize,
    stage: usize,
    anchor: NodeId,
    direction: Direction,
) -> Vec<f64> {
    let size = problem.apps[app].stage_sizes[stage];
    let weights: Vec<f64> = loads.link.iter().map(|d| size * d).collect();
    dijkstra(&problem.graph, &weights, anchor, direction).dist
}

/// Base distances under `eta * D'(F)`, shared by every stage and application.
struct BaseDistances<'a> {
    problem: &'a Problem,
    loads: &'a LoadMarginals,
    cache: HashMap<(NodeId, bool), Vec<f64>>,
}

impl<'a> BaseDistances<'a> {
    fn new(problem: &'a Problem, loads: &'a LoadMarginals) -> Self {
        Self {
            problem,
            loads,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, anchor: NodeId, direction: Direction) -> &[f64] {
        let key = (anchor, direction == Direction::To);
        self.cache.entry(key).or_insert_with(|| {
            dijkstra(&self.problem.graph, &self.loads.link, anchor, direction).dist
        })
    }
}

fn stage_distance(
    base: &mut BaseDistances,
    size: f64,
    anchor: NodeId,
    direction: Direction,
) -> Vec<f64> {
    base.get(anchor, direction)
        .iter()
        .map(|d| size * d)
        .collect()
}

fn partition1_scores(
    base: &mut BaseDistances,
    problem: &Problem,
    app: usize,
    h2: NodeId,
) -> Vec<f64> {
    let application = &problem.apps[app];
    let upstream = stage_distance(
        base,
        application.stage_sizes[0],
        application.source,
        Direction::From,
    );
    let downstream = stage_distance(base, application.stage_sizes[1], h2, Direction::To);
    (0..problem.node_count())
        .map(|i| {
            if !application.may_host(1, i) {
                return f64::INFINITY;
            }
            upstream[i] + base.loads.kappa(problem, app, 1, i) + downstream[i]
        })
        .collect()
}

fn partition2_scores(
    base: &mut BaseDistances,
    problem: &Problem,
    app: usize,
    h1: NodeId,
) -> Vec<f64> {
    let application = &problem.apps[app];
    let upstream = stage_distance(base, application.stage_sizes[1], h1, Direction::From);
    let downstream = stage_distance(
        base,
        application.stage_sizes[2],
        application.dest,
        Direction::To,
    );
    (0..problem.node_count())
        .map(|i| {
            if !application.may_host(2, i) {
                return f64::INFINITY;
            }
            upstream[i] + base.loads.kappa(problem, app, 2, i) + downstream[i]
        })
        .collect()
}

/// Lowest finite score, ties to the lower node id.
pub fn argmin(scores: &[f64]) -> Option<NodeId> {
    let mut best: Option<NodeId> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Candidate scores per application, partition and node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// `scores[app][partition - 1][node]`.
    pub scores: Vec<[Vec<f64>; 2]>,
    /// Hosts selected from the table (partition 1 first, then partition 2
    /// scored against the new partition-1 host).
    pub proposed: Vec<Hosts>,
}

impl ScoreTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["app", "partition", "node", "score"])?;
        for (a, parts) in self.scores.iter().enumerate() {
            for (p, values) in parts.iter().enumerate() {
                for (i, s) in values.iter().enumerate() {
                    w.write_record([
                        a.to_string(),
                        (p + 1).to_string(),
                        i.to_string(),
                        s.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn score_app(
    base: &mut BaseDistances,
    problem: &Problem,
    app: usize,
    current: Hosts,
) -> Result<([Vec<f64>; 2], Hosts)> {
    let s1 = partition1_scores(base, problem, app, current.h2);
    let h1 = argmin(&s1).ok_or(Error::NoCandidate { app, partition: 1 })?;
    let s2 = partition2_scores(base, problem, app, h1);
    let h2 = argmin(&s2).ok_or(Error::NoCandidate { app, partition: 2 })?;
    Ok(([s1, s2], Hosts::new(h1, h2)))
}

/// Scores every candidate host of every application at the given operating
/// point.
pub fn score_partitions(
    problem: &Problem,
    traffic: &TrafficState,
    placement: &Placement,
) -> Result<ScoreTable> {
    let loads = link_and_node_marginals(problem, traffic);
    let mut base = BaseDistances::new(problem, &loads);
    let mut scores = Vec::with_capacity(problem.app_count());
    let mut proposed = Vec::with_capacity(problem.app_count());
    for app in 0..problem.app_count() {
        let (s, hosts) = score_app(&mut base, problem, app, placement.hosts(app))?;
        scores.push(s);
        proposed.push(hosts);
    }
    Ok(ScoreTable { scores, proposed })
}

/// Link weights `D'(F)` used to re-route stages whose endpoints moved.
fn congestion_weights(problem: &Problem, traffic: &TrafficState) -> Vec<f64> {
    problem
        .link_costs
        .iter()
        .zip(&traffic.link_load)
        .map(|(m, &x)| m.deriv_unchecked(x.max(0.0)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReassignOutcome {
    /// Applications whose hosts changed and were kept.
    pub accepted: Vec<usize>,
    /// Applications whose proposed move was reverted.
    pub rejected: Vec<usize>,
    pub objective: Objective,
}

/// Hosts per partition whose exact objective is evaluated during
/// reassignment.
pub const SHORTLIST: usize = 3;

/// Finite-score nodes in increasing score order (ties to the lower id),
/// truncated to `k`.
pub fn shortlist(scores: &[f64], k: usize) -> Vec<NodeId> {
    let mut nodes: Vec<NodeId> = (0..scores.len())
        .filter(|&i| scores[i].is_finite())
        .collect();
    nodes.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    nodes.truncate(k);
    nodes
}

/// Sequentially moves each application to better hosts.
///
/// Scores are recomputed from the live operating point before each
/// application, so earlier moves are visible to later ones. The candidates
/// are the [`SHORTLIST`] best partition-1 hosts, each paired with its best
/// partition-2 host or with the current one, and the best partition-2 hosts
/// for the current partition-1 host. Stages whose end points changed are
/// re-routed on shortest-path trees under the current link marginals, and the
/// candidate with the lowest weighted objective is kept if it strictly beats
/// the current one. Otherwise the application keeps its hosts and forwarding.
pub fn reassign_placements(
    problem: &Problem,
    placement: &mut Placement,
    policy: &mut ForwardingPolicy,
) -> Result<ReassignOutcome> {
    let mut traffic = compute_traffic(problem, placement, policy)?;
    let mut outcome = ReassignOutcome::default();
    for app in 0..problem.app_count() {
        let current = placement.hosts(app);
        let loads = link_and_node_marginals(problem, &traffic);
        let mut base = BaseDistances::new(problem, &loads);
        let mut candidates = Vec::new();
        let s1 = partition1_scores(&mut base, problem, app, current.h2);
        let firsts = shortlist(&s1, SHORTLIST);
        if firsts.is_empty() {
            return Err(Error::NoCandidate { app, partition: 1 });
        }
        for &h1 in &firsts {
            let s2 = partition2_scores(&mut base, problem, app, h1);
            let h2 = argmin(&s2).ok_or(Error::NoCandidate { app, partition: 2 })?;
            candidates.push(Hosts::new(h1, h2));
            candidates.push(Hosts::new(h1, current.h2));
        }
        let s2 = partition2_scores(&mut base, problem, app, current.h1);
        for h2 in shortlist(&s2, SHORTLIST) {
            candidates.push(Hosts::new(current.h1, h2));
        }
        let mut seen = Vec::with_capacity(candidates.len());
        candidates.retain(|h| {
            *h != current && !seen.contains(h) && {
                seen.push(*h);
                true
            }
        });
        if candidates.is_empty() {
            continue;
        }
        let weights = congestion_weights(problem, &traffic);
        let mut best: Option<(Placement, ForwardingPolicy, TrafficState)> = None;
        for proposed in candidates {
            let (trial_placement, trial_policy) =
                rerouted(problem, placement, policy, app, proposed, &weights)?;
            let trial = compute_traffic(problem, &trial_placement, &trial_policy)?;
            let incumbent = best
                .as_ref()
                .map_or(traffic.objective.weighted, |b| b.2.objective.weighted);
            if trial.objective.weighted < incumbent {
                best = Some((trial_placement, trial_policy, trial));
            }
        }
        match best {
            Some((p, f, t)) => {
                *placement = p;
                *policy = f;
                traffic = t;
                outcome.accepted.push(app);
            }
            None => outcome.rejected.push(app),
        }
    }
    outcome.objective = traffic.objective;
    Ok(outcome)
}

/// Copies of `placement` and `policy` with `app` moved to `proposed` and the
/// affected stages routed on shortest-path trees under `weights`.
fn rerouted(
    problem: &Problem,
    placement: &Placement,
    policy: &ForwardingPolicy,
    app: usize,
    proposed: Hosts,
    weights: &[f64],
) -> Result<(Placement, ForwardingPolicy)> {
    let current = placement.hosts(app);
    let mut trial_placement = placement.clone();
    trial_placement.set(app, proposed);
    let mut trial_policy = policy.clone();
    let mut stages = Vec::new();
    if proposed.h1 != current.h1 {
        stages.extend([0, 1]);
    }
    if proposed.h2 != current.h2 {
        stages.extend([1, 2]);
    }
    stages.dedup();
    for stage in stages {
        route_stage_on_tree(
            problem,
            &trial_placement,
            &mut trial_policy,
            app,
            stage,
            weights,
        )?;
    }
    Ok((trial_placement, trial_policy))
}

pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub placement: Placement,
    pub policy: ForwardingPolicy,
    pub objective: Objective,
    pub combinations: u128,
}

/// Exhaustive search over all joint (h1, h2) assignments, optimizing
/// forwarding for each with up to `rounds` forwarding rounds.
pub fn brute_force_placement(
    problem: &Problem,
    rounds: usize,
    params: &SweepParams,
) -> Result<OracleResult> {
    let n = problem.node_count() as u128;
    let apps = problem.app_count();
    let per_app = n * n;
    let combinations = (0..apps)
        .try_fold(1u128, |acc, _| acc.checked_mul(per_app))
        .unwrap_or(u128::MAX);
    if combinations > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            combinations,
            limit: ORACLE_LIMIT,
        });
    }
    let decode = |mut index: u128| -> Placement {
        let mut hosts = Vec::with_capacity(apps);
        for _ in 0..apps {
            let pair = (index % per_app) as usize;
            index /= per_app;
            let nn = problem.node_count();
            hosts.push(Hosts::new(pair / nn, pair % nn));
        }
        Placement::new(hosts)
    };
    let best = (0..combinations as u64)
        .into_par_iter()
        .filter_map(|index| {
            let placement = decode(index as u128);
            let admissible = placement
                .iter()
                .zip(&problem.apps)
                .all(|(h, app)| app.may_host(1, h.h1) && app.may_host(2, h.h2));
            if !admissible {
                return None;
            }
            let mut policy = init_forwarding(problem, &placement).ok()?;
            run_rounds(problem, &placement, &mut policy, params, rounds, 1e-13).ok()?;
            let objective = compute_traffic(problem, &placement, &policy)
                .ok()?
                .objective;
            Some((objective.weighted, index, placement, policy, objective))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let (_, _, placement, policy, objective) = best.ok_or(Error::NoCandidate {
        app: 0,
        partition: 1,
    })?;
    Ok(OracleResult {
        placement,
        policy,
        objective,
        combinations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{CostModel, CostWeights};
    use crate::flow::evaluate;
    use crate::topology::{Application, NetworkGraph};
    use approx::assert_relative_eq;

    /// Line 0-1-2 with linear link marginal 0.1 and compute marginal 0.2 per
    /// unit workload (after the default 0.5 weights).
    fn linear_line(app: Application) -> Problem {
        let g = NetworkGraph::from_undirected(vec![8.0; 3], &[(0, 1, 8.0), (1, 2, 8.0)]).unwrap();
        Problem::with_costs(
            g,
            vec![app],
            vec![CostModel::linear(0.2).unwrap(); 4],
            vec![CostModel::linear(0.4).unwrap(); 3],
            CostWeights::default(),
        )
        .unwrap()
    }

    fn line_app() -> Application {
        Application::new(0, 0, 2, 1.0, [2.0, 0.8, 0.3], [1.0, 1.0])
    }

    #[test]
    fn hand_scored_line() {
        let p = linear_line(line_app());
        let placement = Placement::new(vec![Hosts::new(1, 2)]);
        let policy = init_forwarding(&p, &placement).unwrap();
        let traffic = compute_traffic(&p, &placement, &policy).unwrap();
        let table = score_partitions(&p, &traffic, &placement).unwrap();
        let s1 = &table.scores[0][0];
        for (got, want) in s1.iter().zip([0.36, 0.48, 0.60]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        assert_eq!(table.proposed[0].h1, 0);
    }

    #[test]
    fn colocated_degenerate_score_is_kappa() {
        let app = Application::new(0, 1, 1, 1.0, [2.0, 0.8, 0.3], [1.0, 1.0]);
        let p = linear_line(app);
        let placement = Placement::new(vec![Hosts::new(1, 1)]);
        let policy = init_forwarding(&p, &placement).unwrap();
        let traffic = compute_traffic(&p, &placement, &policy).unwrap();
        let table = score_partitions(&p, &traffic, &placement).unwrap();
        assert_relative_eq!(table.scores[0][0][1], 0.2, max_relative = 1e-12);
    }

    #[test]
    fn allowlist_masks_candidates() {
        let mut app = line_app();
        app.host_allowlist[0] = Some([1, 2].into());
        let p = linear_line(app);
        let placement = Placement::new(vec![Hosts::new(1, 2)]);
        let policy = init_forwarding(&p, &placement).unwrap();
        let traffic = compute_traffic(&p, &placement, &policy).unwrap();
        let table = score_partitions(&p, &traffic, &placement).unwrap();
        assert!(table.scores[0][0][0].is_infinite());
        assert_eq!(table.proposed[0].h1, 1);
    }

    #[test]
    fn reassign_moves_to_source_then_settles() {
        let p = linear_line(line_app());
        let mut placement = Placement::new(vec![Hosts::new(1, 2)]);
        let mut policy = init_forwarding(&p, &placement).unwrap();
        let before = evaluate(&p, &placement, &policy).unwrap().weighted;
        let out = reassign_placements(&p, &mut placement, &mut policy).unwrap();
        assert_eq!(placement.hosts(0).h1, 0);
        assert_eq!(out.accepted, vec![0]);
        assert!(out.objective.weighted < before);
        let again = reassign_placements(&p, &mut placement, &mut policy).unwrap();
        assert!(again.accepted.is_empty());
    }

    #[test]
    fn oracle_counts_and_guards() {
        let p = linear_line(line_app());
        let r = brute_force_placement(&p, 10, &SweepParams::default()).unwrap();
        assert_eq!(r.combinations, 9);
        // colocating both partitions at the source: 0.2 + 0.2 + 0.3 * 0.1 * 2
        assert_relative_eq!(r.objective.weighted, 0.46, max_relative = 1e-12);
        assert_eq!(r.placement.hosts(0), Hosts::new(0, 0));

        let g = NetworkGraph::from_undirected(
            vec![8.0; 40],
            &(0..39).map(|i| (i, i + 1, 8.0)).collect::<Vec<_>>(),
        )
        .unwrap();
        let apps = (0..2)
            .map(|i| Application::new(i, 0, 1, 1.0, [2.0, 0.8, 0.3], [0.5, 1.0]))
            .collect();
        let big = Problem::new(g, apps, Default::default(), CostWeights::default()).unwrap();
        assert!(matches!(
            brute_force_placement(&big, 1, &SweepParams::default()),
            Err(Error::OracleTooLarge {
                combinations: 2_560_000,
                ..
            })
        ));
    }
}
