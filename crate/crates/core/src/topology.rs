//! Network graphs, inference applications and the four bundled evaluation
//! scenarios (IoT, mesh, small-world, GEANT).
//!
//! Everything here is a pure function of the [`ScenarioConfig`] and its seed:
//! the same configuration always yields bit-identical graphs and application
//! lists.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::CostKind;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type LinkId = usize;

const GEANT_ASSET: &str = include_str!("../data/geant.txt");

/// Role of a node in a hierarchical deployment. Purely descriptive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Iot,
    Edge,
    Cloud,
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub tail: NodeId,
    pub head: NodeId,
    /// Service rate in bits/sec.
    pub mu: f64,
}

/// Directed graph with per-link capacity and per-node compute capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    links: Vec<Link>,
    node_compute: Vec<f64>,
    node_tier: Vec<Tier>,
    /// Outgoing link ids per node, sorted by head id.
    out_links: Vec<Vec<LinkId>>,
    /// Incoming link ids per node, sorted by tail id.
    in_links: Vec<Vec<LinkId>>,
}

impl NetworkGraph {
    pub fn new(node_compute: Vec<f64>, links: Vec<Link>) -> Result<Self> {
        let tiers = vec![Tier::Generic; node_compute.len()];
        Self::with_tiers(node_compute, tiers, links)
    }

    pub fn with_tiers(
        node_compute: Vec<f64>,
        node_tier: Vec<Tier>,
        links: Vec<Link>,
    ) -> Result<Self> {
        let n = node_compute.len();
        if n == 0 {
            return Err(Error::Config("graph must have at least one node".into()));
        }
        if node_tier.len() != n {
            return Err(Error::Config(
                "tier list length differs from node count".into(),
            ));
        }
        if let Some(nu) = node_compute
            .iter()
            .find(|nu| !(nu.is_finite() && **nu >= 0.0))
        {
            return Err(Error::Config(format!(
                "node compute rate {nu} must be finite and >= 0"
            )));
        }
        let mut seen = BTreeSet::new();
        for link in &links {
            if link.tail >= n || link.head >= n {
                return Err(Error::Config(format!(
                    "link ({}, {}) references a node outside 0..{n}",
                    link.tail, link.head
                )));
            }
            if link.tail == link.head {
                return Err(Error::Config(format!("self-loop at node {}", link.tail)));
            }
            if !(link.mu.is_finite() && link.mu > 0.0) {
                return Err(Error::Config(format!(
                    "link ({}, {}) has non-positive capacity {}",
                    link.tail, link.head, link.mu
                )));
            }
            if !seen.insert((link.tail, link.head)) {
                return Err(Error::Config(format!(
                    "duplicate link ({}, {})",
                    link.tail, link.head
                )));
            }
        }
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for (id, link) in links.iter().enumerate() {
            out_links[link.tail].push(id);
            in_links[link.head].push(id);
        }
        for list in &mut out_links {
            list.sort_by_key(|&l| links[l].head);
        }
        for list in &mut in_links {
            list.sort_by_key(|&l| links[l].tail);
        }
        Ok(Self {
            links,
            node_compute,
            node_tier,
            out_links,
            in_links,
        })
    }

    /// Builds a graph from undirected edges, emitting both directions with the
    /// same capacity.
    pub fn from_undirected(
        node_compute: Vec<f64>,
        edges: &[(NodeId, NodeId, f64)],
    ) -> Result<Self> {
        let tiers = vec![Tier::Generic; node_compute.len()];
        Self::with_tiers(node_compute, tiers, bidirectional(edges))
    }

    pub fn node_count(&self) -> usize {
        self.node_compute.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id]
    }

    pub fn node_compute(&self) -> &[f64] {
        &self.node_compute
    }

    pub fn tier(&self, node: NodeId) -> Tier {
        self.node_tier[node]
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: NodeId) -> &[LinkId] {
        &self.in_links[node]
    }

    pub fn find_link(&self, tail: NodeId, head: NodeId) -> Option<LinkId> {
        self.out_links
            .get(tail)?
            .iter()
            .copied()
            .find(|&l| self.links[l].head == head)
    }

    pub fn out_degree(&self, node: NodeId) -> usize {
        self.out_links[node].len()
    }

    /// Nodes reachable from `start` following link directions.
    pub fn reachable_from(&self, start: NodeId) -> Vec<bool> {
        self.bfs(start, |n| {
            self.out_links[n]
                .iter()
                .map(|&l| self.links[l].head)
                .collect()
        })
    }

    /// Nodes that can reach `target` following link directions.
    pub fn reaching(&self, target: NodeId) -> Vec<bool> {
        self.bfs(target, |n| {
            self.in_links[n]
                .iter()
                .map(|&l| self.links[l].tail)
                .collect()
        })
    }

    fn bfs(&self, start: NodeId, next: impl Fn(NodeId) -> Vec<NodeId>) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(n) = queue.pop_front() {
            for m in next(n) {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.reachable_from(0).iter().all(|&r| r) && self.reaching(0).iter().all(|&r| r)
    }
}

fn bidirectional(edges: &[(NodeId, NodeId, f64)]) -> Vec<Link> {
    edges
        .iter()
        .flat_map(|&(a, b, mu)| {
            [
                Link {
                    tail: a,
                    head: b,
                    mu,
                },
                Link {
                    tail: b,
                    head: a,
                    mu,
                },
            ]
        })
        .collect()
}

/// Per-request computation workload of the two partitions.
#[derive(Debug, Clone, PartialEq)]
pub enum Workloads {
    Uniform([f64; 2]),
    PerNode(Vec<[f64; 2]>),
}

impl Workloads {
    /// Workload of partition `partition` (1 or 2) at `node`.
    pub fn get(&self, node: NodeId, partition: usize) -> f64 {
        debug_assert!(partition == 1 || partition == 2);
        match self {
            Workloads::Uniform(w) => w[partition - 1],
            Workloads::PerNode(table) => table[node][partition - 1],
        }
    }
}

/// One inference service.
#[derive(Debug, Clone, PartialEq)]
pub struct Application {
    pub id: usize,
    pub source: NodeId,
    pub dest: NodeId,
    /// Requests per second.
    pub rate: f64,
    /// Bits per request for raw input, intermediate feature and final output.
    pub stage_sizes: [f64; 3],
    pub workloads: Workloads,
    /// Optional admissible host set per partition.
    pub host_allowlist: [Option<BTreeSet<NodeId>>; 2],
}

impl Application {
    pub fn new(
        id: usize,
        source: NodeId,
        dest: NodeId,
        rate: f64,
        stage_sizes: [f64; 3],
        workloads: [f64; 2],
    ) -> Self {
        Self {
            id,
            source,
            dest,
            rate,
            stage_sizes,
            workloads: Workloads::Uniform(workloads),
            host_allowlist: [None, None],
        }
    }

    /// `partition` is 1 or 2.
    pub fn may_host(&self, partition: usize, node: NodeId) -> bool {
        self.host_allowlist[partition - 1]
            .as_ref()
            .is_none_or(|set| set.contains(&node))
    }

    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        let n = graph.node_count();
        if self.source >= n || self.dest >= n {
            return Err(Error::Config(format!(
                "application {}: endpoints ({}, {}) outside 0..{n}",
                self.id, self.source, self.dest
            )));
        }
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::Config(format!(
                "application {}: invalid rate {}",
                self.id, self.rate
            )));
        }
        if self
            .stage_sizes
            .iter()
            .any(|l| !(l.is_finite() && *l > 0.0))
        {
            return Err(Error::Config(format!(
                "application {}: stage sizes must be positive",
                self.id
            )));
        }
        for node in 0..n {
            for p in 1..=2 {
                let w = self.workloads.get(node, p);
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::Config(format!(
                        "application {}: workloads must be positive",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Iot,
    Mesh,
    #[serde(rename = "sw")]
    SmallWorld,
    Geant,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Iot,
        ScenarioKind::Mesh,
        ScenarioKind::SmallWorld,
        ScenarioKind::Geant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Iot => "iot",
            ScenarioKind::Mesh => "mesh",
            ScenarioKind::SmallWorld => "sw",
            ScenarioKind::Geant => "geant",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iot" => Ok(ScenarioKind::Iot),
            "mesh" => Ok(ScenarioKind::Mesh),
            "sw" | "small-world" | "smallworld" => Ok(ScenarioKind::SmallWorld),
            "geant" => Ok(ScenarioKind::Geant),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected iot, mesh, sw or geant)"
            ))),
        }
    }
}

/// Fractional heterogeneity spreads; each value is drawn uniformly from
/// `mean * (1 ± spread)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub mu: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            mu: 0.2,
            nu: 0.2,
            lambda: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSettings {
    pub kind: CostKind,
    pub rho: f64,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self {
            kind: CostKind::Mm1,
            rho: crate::cost::DEFAULT_RHO,
        }
    }
}

/// Solver knobs a scenario file may pin. `None` means "use the default".
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverOverrides {
    pub eta: Option<f64>,
    pub alpha0: Option<f64>,
    pub t_phi: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

/// Forwarding step size shipped with the named presets.
pub const PRESET_ALPHA0: f64 = 1.0;
/// Forwarding rounds per outer iteration shipped with the named presets.
pub const PRESET_T_PHI: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub app_count: usize,
    pub lambda_mean: f64,
    pub mu_mean: f64,
    pub nu_mean: f64,
    pub stage_sizes: [f64; 3],
    pub workloads: [f64; 2],
    pub jitter: Jitter,
    pub cost: CostSettings,
    pub solver: SolverOverrides,
}

pub const DEFAULT_SEED: u64 = 7;

impl ScenarioConfig {
    /// Table defaults for a named scenario.
    pub fn preset(kind: ScenarioKind) -> Self {
        let (app_count, mu, nu) = match kind {
            ScenarioKind::Iot => (20, 8.0, 8.0),
            ScenarioKind::Mesh => (30, 8.0, 8.0),
            ScenarioKind::SmallWorld => (40, 10.0, 10.0),
            ScenarioKind::Geant => (30, 10.0, 10.0),
        };
        Self {
            kind,
            seed: DEFAULT_SEED,
            app_count,
            lambda_mean: 3.0,
            mu_mean: mu,
            nu_mean: nu,
            stage_sizes: [2.0, 0.8, 0.3],
            workloads: [0.5, 1.0],
            jitter: Jitter::default(),
            cost: CostSettings::default(),
            // The library step size leaves a slow tail on these topologies;
            // larger, more frequent steps reach the tolerance well within the
            // outer iteration budget.
            solver: SolverOverrides {
                alpha0: Some(PRESET_ALPHA0),
                t_phi: Some(PRESET_T_PHI),
                ..SolverOverrides::default()
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_mean", self.lambda_mean),
            ("mu_mean", self.mu_mean),
            ("nu_mean", self.nu_mean),
            ("stage_sizes[0]", self.stage_sizes[0]),
            ("stage_sizes[1]", self.stage_sizes[1]),
            ("stage_sizes[2]", self.stage_sizes[2]),
            ("workloads[0]", self.workloads[0]),
            ("workloads[1]", self.workloads[1]),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        for (key, v) in [
            ("jitter.mu", self.jitter.mu),
            ("jitter.nu", self.jitter.nu),
            ("jitter.lambda", self.jitter.lambda),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{key} must lie in [0, 1), got {v}")));
            }
        }
        if self.app_count == 0 {
            return Err(Error::Config("app_count must be at least 1".into()));
        }
        if !(self.cost.rho > 0.0 && self.cost.rho < 1.0) {
            return Err(Error::Config(format!(
                "cost.rho must lie in (0, 1), got {}",
                self.cost.rho
            )));
        }
        if let Some(eta) = self.solver.eta {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Config(format!(
                    "tradeoff.eta must lie in [0, 1], got {eta}"
                )));
            }
        }
        if let Some(a) = self.solver.alpha0 {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!(
                    "forwarding.alpha0 must be positive, got {a}"
                )));
            }
        }
        if self.solver.t_phi == Some(0) {
            return Err(Error::Config("forwarding.t_phi must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fully built scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub graph: NetworkGraph,
    pub apps: Vec<Application>,
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let graph = match config.kind {
            ScenarioKind::Iot => build_iot(&config),
            ScenarioKind::Mesh => build_mesh(&config),
            ScenarioKind::SmallWorld => build_small_world(&config),
            ScenarioKind::Geant => build_geant(&config)?,
        };
        if !graph.is_strongly_connected() {
            return Err(Error::Config(format!(
                "{} graph is not strongly connected",
                config.kind
            )));
        }
        let apps = generate_applications(&graph, &config)?;
        Ok(Self {
            config,
            graph,
            apps,
        })
    }

    pub fn name(&self) -> &'static str {
        self.config.kind.name()
    }

    /// Multiplies every application's input rate by `factor`.
    pub fn scale_rates(&mut self, factor: f64) {
        for app in &mut self.apps {
            app.rate *= factor;
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const GRAPH_STREAM: u64 = 1;
const APP_STREAM: u64 = 2;

fn jittered(rng: &mut impl Rng, mean: f64, spread: f64) -> f64 {
    if spread == 0.0 {
        mean
    } else {
        mean * (1.0 + rng.gen_range(-spread..spread))
    }
}

/// Three-tier IoT/edge/cloud hierarchy: node 0 is the cloud, nodes 1..=4 are
/// edge servers in a ring, nodes 5..=16 are IoT devices (three per edge).
pub fn build_iot(config: &ScenarioConfig) -> NetworkGraph {
    const EDGES: usize = 4;
    const IOT_PER_EDGE: usize = 3;
    let mu = config.mu_mean;
    let nu = config.nu_mean;
    let cloud = 0;
    let edge_id = |e: usize| 1 + e;
    let iot_id = |e: usize, k: usize| 1 + EDGES + e * IOT_PER_EDGE + k;

    let mut compute = vec![4.0 * nu];
    let mut tiers = vec![Tier::Cloud];
    compute.extend(std::iter::repeat_n(nu, EDGES));
    tiers.extend(std::iter::repeat_n(Tier::Edge, EDGES));
    compute.extend(std::iter::repeat_n(0.25 * nu, EDGES * IOT_PER_EDGE));
    tiers.extend(std::iter::repeat_n(Tier::Iot, EDGES * IOT_PER_EDGE));

    let mut edges = Vec::new();
    for e in 0..EDGES {
        for k in 0..IOT_PER_EDGE {
            edges.push((iot_id(e, k), edge_id(e), 0.5 * mu));
        }
    }
    for e in 0..EDGES {
        edges.push((edge_id(e), edge_id((e + 1) % EDGES), mu));
    }
    for e in 0..EDGES {
        edges.push((edge_id(e), cloud, 1.5 * mu));
    }
    NetworkGraph::with_tiers(compute, tiers, bidirectional(&edges))
        .expect("IoT construction is well-formed")
}

fn jittered_graph(
    config: &ScenarioConfig,
    n: usize,
    undirected: &[(NodeId, NodeId)],
    rng: &mut ChaCha8Rng,
) -> NetworkGraph {
    let compute = (0..n)
        .map(|_| jittered(rng, config.nu_mean, config.jitter.nu))
        .collect();
    let edges: Vec<_> = undirected
        .iter()
        .map(|&(a, b)| (a, b, jittered(rng, config.mu_mean, config.jitter.mu)))
        .collect();
    NetworkGraph::from_undirected(compute, &edges).expect("generated edge list is well-formed")
}

pub const MESH_SIDE: usize = 5;

/// Regular 5x5 grid with 4-neighbour adjacency.
pub fn build_mesh(config: &ScenarioConfig) -> NetworkGraph {
    let side = MESH_SIDE;
    let id = |r: usize, c: usize| r * side + c;
    let mut undirected = Vec::new();
    for r in 0..side {
        for c in 0..side {
            if c + 1 < side {
                undirected.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < side {
                undirected.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    let mut rng = rng_for(config.seed, GRAPH_STREAM);
    jittered_graph(config, side * side, &undirected, &mut rng)
}

pub const SMALL_WORLD_NODES: usize = 30;
pub const SMALL_WORLD_K: usize = 4;
pub const SMALL_WORLD_REWIRE: f64 = 0.2;

/// Watts-Strogatz ring lattice (k nearest neighbours) with random rewiring.
/// Rewiring attempts that disconnect the graph are redrawn from the same
/// seeded stream.
pub fn build_small_world(config: &ScenarioConfig) -> NetworkGraph {
    let n = SMALL_WORLD_NODES;
    let mut rng = rng_for(config.seed, GRAPH_STREAM);
    for _attempt in 0..1000 {
        let undirected = watts_strogatz(n, SMALL_WORLD_K, SMALL_WORLD_REWIRE, &mut rng);
        let graph = jittered_graph(config, n, &undirected, &mut rng);
        if graph.is_strongly_connected() {
            return graph;
        }
    }
    panic!("could not draw a connected small-world graph in 1000 attempts");
}

fn watts_strogatz(n: usize, k: usize, p: f64, rng: &mut impl Rng) -> Vec<(NodeId, NodeId)> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    for offset in 1..=k / 2 {
        for i in 0..n {
            edges.push((i, (i + offset) % n));
        }
    }
    let mut present: BTreeSet<(NodeId, NodeId)> = edges.iter().map(|&(a, b)| key(a, b)).collect();
    for edge in &mut edges {
        if rng.gen::<f64>() >= p {
            continue;
        }
        let (a, b) = *edge;
        let candidates: Vec<NodeId> = (0..n)
            .filter(|&w| w != a && !present.contains(&key(a, w)))
            .collect();
        if let Some(&w) = candidates.choose(rng) {
            present.remove(&key(a, b));
            present.insert(key(a, w));
            *edge = (a, w);
        }
    }
    edges
}

pub fn build_geant(config: &ScenarioConfig) -> Result<NetworkGraph> {
    let (names, undirected) = parse_edge_asset(GEANT_ASSET)?;
    let mut rng = rng_for(config.seed, GRAPH_STREAM);
    Ok(jittered_graph(config, names.len(), &undirected, &mut rng))
}

/// Node names and undirected edges of a topology asset.
pub type EdgeAsset = (Vec<String>, Vec<(NodeId, NodeId)>);

/// Parses the `node <name>` / `edge <a> <b>` asset format into contiguous ids.
pub fn parse_edge_asset(text: &str) -> Result<EdgeAsset> {
    let mut names: Vec<String> = Vec::new();
    let mut edges = Vec::new();
    let lookup = |names: &[String], name: &str, line_no: usize| {
        names.iter().position(|n| n == name).ok_or_else(|| {
            Error::Config(format!("edge asset line {line_no}: unknown node '{name}'"))
        })
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["node", name] => {
                if names.iter().any(|n| n == name) {
                    return Err(Error::Config(format!(
                        "edge asset line {}: duplicate node '{name}'",
                        idx + 1
                    )));
                }
                names.push((*name).to_string());
            }
            ["edge", a, b] => {
                let a = lookup(&names, a, idx + 1)?;
                let b = lookup(&names, b, idx + 1)?;
                edges.push((a, b));
            }
            _ => {
                return Err(Error::Config(format!(
                    "edge asset line {}: cannot parse '{line}'",
                    idx + 1
                )))
            }
        }
    }
    Ok((names, edges))
}

/// Seeded application set. Sources are drawn from leaf nodes (IoT devices, or
/// every node of a flat topology); half of the applications return results to
/// their source.
pub fn generate_applications(
    graph: &NetworkGraph,
    config: &ScenarioConfig,
) -> Result<Vec<Application>> {
    if config.app_count == 0 {
        return Err(Error::Config("app_count must be at least 1".into()));
    }
    let pool: Vec<NodeId> = (0..graph.node_count())
        .filter(|&n| matches!(graph.tier(n), Tier::Iot | Tier::Generic))
        .collect();
    let pool = if pool.is_empty() {
        (0..graph.node_count()).collect()
    } else {
        pool
    };
    let mut rng = rng_for(config.seed, APP_STREAM);
    let mut apps = Vec::with_capacity(config.app_count);
    for id in 0..config.app_count {
        let source = *pool.choose(&mut rng).expect("pool is non-empty");
        let same = rng.gen_bool(0.5);
        let others: Vec<NodeId> = pool.iter().copied().filter(|&n| n != source).collect();
        let dest = if same || others.is_empty() {
            source
        } else {
            *others.choose(&mut rng).expect("non-empty")
        };
        let rate = jittered(&mut rng, config.lambda_mean, config.jitter.lambda);
        apps.push(Application::new(
            id,
            source,
            dest,
            rate,
            config.stage_sizes,
            config.workloads,
        ));
    }
    Ok(apps)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: String,
    seed: Option<u64>,
    app_count: Option<i64>,
    lambda_mean: Option<f64>,
    mu_mean: Option<f64>,
    nu_mean: Option<f64>,
    stage_sizes: Option<Vec<f64>>,
    workloads: Option<Vec<f64>>,
    jitter: Option<JitterFile>,
    cost: Option<CostFile>,
    tradeoff: Option<TradeoffFile>,
    forwarding: Option<ForwardingFile>,
    solver: Option<SolverFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct JitterFile {
    mu: Option<f64>,
    nu: Option<f64>,
    lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    kind: Option<String>,
    rho: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TradeoffFile {
    eta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardingFile {
    alpha0: Option<f64>,
    t_phi: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    max_iters: Option<usize>,
    tol: Option<f64>,
}

/// Parses a TOML scenario description. Only keys that are present override
/// the named preset.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid scenario file: {e}")))?;
    let mut config = ScenarioConfig::preset(file.scenario.parse()?);
    if let Some(seed) = file.seed {
        config.seed = seed;
    }
    if let Some(count) = file.app_count {
        if count <= 0 {
            return Err(Error::Config(format!(
                "app_count must be at least 1, got {count}"
            )));
        }
        config.app_count = count as usize;
    }
    if let Some(v) = file.lambda_mean {
        config.lambda_mean = v;
    }
    if let Some(v) = file.mu_mean {
        config.mu_mean = v;
    }
    if let Some(v) = file.nu_mean {
        config.nu_mean = v;
    }
    if let Some(sizes) = file.stage_sizes {
        config.stage_sizes = sizes.try_into().map_err(|v: Vec<f64>| {
            Error::Config(format!("stage_sizes needs 3 values, got {}", v.len()))
        })?;
    }
    if let Some(w) = file.workloads {
        config.workloads = w.try_into().map_err(|v: Vec<f64>| {
            Error::Config(format!("workloads needs 2 values, got {}", v.len()))
        })?;
    }
    if let Some(j) = file.jitter {
        config.jitter.mu = j.mu.unwrap_or(config.jitter.mu);
        config.jitter.nu = j.nu.unwrap_or(config.jitter.nu);
        config.jitter.lambda = j.lambda.unwrap_or(config.jitter.lambda);
    }
    if let Some(c) = file.cost {
        if let Some(kind) = c.kind {
            config.cost.kind = kind.parse()?;
        }
        config.cost.rho = c.rho.unwrap_or(config.cost.rho);
    }
    config.solver.eta = file.tradeoff.and_then(|t| t.eta);
    if let Some(f) = file.forwarding {
        config.solver.alpha0 = f.alpha0.or(config.solver.alpha0);
        config.solver.t_phi = f.t_phi.or(config.solver.t_phi);
    }
    if let Some(s) = file.solver {
        config.solver.max_iters = s.max_iters;
        config.solver.tol = s.tol;
    }
    config.validate()?;
    Ok(config)
}

/// Resolves a scenario by name (`iot`, `mesh`, `sw`, `geant`) or by path to a
/// TOML scenario file.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    let config = match name_or_path.parse::<ScenarioKind>() {
        Ok(kind) => ScenarioConfig::preset(kind),
        Err(_) if Path::new(name_or_path).exists() => {
            let text =
                std::fs::read_to_string(name_or_path).map_err(|source| Error::ScenarioFile {
                    path: name_or_path.into(),
                    source,
                })?;
            parse_scenario_config(&text)?
        }
        Err(e) => return Err(e),
    };
    Scenario::build(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undirected_count(g: &NetworkGraph) -> usize {
        g.links().iter().filter(|l| l.tail < l.head).count()
    }

    #[test]
    fn iot_has_three_tiers() {
        let g = build_iot(&ScenarioConfig::preset(ScenarioKind::Iot));
        assert_eq!(g.node_count(), 17);
        assert_eq!(g.link_count(), 2 * undirected_count(&g));
        assert_eq!(g.link_count(), 40);
        assert_eq!(g.node_compute()[0], 32.0);
        assert_eq!(g.tier(0), Tier::Cloud);
        let iot: Vec<_> = (0..17).filter(|&n| g.tier(n) == Tier::Iot).collect();
        assert_eq!(iot.len(), 12);
        assert!(iot.iter().all(|&n| g.node_compute()[n] == 2.0));
        assert_eq!((0..17).filter(|&n| g.tier(n) == Tier::Edge).count(), 4);
        // uplink, ring and cloud capacities
        let uplink = g.find_link(5, 1).unwrap();
        assert_eq!(g.link(uplink).mu, 4.0);
        assert_eq!(g.link(g.find_link(1, 2).unwrap()).mu, 8.0);
        assert_eq!(g.link(g.find_link(3, 0).unwrap()).mu, 12.0);
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn mesh_grid_structure() {
        let g = build_mesh(&ScenarioConfig::preset(ScenarioKind::Mesh));
        assert_eq!(g.node_count(), 25);
        assert_eq!(g.link_count(), 80);
        assert_eq!(g.out_degree(0), 2);
        assert_eq!(g.out_degree(12), 4);
        assert_eq!(g.out_degree(2), 3);
    }

    #[test]
    fn small_world_is_seeded() {
        let cfg = ScenarioConfig::preset(ScenarioKind::SmallWorld);
        let a = build_small_world(&cfg.clone().with_seed(1));
        let b = build_small_world(&cfg.clone().with_seed(1));
        let c = build_small_world(&cfg.with_seed(2));
        assert_eq!(a.node_count(), 30);
        assert_eq!(a, b);
        let ends = |g: &NetworkGraph| {
            g.links()
                .iter()
                .map(|l| (l.tail, l.head))
                .collect::<Vec<_>>()
        };
        assert_ne!(ends(&a), ends(&c));
        // ring lattice with k = 4 has n * k / 2 undirected edges; rewiring keeps the count
        assert_eq!(undirected_count(&a), 60);
    }

    #[test]
    fn geant_asset() {
        let g = build_geant(&ScenarioConfig::preset(ScenarioKind::Geant)).unwrap();
        assert_eq!(g.node_count(), 22);
        assert_eq!(g.link_count(), 72);
        assert!(g.links().iter().all(|l| l.tail < 22 && l.head < 22));
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn malformed_asset_is_rejected() {
        assert!(parse_edge_asset("node A\nedge A B\n").is_err());
        assert!(parse_edge_asset("node A\nnode A\n").is_err());
        assert!(parse_edge_asset("vertex A\n").is_err());
    }

    #[test]
    fn graph_invariants_enforced() {
        let link = |tail, head, mu| Link { tail, head, mu };
        assert!(NetworkGraph::new(vec![1.0; 2], vec![link(0, 0, 1.0)]).is_err());
        assert!(NetworkGraph::new(vec![1.0; 2], vec![link(0, 1, 1.0), link(0, 1, 2.0)]).is_err());
        assert!(NetworkGraph::new(vec![1.0; 2], vec![link(0, 1, 0.0)]).is_err());
        assert!(NetworkGraph::new(vec![1.0; 2], vec![link(0, 2, 1.0)]).is_err());
        assert!(NetworkGraph::new(vec![1.0; 2], vec![link(0, 1, 1.0)]).is_ok());
    }

    #[test]
    fn table_cardinalities() {
        for (kind, v, a) in [
            (ScenarioKind::Iot, 17, 20),
            (ScenarioKind::Mesh, 25, 30),
            (ScenarioKind::SmallWorld, 30, 40),
            (ScenarioKind::Geant, 22, 30),
        ] {
            let s = Scenario::build(ScenarioConfig::preset(kind)).unwrap();
            assert_eq!((s.graph.node_count(), s.apps.len()), (v, a), "{kind}");
            assert!(s.apps.iter().all(|app| app.stage_sizes == [2.0, 0.8, 0.3]));
        }
    }

    #[test]
    fn applications_are_seeded_and_jittered() {
        let cfg = ScenarioConfig::preset(ScenarioKind::Iot);
        let g = build_iot(&cfg);
        let a = generate_applications(&g, &cfg).unwrap();
        let b = generate_applications(&g, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        for app in &a {
            assert_eq!(g.tier(app.source), Tier::Iot);
            assert!(app.rate >= 3.0 * 0.7 && app.rate <= 3.0 * 1.3);
            assert_eq!(app.workloads.get(0, 1), 0.5);
            assert_eq!(app.workloads.get(0, 2), 1.0);
        }
        let mut zero = cfg.clone();
        zero.app_count = 0;
        assert!(generate_applications(&g, &zero).is_err());
    }

    #[test]
    fn named_presets() {
        let iot = load_scenario("iot").unwrap();
        assert_eq!(iot.config.lambda_mean, 3.0);
        assert_eq!(iot.config.mu_mean, 8.0);
        let geant = load_scenario("geant").unwrap();
        assert_eq!((geant.config.mu_mean, geant.config.nu_mean), (10.0, 10.0));
        assert!(matches!(load_scenario("ring"), Err(Error::Config(_))));
    }

    #[test]
    fn file_overrides() {
        let cfg = parse_scenario_config(
            r#"
            scenario = "mesh"
            lambda_mean = 6.0
            seed = 11
            [jitter]
            lambda = 0.0
            [cost]
            kind = "linear"
            [tradeoff]
            eta = 0.25
            "#,
        )
        .unwrap();
        assert_eq!(cfg.lambda_mean, 6.0);
        assert_eq!(cfg.mu_mean, 8.0);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.cost.kind, CostKind::Linear);
        assert_eq!(cfg.solver.eta, Some(0.25));
        let s = Scenario::build(cfg).unwrap();
        assert!(s.apps.iter().all(|a| a.rate == 6.0));
    }

    #[test]
    fn file_schema_violations() {
        assert!(parse_scenario_config("scenario = \"iot\"\napp_count = 0\n").is_err());
        assert!(parse_scenario_config("scenario = \"iot\"\nstage_sizes = [1.0, 2.0]\n").is_err());
        assert!(parse_scenario_config("scenario = \"iot\"\nbogus = 1\n").is_err());
        assert!(parse_scenario_config("scenario = \"torus\"\n").is_err());
        assert!(parse_scenario_config("scenario = \"iot\"\n[jitter]\nmu = 1.5\n").is_err());
        assert!(parse_scenario_config("seed = 3\n").is_err());
    }
}
