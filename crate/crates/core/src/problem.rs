use crate::cost::{CostModel, CostWeights};
use crate::error::{Error, Result};
use crate::topology::{Application, CostSettings, NetworkGraph, Scenario};

/// A network, its applications and the cost models attached to every link and
/// node. Immutable once built; solvers only read it.
#[derive(Debug, Clone)]
pub struct Problem {
    pub graph: NetworkGraph,
    pub apps: Vec<Application>,
    pub link_costs: Vec<CostModel>,
    pub node_costs: Vec<CostModel>,
    pub weights: CostWeights,
}

impl Problem {
    pub fn new(
        graph: NetworkGraph,
        apps: Vec<Application>,
        cost: CostSettings,
        weights: CostWeights,
    ) -> Result<Self> {
        let link_costs = graph
            .links()
            .iter()
            .map(|l| CostModel::for_capacity(cost.kind, l.mu, cost.rho))
            .collect::<Result<Vec<_>>>()?;
        let node_costs = graph
            .node_compute()
            .iter()
            .map(|&nu| CostModel::for_capacity(cost.kind, nu, cost.rho))
            .collect::<Result<Vec<_>>>()?;
        Self::with_costs(graph, apps, link_costs, node_costs, weights)
    }

    pub fn with_costs(
        graph: NetworkGraph,
        apps: Vec<Application>,
        link_costs: Vec<CostModel>,
        node_costs: Vec<CostModel>,
        weights: CostWeights,
    ) -> Result<Self> {
        if link_costs.len() != graph.link_count() || node_costs.len() != graph.node_count() {
            return Err(Error::Config(
                "one cost model is required per link and per node".into(),
            ));
        }
        for app in &apps {
            app.validate(&graph)?;
        }
        Ok(Self {
            graph,
            apps,
            link_costs,
            node_costs,
            weights,
        })
    }

    pub fn from_scenario(scenario: &Scenario, weights: CostWeights) -> Result<Self> {
        Self::new(
            scenario.graph.clone(),
            scenario.apps.clone(),
            scenario.config.cost,
            weights,
        )
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn app_count(&self) -> usize {
        self.apps.len()
    }

    /// Copy of the problem with every application rate multiplied by `factor`.
    pub fn with_rate_scale(&self, factor: f64) -> Self {
        let mut scaled = self.clone();
        for app in &mut scaled.apps {
            app.rate *= factor;
        }
        scaled
    }

    pub fn with_weights(&self, weights: CostWeights) -> Self {
        let mut copy = self.clone();
        copy.weights = weights;
        copy
    }
}
