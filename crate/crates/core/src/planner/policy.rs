//! Policy representations: layered finite-state controllers and explicit
//! history-indexed decision rules.

use serde::{Deserialize, Serialize};

use crate::beliefs::{DecisionRule, JointHistory};
use crate::conversion::PredictionRule;
use crate::error::{Error, Result};
use crate::model::DecPomdpModel;

/// A (possibly partial) joint policy: agent `i`'s action at step `t` as a
/// function of its own part of the joint history.
pub trait PastPolicy {
    fn agents(&self) -> usize;

    fn action_at(&self, t: usize, agent: usize, history: &JointHistory) -> Option<usize>;
}

/// The decision rule `δ_t` of a past policy.
pub struct RuleAt<'a, P: ?Sized> {
    policy: &'a P,
    t: usize,
}

impl<'a, P: PastPolicy + ?Sized> RuleAt<'a, P> {
    pub fn new(policy: &'a P, t: usize) -> Self {
        RuleAt { policy, t }
    }
}

impl<P: PastPolicy + ?Sized> DecisionRule for RuleAt<'_, P> {
    fn action(&self, agent: usize, history: &JointHistory) -> Option<usize> {
        self.policy.action_at(self.t, agent, history)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FscNode {
    pub action: usize,
    /// Next node in the following layer, indexed by the individual observation.
    pub edges: Vec<usize>,
}

/// Finite-state controller with one layer of nodes per time step.
///
/// Layer 0 holds the single start node; the last layer has no edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredFsc {
    layers: Vec<Vec<FscNode>>,
}

impl LayeredFsc {
    pub fn new(layers: Vec<Vec<FscNode>>) -> Result<Self> {
        let fsc = LayeredFsc { layers };
        fsc.check()?;
        Ok(fsc)
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Structure("controller has no layers".into()));
        }
        if self.layers[0].len() != 1 {
            return Err(Error::Structure(format!(
                "layer 0 has {} nodes, expected one start node",
                self.layers[0].len()
            )));
        }
        let last = self.layers.len() - 1;
        for (t, layer) in self.layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::Structure(format!("layer {t} is empty")));
            }
            for (k, node) in layer.iter().enumerate() {
                if t == last {
                    if !node.edges.is_empty() {
                        return Err(Error::Structure(format!("final layer node {k} has outgoing edges")));
                    }
                    continue;
                }
                let next = self.layers[t + 1].len();
                if let Some(&bad) = node.edges.iter().find(|&&e| e >= next) {
                    return Err(Error::Structure(format!(
                        "edge from layer {t} node {k} targets node {bad}, layer {} has {next}",
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Vec<FscNode>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn node(&self, t: usize, k: usize) -> &FscNode {
        &self.layers[t][k]
    }

    pub(crate) fn node_mut(&mut self, t: usize, k: usize) -> &mut FscNode {
        &mut self.layers[t][k]
    }

    /// Node reached at layer `t` by following `observations` (length `t`) from the start.
    pub fn node_after(&self, observations: impl IntoIterator<Item = usize>) -> Option<usize> {
        let mut node = 0;
        for (t, z) in observations.into_iter().enumerate() {
            node = *self.layers.get(t)?.get(node)?.edges.get(z)?;
        }
        Some(node)
    }
}

/// One controller per agent, plus an optional final prediction rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointPolicy {
    controllers: Vec<LayeredFsc>,
    prediction: Option<PredictionRule>,
}

impl JointPolicy {
    pub fn new(controllers: Vec<LayeredFsc>) -> Result<Self> {
        let layers = controllers.first().ok_or_else(|| Error::Structure("no controllers".into()))?.num_layers();
        if controllers.iter().any(|c| c.num_layers() != layers) {
            return Err(Error::Structure("controllers have different horizons".into()));
        }
        Ok(JointPolicy { controllers, prediction: None })
    }

    pub fn with_prediction(mut self, rule: Option<PredictionRule>) -> Self {
        self.prediction = rule;
        self
    }

    pub fn controllers(&self) -> &[LayeredFsc] {
        &self.controllers
    }

    pub(crate) fn controller_mut(&mut self, agent: usize) -> &mut LayeredFsc {
        &mut self.controllers[agent]
    }

    pub fn prediction(&self) -> Option<&PredictionRule> {
        self.prediction.as_ref()
    }

    pub fn num_layers(&self) -> usize {
        self.controllers[0].num_layers()
    }

    /// Checks the controllers against the model's spaces. With
    /// `prediction_actions = Some(k)` an extra final layer of prediction nodes
    /// (actions `< k`) is expected.
    pub fn check_against(&self, model: &DecPomdpModel, prediction_actions: Option<usize>) -> Result<()> {
        let h = model.horizon();
        let expected_layers = h + usize::from(prediction_actions.is_some());
        if self.controllers.len() != model.num_agents() {
            return Err(Error::Structure(format!(
                "{} controllers for {} agents",
                self.controllers.len(),
                model.num_agents()
            )));
        }
        if self.num_layers() != expected_layers {
            return Err(Error::Structure(format!(
                "controllers have {} layers, expected {expected_layers}",
                self.num_layers()
            )));
        }
        for (agent, fsc) in self.controllers.iter().enumerate() {
            for (t, layer) in fsc.layers.iter().enumerate() {
                let actions = if t < h { model.action_size(agent, t) } else { prediction_actions.unwrap_or(0) };
                let edges = if t + 1 < expected_layers { model.stage(t).observations().sizes()[agent] } else { 0 };
                for (k, node) in layer.iter().enumerate() {
                    if node.action >= actions {
                        return Err(Error::Structure(format!(
                            "agent {agent} layer {t} node {k}: action {} out of {actions}",
                            node.action
                        )));
                    }
                    if node.edges.len() != edges {
                        return Err(Error::Structure(format!(
                            "agent {agent} layer {t} node {k}: {} edges, expected {edges}",
                            node.edges.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl PastPolicy for JointPolicy {
    fn agents(&self) -> usize {
        self.controllers.len()
    }

    fn action_at(&self, t: usize, agent: usize, history: &JointHistory) -> Option<usize> {
        let fsc = self.controllers.get(agent)?;
        let node = fsc.node_after(history.individual(agent).take(t))?;
        Some(fsc.layers.get(t)?.get(node)?.action)
    }
}

/// Deterministic policy with one action per individual observation history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryPolicy {
    /// `observation_sizes[agent][k]` is `|Z_{agent, k+1}|`.
    observation_sizes: Vec<Vec<usize>>,
    /// `rules[agent][t][history index]`.
    rules: Vec<Vec<Vec<usize>>>,
}

impl HistoryPolicy {
    /// All-zero policy over the first `steps` decision steps of `model`.
    pub fn zeros(model: &DecPomdpModel, steps: usize) -> Self {
        let n = model.num_agents();
        let observation_sizes: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..steps.saturating_sub(1)).map(|t| model.stage(t).observations().sizes()[i]).collect())
            .collect();
        let rules = (0..n)
            .map(|i| (0..steps).map(|t| vec![0; observation_sizes[i][..t].iter().product::<usize>()]).collect())
            .collect();
        HistoryPolicy { observation_sizes, rules }
    }

    pub fn steps(&self) -> usize {
        self.rules.first().map_or(0, Vec::len)
    }

    /// Number of individual histories of `agent` at step `t`.
    pub fn histories(&self, agent: usize, t: usize) -> usize {
        self.rules[agent][t].len()
    }

    pub fn rules(&self) -> &[Vec<Vec<usize>>] {
        &self.rules
    }

    pub fn set(&mut self, agent: usize, t: usize, history_index: usize, action: usize) {
        self.rules[agent][t][history_index] = action;
    }

    pub fn get(&self, agent: usize, t: usize, history_index: usize) -> usize {
        self.rules[agent][t][history_index]
    }

    /// Mixed-radix index of an individual history (first observation most significant).
    pub fn history_index(&self, agent: usize, observations: impl IntoIterator<Item = usize>) -> Option<usize> {
        let sizes = &self.observation_sizes[agent];
        let mut index = 0;
        for (k, z) in observations.into_iter().enumerate() {
            let size = *sizes.get(k)?;
            if z >= size {
                return None;
            }
            index = index * size + z;
        }
        Some(index)
    }

    /// Equivalent tree-shaped controller: one node per individual history.
    pub fn to_joint_policy(&self) -> Result<JointPolicy> {
        let controllers = self
            .rules
            .iter()
            .enumerate()
            .map(|(agent, per_t)| {
                let steps = per_t.len();
                let layers = per_t
                    .iter()
                    .enumerate()
                    .map(|(t, actions)| {
                        actions
                            .iter()
                            .enumerate()
                            .map(|(idx, &action)| {
                                let edges = if t + 1 < steps {
                                    let z = self.observation_sizes[agent][t];
                                    (0..z).map(|o| idx * z + o).collect()
                                } else {
                                    Vec::new()
                                };
                                FscNode { action, edges }
                            })
                            .collect()
                    })
                    .collect();
                LayeredFsc::new(layers)
            })
            .collect::<Result<Vec<_>>>()?;
        JointPolicy::new(controllers)
    }
}

impl PastPolicy for HistoryPolicy {
    fn agents(&self) -> usize {
        self.rules.len()
    }

    fn action_at(&self, t: usize, agent: usize, history: &JointHistory) -> Option<usize> {
        let idx = self.history_index(agent, history.individual(agent).take(t))?;
        self.rules.get(agent)?.get(t)?.get(idx).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(action: usize, edges: &[usize]) -> FscNode {
        FscNode { action, edges: edges.to_vec() }
    }

    #[test]
    fn structural_checks() {
        assert!(LayeredFsc::new(vec![vec![node(0, &[])]]).is_ok());
        assert!(LayeredFsc::new(vec![vec![node(0, &[]), node(1, &[])]]).is_err());
        let dangling = vec![vec![node(0, &[0, 2])], vec![node(0, &[]), node(1, &[])]];
        assert!(matches!(LayeredFsc::new(dangling), Err(Error::Structure(_))));
        let trailing = vec![vec![node(0, &[0])], vec![node(0, &[0])]];
        assert!(LayeredFsc::new(trailing).is_err());
    }

    #[test]
    fn controller_follows_edges() {
        let fsc = LayeredFsc::new(vec![
            vec![node(2, &[0, 1])],
            vec![node(0, &[1, 1]), node(1, &[0, 1])],
            vec![node(5, &[]), node(6, &[])],
        ])
        .unwrap();
        let policy = JointPolicy::new(vec![fsc]).unwrap();
        let h = JointHistory::from_steps(1, &[vec![1], vec![0]]);
        assert_eq!(policy.action_at(0, 0, &h), Some(2));
        assert_eq!(policy.action_at(1, 0, &h), Some(1));
        assert_eq!(policy.action_at(2, 0, &h), Some(5));
    }

    #[test]
    fn history_policy_tree_matches_controller() {
        let mut stage = crate::model::Stage::new(1, vec![3, 2], vec![2, 3]);
        stage.set_outcomes(0, 0, vec![]);
        let m = DecPomdpModel::time_homogeneous(3, vec![1.0], stage);
        let mut hp = HistoryPolicy::zeros(&m, 3);
        assert_eq!(hp.histories(0, 2), 4);
        assert_eq!(hp.histories(1, 2), 9);
        hp.set(0, 2, 3, 2);
        hp.set(1, 1, 2, 1);
        let jp = hp.to_joint_policy().unwrap();
        jp.check_against(&m, None).unwrap();
        for z in [[1, 1], [0, 1], [1, 0]] {
            let h = JointHistory::from_steps(2, &[vec![z[0], 2], vec![z[1], 0]]);
            for t in 0..3 {
                for agent in 0..2 {
                    assert_eq!(hp.action_at(t, agent, &h), jp.action_at(t, agent, &h));
                }
            }
        }
    }
}
