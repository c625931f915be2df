//! Policy-graph improvement on layered controllers.
//!
//! Each pass computes the occupancy of (state, joint controller node) per
//! layer under the incumbent policy, then walks the layers backwards and
//! re-optimizes the action and outgoing edges of every node against the
//! value-to-go of the layers after it, holding the other agents' controllers
//! fixed. On a converted problem the controllers carry one extra layer of
//! prediction nodes whose reward is the averaged hyperplane value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::evaluate::{evaluate_exact, rollout, FinalReward, Prediction};
use super::policy::{FscNode, JointPolicy, LayeredFsc};
use crate::conversion::optimal_prediction_rule;
use crate::error::{Error, Result};
use crate::model::{DecPomdpModel, JointSpace};
use crate::rewards::AlphaSet;

/// Score improvements smaller than this keep the incumbent.
const IMPROVEMENT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy)]
pub enum PlanningTarget<'a> {
    /// A plain Dec-POMDP; the controllers have `h` layers.
    Standard(&'a DecPomdpModel),
    /// `M+` built implicitly from `<M, Γ>`; the controllers have `h + 1` layers.
    Converted { model: &'a DecPomdpModel, gamma: &'a AlphaSet },
}

impl<'a> PlanningTarget<'a> {
    pub fn model(&self) -> &'a DecPomdpModel {
        match *self {
            PlanningTarget::Standard(m) | PlanningTarget::Converted { model: m, .. } => m,
        }
    }

    pub fn gamma(&self) -> Option<&'a AlphaSet> {
        match *self {
            PlanningTarget::Standard(_) => None,
            PlanningTarget::Converted { gamma, .. } => Some(gamma),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.model().horizon() + usize::from(self.gamma().is_some())
    }

    /// Final reward used to score candidate policies: `φ*` on converted problems.
    pub fn final_reward(&self) -> FinalReward<'a> {
        match self.gamma() {
            None => FinalReward::Zero,
            Some(gamma) => FinalReward::Decentralized(gamma, Prediction::Optimal),
        }
    }

    fn action_size(&self, agent: usize, layer: usize) -> usize {
        let model = self.model();
        if layer < model.horizon() {
            model.action_size(agent, layer)
        } else {
            self.gamma().map_or(0, AlphaSet::len)
        }
    }

    fn edge_count(&self, agent: usize, layer: usize) -> usize {
        if layer + 1 < self.num_layers() {
            self.model().stage(layer).observations().sizes()[agent]
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    /// Controller nodes per layer (after the single start node).
    pub width: usize,
    pub iterations: usize,
    /// Per-node probability of a random action and random edges.
    pub restart_probability: f64,
    pub seed: u64,
    /// Largest (state × joint node) table per layer handled exactly; above it
    /// the occupancy is estimated from rollouts.
    pub node_budget: usize,
    pub rollout_samples: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            width: 2,
            iterations: 20,
            restart_probability: 0.1,
            seed: 0,
            node_budget: 100_000,
            rollout_samples: 10_000,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidArgument("controller width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.restart_probability) {
            return Err(Error::InvalidArgument(format!(
                "restart probability {} outside [0, 1]",
                self.restart_probability
            )));
        }
        if self.rollout_samples == 0 {
            return Err(Error::InvalidArgument("rollout samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Controllers with uniformly random actions and edges.
pub fn random_policy<R: Rng + ?Sized>(target: &PlanningTarget<'_>, width: usize, rng: &mut R) -> Result<JointPolicy> {
    let layers = target.num_layers();
    let controllers = (0..target.model().num_agents())
        .map(|agent| {
            let fsc_layers = (0..layers)
                .map(|l| {
                    let nodes = if l == 0 { 1 } else { width };
                    let next = if l + 1 < layers { width } else { 0 };
                    (0..nodes)
                        .map(|_| random_node(target.action_size(agent, l), target.edge_count(agent, l), next, rng))
                        .collect()
                })
                .collect();
            LayeredFsc::new(fsc_layers)
        })
        .collect::<Result<Vec<_>>>()?;
    JointPolicy::new(controllers)
}

fn random_node<R: Rng + ?Sized>(actions: usize, edges: usize, next_width: usize, rng: &mut R) -> FscNode {
    FscNode { action: rng.gen_range(0..actions), edges: (0..edges).map(|_| rng.gen_range(0..next_width)).collect() }
}

/// Joint controller nodes of every layer, agent 0 most significant.
fn node_spaces(policy: &JointPolicy) -> Vec<JointSpace> {
    (0..policy.num_layers())
        .map(|l| JointSpace::new(policy.controllers().iter().map(|c| c.layers()[l].len()).collect()))
        .collect()
}

/// `P_l(s, q)` for every layer, stored as `s * |Q_l| + q`.
fn occupancy<R: Rng + ?Sized>(
    target: &PlanningTarget<'_>,
    policy: &JointPolicy,
    spaces: &[JointSpace],
    params: &PlannerParams,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let model = target.model();
    let num_states = model.num_states();
    let exact = spaces.iter().all(|q| num_states.saturating_mul(q.len()) <= params.node_budget);
    let mut occ: Vec<Vec<f64>> = spaces.iter().map(|q| vec![0.0; num_states * q.len()]).collect();
    let n = model.num_agents();
    let mut nodes = vec![0; n];
    let mut actions = vec![0; n];
    let mut z = vec![0; n];
    if exact {
        occ[0][..num_states].copy_from_slice(model.initial_belief());
        for l in 0..spaces.len() - 1 {
            let stage = model.stage(l);
            let (head, tail) = occ.split_at_mut(l + 1);
            let (current, next) = (&head[l], &mut tail[0]);
            let width = spaces[l].len();
            for s in 0..num_states {
                for q in 0..width {
                    let mass = current[s * width + q];
                    if mass == 0.0 {
                        continue;
                    }
                    spaces[l].decode_into(q, &mut nodes);
                    for (agent, a) in actions.iter_mut().enumerate() {
                        *a = policy.controllers()[agent].node(l, nodes[agent]).action;
                    }
                    let ja = stage.actions().encode(&actions).expect("checked controller");
                    for o in stage.outcomes(s, ja) {
                        stage.observations().decode_into(o.observation, &mut z);
                        let q_next = successor(policy, l, &nodes, &z, &spaces[l + 1]);
                        next[o.next_state * spaces[l + 1].len() + q_next] += mass * o.prob;
                    }
                }
            }
        }
        return Ok(occ);
    }
    let weight = 1.0 / params.rollout_samples as f64;
    for _ in 0..params.rollout_samples {
        let traj = rollout(model, policy, rng)?;
        nodes.iter_mut().for_each(|k| *k = 0);
        for l in 0..spaces.len() {
            let q = spaces[l].encode(&nodes).expect("node in range");
            occ[l][traj.states[l] * spaces[l].len() + q] += weight;
            if l + 1 < spaces.len() {
                for (agent, k) in nodes.iter_mut().enumerate() {
                    *k = policy.controllers()[agent].node(l, *k).edges[traj.observations[l][agent]];
                }
            }
        }
    }
    Ok(occ)
}

fn successor(policy: &JointPolicy, layer: usize, nodes: &[usize], z: &[usize], next_space: &JointSpace) -> usize {
    let mut index = 0;
    for (agent, (&k, &zi)) in nodes.iter().zip(z).enumerate() {
        let target = policy.controllers()[agent].node(layer, k).edges[zi];
        index = index * next_space.sizes()[agent] + target;
    }
    index
}

/// `V_l(s, q)` of the current policy for one layer, given `V_{l+1}`.
fn layer_values(
    target: &PlanningTarget<'_>,
    policy: &JointPolicy,
    spaces: &[JointSpace],
    layer: usize,
    next_values: Option<&[f64]>,
) -> Vec<f64> {
    let model = target.model();
    let n = model.num_agents();
    let num_states = model.num_states();
    let width = spaces[layer].len();
    let mut values = vec![0.0; num_states * width];
    let mut nodes = vec![0; n];
    let mut actions = vec![0; n];
    let mut z = vec![0; n];
    for q in 0..width {
        spaces[layer].decode_into(q, &mut nodes);
        for (agent, a) in actions.iter_mut().enumerate() {
            *a = policy.controllers()[agent].node(layer, nodes[agent]).action;
        }
        if layer == model.horizon() {
            let gamma = target.gamma().expect("prediction layer only on converted targets");
            for s in 0..num_states {
                values[s * width + q] = actions.iter().map(|&k| gamma.vector(k)[s]).sum::<f64>() / n as f64;
            }
            continue;
        }
        let stage = model.stage(layer);
        let ja = stage.actions().encode(&actions).expect("checked controller");
        for s in 0..num_states {
            let mut v = stage.reward(s, ja);
            if let Some(next) = next_values {
                let next_width = spaces[layer + 1].len();
                for o in stage.outcomes(s, ja) {
                    stage.observations().decode_into(o.observation, &mut z);
                    let q_next = successor(policy, layer, &nodes, &z, &spaces[layer + 1]);
                    v += o.prob * next[o.next_state * next_width + q_next];
                }
            }
            values[s * width + q] = v;
        }
    }
    values
}

/// One backward pass of node-wise improvement (with random restarts).
pub fn improve_once<R: Rng + ?Sized>(
    target: &PlanningTarget<'_>,
    policy: &JointPolicy,
    params: &PlannerParams,
    rng: &mut R,
) -> Result<JointPolicy> {
    params.validate()?;
    let model = target.model();
    policy.check_against(model, target.gamma().map(AlphaSet::len))?;
    let spaces = node_spaces(policy);
    let occ = occupancy(target, policy, &spaces, params, rng)?;
    let mut policy = policy.clone();
    let n = model.num_agents();
    let num_states = model.num_states();
    let num_layers = spaces.len();
    let mut next_values: Option<Vec<f64>> = None;
    let mut nodes = vec![0; n];
    let mut actions = vec![0; n];
    let mut z = vec![0; n];
    for layer in (0..num_layers).rev() {
        let width = spaces[layer].len();
        let prediction_layer = layer == model.horizon();
        for agent in 0..n {
            let layer_width = spaces[layer].sizes()[agent];
            let num_actions = target.action_size(agent, layer);
            let num_edges = target.edge_count(agent, layer);
            let next_width = if layer + 1 < num_layers { spaces[layer + 1].sizes()[agent] } else { 0 };
            for k in 0..layer_width {
                if rng.gen_bool(params.restart_probability) {
                    *policy.controller_mut(agent).node_mut(layer, k) =
                        random_node(num_actions, num_edges, next_width, rng);
                    continue;
                }
                // immediate[a] and continuation[a][z_i][k'] accumulated over the node's occupancy
                let mut immediate = vec![0.0; num_actions];
                let mut continuation = vec![vec![vec![0.0; next_width]; num_edges]; num_actions];
                let mut reached = false;
                for q in 0..width {
                    spaces[layer].decode_into(q, &mut nodes);
                    if nodes[agent] != k {
                        continue;
                    }
                    for (j, a) in actions.iter_mut().enumerate() {
                        *a = policy.controllers()[j].node(layer, nodes[j]).action;
                    }
                    for s in 0..num_states {
                        let mass = occ[layer][s * width + q];
                        if mass == 0.0 {
                            continue;
                        }
                        reached = true;
                        for a in 0..num_actions {
                            actions[agent] = a;
                            if prediction_layer {
                                let gamma = target.gamma().expect("converted target");
                                let avg = actions.iter().map(|&p| gamma.vector(p)[s]).sum::<f64>() / n as f64;
                                immediate[a] += mass * avg;
                                continue;
                            }
                            let stage = model.stage(layer);
                            let ja = stage.actions().encode(&actions).expect("action in range");
                            immediate[a] += mass * stage.reward(s, ja);
                            let Some(next) = next_values.as_deref() else { continue };
                            let next_space = &spaces[layer + 1];
                            for o in stage.outcomes(s, ja) {
                                stage.observations().decode_into(o.observation, &mut z);
                                let zi = z[agent];
                                let mut q_next = successor(&policy, layer, &nodes, &z, next_space);
                                // swap this agent's successor for each candidate k'
                                let stride: usize = next_space.sizes()[agent + 1..].iter().product();
                                let own = (q_next / stride) % next_width;
                                q_next -= own * stride;
                                for (kk, slot) in continuation[a][zi].iter_mut().enumerate() {
                                    *slot +=
                                        mass * o.prob * next[o.next_state * next_space.len() + q_next + kk * stride];
                                }
                            }
                        }
                        actions[agent] = policy.controllers()[agent].node(layer, k).action;
                    }
                }
                if !reached {
                    continue;
                }
                let incumbent = policy.controllers()[agent].node(layer, k).clone();
                let score = |a: usize, edges: &[usize]| -> f64 {
                    immediate[a] + edges.iter().enumerate().map(|(zi, &e)| continuation[a][zi][e]).sum::<f64>()
                };
                let incumbent_score = score(incumbent.action, &incumbent.edges);
                let mut best = (incumbent_score, incumbent.clone());
                for a in 0..num_actions {
                    let edges: Vec<usize> = (0..num_edges)
                        .map(|zi| {
                            let row = &continuation[a][zi];
                            let mut pick = if a == incumbent.action { incumbent.edges[zi] } else { 0 };
                            for (kk, &v) in row.iter().enumerate() {
                                if v > row[pick] + IMPROVEMENT_TOLERANCE {
                                    pick = kk;
                                }
                            }
                            pick
                        })
                        .collect();
                    let candidate = score(a, &edges);
                    if candidate > best.0 + IMPROVEMENT_TOLERANCE {
                        best = (candidate, FscNode { action: a, edges });
                    }
                }
                *policy.controller_mut(agent).node_mut(layer, k) = best.1;
            }
        }
        next_values = Some(layer_values(target, &policy, &spaces, layer, next_values.as_deref()));
    }
    Ok(policy)
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    /// Best policy seen; on converted targets it carries `φ*` as its prediction rule.
    pub policy: JointPolicy,
    pub value: f64,
    /// Value of the initial policy followed by the value after each improvement pass.
    pub values: Vec<f64>,
}

/// Random initial controllers followed by `iterations` improvement passes,
/// keeping the best policy under exact evaluation.
pub fn plan(target: &PlanningTarget<'_>, params: &PlannerParams) -> Result<PlanResult> {
    params.validate()?;
    let model = target.model();
    let final_reward = target.final_reward();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut policy = random_policy(target, params.width, &mut rng)?;
    let mut best_value = evaluate_exact(model, &policy, &final_reward)?.value;
    let mut best = policy.clone();
    let mut values = vec![best_value];
    for _ in 0..params.iterations {
        policy = improve_once(target, &policy, params, &mut rng)?;
        let value = evaluate_exact(model, &policy, &final_reward)?.value;
        values.push(value);
        if value > best_value {
            best_value = value;
            best = policy.clone();
        }
    }
    if let Some(gamma) = target.gamma() {
        let sigma = evaluate_exact(model, &best, &FinalReward::Zero)?.statistic;
        let rule = optimal_prediction_rule(&sigma, gamma)?;
        best = best.with_prediction(Some(rule));
    }
    Ok(PlanResult { policy: best, value: best_value, values })
}
