//! Bayesian filtering and plan-time sufficient statistics.
//!
//! A [`PlanTimeStatistic`] `σ_t` is the joint distribution over the current
//! state and the joint observation sequence reached under a fixed past joint
//! policy. It is stored sparsely: only sequences with positive mass are kept,
//! ordered lexicographically so that every sum is taken in a fixed order.

use std::collections::BTreeMap;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::model::{DecPomdpModel, PROB_TOLERANCE};

/// Probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Checked constructor: non-negative entries summing to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("belief over zero states".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("belief entries must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::InvalidArgument(format!("belief sums to {sum}")));
        }
        Ok(Belief(probs))
    }

    /// Normalizes a non-negative vector with positive mass.
    pub fn normalized(mut weights: Vec<f64>) -> Option<(Self, f64)> {
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= mass);
        Some((Belief(weights), mass))
    }

    pub fn uniform(num_states: usize) -> Self {
        Belief(vec![1.0 / num_states as f64; num_states])
    }

    pub fn point(num_states: usize, state: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[state] = 1.0;
        Belief(probs)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Belief {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Joint observation sequence `z⃗_t`, stored step-major: the `n` individual
/// observations of step 1, then those of step 2, and so on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointHistory {
    agents: usize,
    flat: Vec<usize>,
}

impl JointHistory {
    pub fn empty(agents: usize) -> Self {
        JointHistory { agents, flat: Vec::new() }
    }

    /// From per-step joint observation tuples.
    pub fn from_steps(agents: usize, steps: &[Vec<usize>]) -> Self {
        let mut history = JointHistory::empty(agents);
        for step in steps {
            history.push(step);
        }
        history
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Number of steps `t`.
    pub fn len(&self) -> usize {
        self.flat.len() / self.agents
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Joint observation at step `k` (0-based, i.e. `z_{k+1}`).
    pub fn step(&self, k: usize) -> &[usize] {
        &self.flat[k * self.agents..(k + 1) * self.agents]
    }

    /// Individual sequence `z⃗_{i,t}`.
    pub fn individual(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.flat.iter().skip(agent).step_by(self.agents).copied()
    }

    pub fn individual_vec(&self, agent: usize) -> Vec<usize> {
        self.individual(agent).collect()
    }

    /// Sequences of every agent except `agent`, step-major.
    pub fn others(&self, agent: usize) -> Vec<usize> {
        self.flat.iter().enumerate().filter(|(k, _)| k % self.agents != agent).map(|(_, &z)| z).collect()
    }

    pub fn push(&mut self, joint_observation: &[usize]) {
        debug_assert_eq!(joint_observation.len(), self.agents);
        self.flat.extend_from_slice(joint_observation);
    }

    pub fn extended(&self, joint_observation: &[usize]) -> Self {
        let mut next = self.clone();
        next.push(joint_observation);
        next
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.flat
    }
}

/// A joint decision rule `δ_t`: each agent's action from its own part of the history.
pub trait DecisionRule {
    fn action(&self, agent: usize, history: &JointHistory) -> Option<usize>;
}

impl<F> DecisionRule for F
where
    F: Fn(usize, &JointHistory) -> Option<usize>,
{
    fn action(&self, agent: usize, history: &JointHistory) -> Option<usize> {
        self(agent, history)
    }
}

/// Per-agent actions for a joint history, as an index in the stage's joint action space.
pub(crate) fn joint_action_of(
    model: &DecPomdpModel,
    t: usize,
    rule: &(impl DecisionRule + ?Sized),
    history: &JointHistory,
    buf: &mut Vec<usize>,
) -> Result<usize> {
    buf.clear();
    for agent in 0..model.num_agents() {
        let a = rule.action(agent, history).ok_or_else(|| Error::UndefinedDecision {
            time: t,
            agent,
            history: history.individual_vec(agent),
        })?;
        buf.push(a);
    }
    model.stage(t).actions().encode(buf).ok_or_else(|| Error::UndefinedDecision {
        time: t,
        agent: 0,
        history: history.as_flat().to_vec(),
    })
}

/// One Bayes filter step: `b'(s') ∝ Σ_s T(z, s' | s, a) b(s)`.
///
/// Returns the posterior and the likelihood `P(z | b, a)`.
pub fn belief_update(
    model: &DecPomdpModel,
    t: usize,
    belief: &[f64],
    joint_action: &[usize],
    joint_observation: &[usize],
) -> Result<(Belief, f64)> {
    if t >= model.horizon() {
        return Err(Error::TimeOutOfRange(format!("no transition at t={t}")));
    }
    let stage = model.stage(t);
    let ja = stage
        .actions()
        .encode(joint_action)
        .ok_or_else(|| Error::InvalidArgument(format!("joint action {joint_action:?} out of range")))?;
    let jz = stage
        .observations()
        .encode(joint_observation)
        .ok_or_else(|| Error::InvalidArgument(format!("joint observation {joint_observation:?} out of range")))?;
    if belief.len() != model.num_states() {
        return Err(Error::DimensionMismatch { expected: model.num_states(), found: belief.len() });
    }
    let mut next = vec![0.0; model.num_states()];
    for (s, &p) in belief.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for o in stage.outcomes(s, ja) {
            if o.observation == jz {
                next[o.next_state] += o.prob * p;
            }
        }
    }
    Belief::normalized(next).ok_or(Error::ZeroLikelihood)
}

/// Plan-time sufficient statistic `σ_t(s, z⃗_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTimeStatistic {
    time: usize,
    num_states: usize,
    agents: usize,
    entries: BTreeMap<JointHistory, Vec<f64>>,
}

impl PlanTimeStatistic {
    /// `σ_0 = b0`.
    pub fn initial(model: &DecPomdpModel) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(JointHistory::empty(model.num_agents()), model.initial_belief().to_vec());
        PlanTimeStatistic { time: 0, num_states: model.num_states(), agents: model.num_agents(), entries }
    }

    /// Builds a statistic from explicit entries. Zero-mass sequences are dropped;
    /// the total mass must be one.
    pub fn from_entries(
        time: usize,
        num_states: usize,
        agents: usize,
        entries: impl IntoIterator<Item = (JointHistory, Vec<f64>)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (history, dist) in entries {
            if history.agents() != agents || history.len() != time {
                return Err(Error::InvalidArgument(format!(
                    "sequence {:?} does not have {time} steps for {agents} agents",
                    history.as_flat()
                )));
            }
            if dist.len() != num_states {
                return Err(Error::DimensionMismatch { expected: num_states, found: dist.len() });
            }
            if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument("statistic entries must be non-negative".into()));
            }
            if dist.iter().any(|&p| p > 0.0) {
                map.insert(history, dist);
            }
        }
        let stat = PlanTimeStatistic { time, num_states, agents, entries: map };
        let mass = stat.total_mass();
        if (mass - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::InvalidArgument(format!("statistic mass is {mass}")));
        }
        Ok(stat)
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Number of positive-mass sequences.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(z⃗, σ(·, z⃗))` in lexicographic order of `z⃗`.
    pub fn iter(&self) -> impl Iterator<Item = (&JointHistory, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn get(&self, history: &JointHistory) -> Option<&[f64]> {
        self.entries.get(history).map(Vec::as_slice)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().flat_map(|v| v.iter()).sum()
    }

    /// `σ(z⃗) = Σ_s σ(s, z⃗)`; zero for unseen sequences.
    pub fn marginal(&self, history: &JointHistory) -> f64 {
        self.get(history).map_or(0.0, |v| v.iter().sum())
    }

    /// Unnormalized state weights `Σ_{z⃗_{-i}} σ(s, z⃗_i, z⃗_{-i})` for each
    /// individual sequence of `agent`.
    pub fn individual_weights(&self, agent: usize) -> BTreeMap<Vec<usize>, Vec<f64>> {
        let mut out: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for (history, dist) in &self.entries {
            let acc = out.entry(history.individual_vec(agent)).or_insert_with(|| vec![0.0; self.num_states]);
            acc.iter_mut().zip(dist).for_each(|(a, p)| *a += p);
        }
        out
    }

    /// Largest absolute entrywise difference to `other`, counting absent entries as zero.
    pub fn max_abs_diff(&self, other: &PlanTimeStatistic) -> f64 {
        let zeros = vec![0.0; self.num_states.max(other.num_states)];
        let mut worst: f64 = 0.0;
        for (k, v) in &self.entries {
            let w = other.entries.get(k).unwrap_or(&zeros);
            for (a, b) in v.iter().zip(w) {
                worst = worst.max((a - b).abs());
            }
        }
        for (k, w) in &other.entries {
            if !self.entries.contains_key(k) {
                worst = w.iter().fold(worst, |m, b| m.max(b.abs()));
            }
        }
        worst
    }
}

/// Extends the statistic by one joint decision rule:
/// `σ_{t+1}(s', (z⃗, z')) = Σ_s T(z', s' | s, δ(z⃗)) σ_t(s, z⃗)`.
pub fn statistic_update(
    model: &DecPomdpModel,
    sigma: &PlanTimeStatistic,
    rule: &(impl DecisionRule + ?Sized),
) -> Result<PlanTimeStatistic> {
    let t = sigma.time;
    if t >= model.horizon() {
        return Err(Error::TimeOutOfRange(format!("statistic at t={t} cannot be extended")));
    }
    let stage = model.stage(t);
    let num_states = model.num_states();
    let mut entries = BTreeMap::new();
    let mut actions = Vec::with_capacity(model.num_agents());
    let mut branch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut z = vec![0; model.num_agents()];
    for (history, dist) in &sigma.entries {
        let ja = joint_action_of(model, t, rule, history, &mut actions)?;
        branch.clear();
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for o in stage.outcomes(s, ja) {
                let acc = branch.entry(o.observation).or_insert_with(|| vec![0.0; num_states]);
                acc[o.next_state] += o.prob * mass;
            }
        }
        for (&jz, next) in branch.iter_mut() {
            if next.iter().all(|&p| p == 0.0) {
                continue;
            }
            stage.observations().decode_into(jz, &mut z);
            entries.insert(history.extended(&z), std::mem::take(next));
        }
    }
    Ok(PlanTimeStatistic { time: t + 1, num_states, agents: sigma.agents, entries })
}

/// `σ_t(· | z⃗)` and `σ_t(z⃗)`.
pub fn condition(sigma: &PlanTimeStatistic, history: &JointHistory) -> Result<(Belief, f64)> {
    if history.len() != sigma.time {
        return Err(Error::InvalidArgument(format!(
            "sequence has {} steps, statistic is at t={}",
            history.len(),
            sigma.time
        )));
    }
    let dist = sigma.get(history).ok_or(Error::ZeroMarginal)?;
    Belief::normalized(dist.to_vec()).ok_or(Error::ZeroMarginal)
}

/// Expected immediate reward `Σ_{z⃗,s} σ(s, z⃗) R_t(s, δ(z⃗))`.
pub fn expected_stage_reward(
    model: &DecPomdpModel,
    sigma: &PlanTimeStatistic,
    rule: &(impl DecisionRule + ?Sized),
) -> Result<f64> {
    let t = sigma.time;
    if t >= model.horizon() {
        return Err(Error::TimeOutOfRange(format!("no stage reward at t={t}")));
    }
    let stage = model.stage(t);
    let mut actions = Vec::with_capacity(model.num_agents());
    let mut total = 0.0;
    for (history, dist) in &sigma.entries {
        let ja = joint_action_of(model, t, rule, history, &mut actions)?;
        for (s, &mass) in dist.iter().enumerate() {
            total += mass * stage.reward(s, ja);
        }
    }
    Ok(total)
}
