//! Finite-horizon Dec-POMDP models.
//!
//! A model is a sequence of [`Stage`]s, one per decision step `t = 0..h-1`.
//! Stage `t` owns the individual action spaces `A_{i,t}`, the observation
//! spaces `Z_{i,t+1}` perceived after acting, the joint dynamics
//! `T(z_{t+1}, s_{t+1} | s_t, a_t)` and the stage reward `R_t(s_t, a_t)`.
//! Time-homogeneous models share a single stage behind an [`Arc`].
//!
//! All quantities are dense integer indices. Joint actions and joint
//! observations are encoded in mixed radix with agent 0 varying slowest.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Tolerance for stochasticity checks.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Cartesian product of per-agent index sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointSpace {
    sizes: Vec<usize>,
    len: usize,
}

impl JointSpace {
    pub fn new(sizes: Vec<usize>) -> Self {
        let len = sizes.iter().product();
        JointSpace { sizes, len }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn agents(&self) -> usize {
        self.sizes.len()
    }

    /// Number of joint elements.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Joint index of a per-agent tuple, or `None` if any part is out of range.
    pub fn encode(&self, parts: &[usize]) -> Option<usize> {
        if parts.len() != self.sizes.len() {
            return None;
        }
        let mut index = 0;
        for (&part, &size) in parts.iter().zip(&self.sizes) {
            if part >= size {
                return None;
            }
            index = index * size + part;
        }
        Some(index)
    }

    /// Writes the per-agent tuple of `index` into `out`.
    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        debug_assert!(index < self.len);
        for (slot, &size) in out.iter_mut().zip(&self.sizes).rev() {
            *slot = index % size;
            index /= size;
        }
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.sizes.len()];
        self.decode_into(index, &mut out);
        out
    }

    /// All tuples in lexicographic order (agent 0 slowest).
    pub fn tuples(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len).map(move |i| self.decode(i))
    }
}

/// One successor of a `(state, joint action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next_state: usize,
    /// Joint observation index in the stage's observation space.
    pub observation: usize,
    pub prob: f64,
}

/// Spaces, dynamics and rewards of one decision step.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    num_states: usize,
    actions: JointSpace,
    observations: JointSpace,
    /// Indexed by `state * |A| + joint_action`; sorted by (next state, observation).
    dynamics: Vec<Vec<Outcome>>,
    rewards: Vec<f64>,
}

impl Stage {
    /// A stage with empty dynamics and zero rewards.
    pub fn new(num_states: usize, action_sizes: Vec<usize>, observation_sizes: Vec<usize>) -> Self {
        let actions = JointSpace::new(action_sizes);
        let observations = JointSpace::new(observation_sizes);
        let cells = num_states * actions.len();
        Stage { num_states, actions, observations, dynamics: vec![Vec::new(); cells], rewards: vec![0.0; cells] }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &JointSpace {
        &self.actions
    }

    pub fn observations(&self) -> &JointSpace {
        &self.observations
    }

    fn cell(&self, state: usize, joint_action: usize) -> usize {
        state * self.actions.len() + joint_action
    }

    /// Successors with positive probability.
    pub fn outcomes(&self, state: usize, joint_action: usize) -> &[Outcome] {
        &self.dynamics[self.cell(state, joint_action)]
    }

    /// Replaces the successor distribution of `(state, joint_action)`.
    ///
    /// Duplicate `(next_state, observation)` pairs are merged and exact zeros dropped.
    pub fn set_outcomes(&mut self, state: usize, joint_action: usize, mut outcomes: Vec<Outcome>) {
        outcomes.sort_by_key(|o| (o.next_state, o.observation));
        let mut merged: Vec<Outcome> = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match merged.last_mut() {
                Some(last) if last.next_state == o.next_state && last.observation == o.observation => {
                    last.prob += o.prob
                }
                _ => merged.push(o),
            }
        }
        merged.retain(|o| o.prob != 0.0);
        let cell = self.cell(state, joint_action);
        self.dynamics[cell] = merged;
    }

    /// Probability `T(z', s' | s, a)`.
    pub fn probability(&self, state: usize, joint_action: usize, next_state: usize, observation: usize) -> f64 {
        self.outcomes(state, joint_action)
            .iter()
            .filter(|o| o.next_state == next_state && o.observation == observation)
            .map(|o| o.prob)
            .sum()
    }

    pub fn reward(&self, state: usize, joint_action: usize) -> f64 {
        self.rewards[self.cell(state, joint_action)]
    }

    pub fn set_reward(&mut self, state: usize, joint_action: usize, reward: f64) {
        let cell = self.cell(state, joint_action);
        self.rewards[cell] = reward;
    }

    /// Sets `T(z', s' | s, a) = P(s' | s, a) O(z' | a, s')` for one `(s, a)`.
    pub fn set_factored(&mut self, state: usize, joint_action: usize, transition: &[f64], observation: &[Vec<f64>]) {
        let mut outcomes = Vec::new();
        for (next_state, &p) in transition.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (z, &q) in observation[next_state].iter().enumerate() {
                if q != 0.0 {
                    outcomes.push(Outcome { next_state, observation: z, prob: p * q });
                }
            }
        }
        self.set_outcomes(state, joint_action, outcomes);
    }
}

/// Optional human-readable names for a time-homogeneous model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Labels {
    pub agents: Vec<String>,
    pub states: Vec<String>,
    /// Per agent.
    pub actions: Vec<Vec<String>>,
    /// Per agent.
    pub observations: Vec<Vec<String>>,
}

/// A finite-horizon Dec-POMDP `<h, I, S, b0, A, Z, T, R>`.
///
/// Construction does not validate; call [`DecPomdpModel::validate`] or
/// [`DecPomdpModel::checked`] before relying on stochasticity.
#[derive(Debug, Clone, PartialEq)]
pub struct DecPomdpModel {
    num_agents: usize,
    num_states: usize,
    initial_belief: Vec<f64>,
    stages: Vec<Arc<Stage>>,
    labels: Option<Labels>,
}

/// Kind of joint element to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Action,
    Observation,
}

/// Where a validation problem was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub time: usize,
    pub state: usize,
    pub joint_action: Vec<usize>,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, s={}, a={:?})", self.time, self.state, self.joint_action)
    }
}

/// A single well-formedness violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub message: String,
    pub location: Option<Location>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Some(loc) => write!(f, "{} at {}", self.message, loc),
            None => f.write_str(&self.message),
        }
    }
}

impl DecPomdpModel {
    /// Builds a model from per-time stages. Stage `t` governs step `t`.
    pub fn new(num_agents: usize, num_states: usize, initial_belief: Vec<f64>, stages: Vec<Arc<Stage>>) -> Self {
        DecPomdpModel { num_agents, num_states, initial_belief, stages, labels: None }
    }

    /// A model whose every step shares `stage`.
    pub fn time_homogeneous(horizon: usize, initial_belief: Vec<f64>, stage: Stage) -> Self {
        let num_agents = stage.actions.agents();
        let num_states = stage.num_states;
        let stage = Arc::new(stage);
        let stages = (0..horizon).map(|_| Arc::clone(&stage)).collect();
        DecPomdpModel::new(num_agents, num_states, initial_belief, stages)
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = Some(labels);
        self
    }

    /// Validates and returns the model, or an error listing every violation.
    pub fn checked(self) -> Result<Self> {
        let report = self.validate();
        if report.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial_belief(&self) -> &[f64] {
        &self.initial_belief
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// Stage governing step `t` (actions at `t`, observations at `t+1`).
    pub fn stage(&self, t: usize) -> &Stage {
        &self.stages[t]
    }

    pub fn stages(&self) -> &[Arc<Stage>] {
        &self.stages
    }

    /// True when every step shares one stage table.
    pub fn is_time_homogeneous(&self) -> bool {
        self.stages.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1]) || w[0] == w[1])
    }

    /// Same dynamics with a different horizon. Only defined for time-homogeneous models.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !self.is_time_homogeneous() {
            return Err(Error::InvalidArgument("horizon override needs a time-homogeneous model".into()));
        }
        let stage = Arc::clone(&self.stages[0]);
        let mut model = self.clone();
        model.stages = (0..horizon).map(|_| Arc::clone(&stage)).collect();
        Ok(model)
    }

    /// Individual action-space size `|A_{i,t}|`.
    pub fn action_size(&self, agent: usize, t: usize) -> usize {
        self.stages[t].actions.sizes()[agent]
    }

    /// Individual observation-space size `|Z_{i,t}|` for `1 <= t <= h`.
    pub fn observation_size(&self, agent: usize, t: usize) -> usize {
        self.stages[t - 1].observations.sizes()[agent]
    }

    /// Lists every well-formedness violation; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut report = Vec::new();
        let mut push = |message: String, location: Option<Location>| report.push(Violation { message, location });

        if self.stages.is_empty() {
            push("horizon must be at least 1".into(), None);
        }
        if self.num_agents == 0 {
            push("model needs at least one agent".into(), None);
        }
        if self.num_states == 0 {
            push("model needs at least one state".into(), None);
        }
        if self.initial_belief.len() != self.num_states {
            push(
                format!("initial belief has {} entries for {} states", self.initial_belief.len(), self.num_states),
                None,
            );
        }
        if self.initial_belief.iter().any(|p| !p.is_finite() || *p < 0.0) {
            push("initial belief has a negative or non-finite entry".into(), None);
        }
        let sum: f64 = self.initial_belief.iter().sum();
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            push(format!("initial belief sums to {sum}"), None);
        }

        for (t, stage) in self.stages.iter().enumerate() {
            if stage.num_states != self.num_states {
                push(format!("stage {t} is defined over {} states", stage.num_states), None);
                continue;
            }
            for (kind, space) in [("action", &stage.actions), ("observation", &stage.observations)] {
                if space.agents() != self.num_agents {
                    push(
                        format!("stage {t} has {} {kind} spaces for {} agents", space.agents(), self.num_agents),
                        None,
                    );
                }
                if space.sizes().contains(&0) {
                    push(format!("stage {t} has an empty individual {kind} space"), None);
                }
            }
            let cells = stage.num_states * stage.actions.len();
            if stage.dynamics.len() != cells || stage.rewards.len() != cells {
                push(format!("stage {t} tables do not cover the joint action space"), None);
                continue;
            }
            for s in 0..stage.num_states {
                for ja in 0..stage.actions.len() {
                    let location = || Some(Location { time: t, state: s, joint_action: stage.actions.decode(ja) });
                    let mut row = 0.0;
                    for o in stage.outcomes(s, ja) {
                        if o.next_state >= self.num_states {
                            push(format!("successor state {} out of range", o.next_state), location());
                        }
                        if o.observation >= stage.observations.len() {
                            push(format!("joint observation {} out of range", o.observation), location());
                        }
                        if !o.prob.is_finite() || o.prob < 0.0 {
                            push(format!("invalid probability {}", o.prob), location());
                        }
                        row += o.prob;
                    }
                    if (row - 1.0).abs() > PROB_TOLERANCE {
                        push(format!("dynamics row sums to {row}"), location());
                    }
                    if !stage.reward(s, ja).is_finite() {
                        push("non-finite reward".into(), location());
                    }
                }
            }
        }
        report
    }

    /// Joint actions at `t < h` or joint observations at `1 <= t <= h`, in
    /// lexicographic order with agent 0 slowest.
    pub fn enumerate_joint(&self, t: usize, kind: JointKind) -> Result<Vec<Vec<usize>>> {
        let h = self.horizon();
        let space = match kind {
            JointKind::Action if t < h => self.stages[t].actions(),
            JointKind::Observation if t >= 1 && t <= h => self.stages[t - 1].observations(),
            JointKind::Action => return Err(Error::TimeOutOfRange(format!("no action at time t={t} (horizon {h})"))),
            JointKind::Observation => {
                return Err(Error::TimeOutOfRange(format!("no observation at time t={t} (horizon {h})")))
            }
        };
        Ok(space.tuples().collect())
    }
}
