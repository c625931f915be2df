//! Exact evaluation over plan-time statistics, rollouts and Monte Carlo estimates.

use std::collections::BTreeMap;

use rand::Rng;

use super::policy::{PastPolicy, RuleAt};
use crate::beliefs::{belief_update, expected_stage_reward, statistic_update, JointHistory, PlanTimeStatistic};
use crate::conversion::{expected_decentralized_reward, optimal_prediction_rule, PredictionRule};
use crate::error::{Error, Result};
use crate::model::DecPomdpModel;
use crate::rewards::{expected_centralized_reward, expected_true_final_reward, rho_value, AlphaSet, ConvexReward};

/// Exact evaluation refuses statistics with more (sequence × state) entries than this.
pub const EXACT_ENTRY_LIMIT: f64 = 1e7;

/// Source of the individual prediction actions at the final step.
#[derive(Clone, Copy)]
pub enum Prediction<'a> {
    /// `φ*` computed from `σ_h`.
    Optimal,
    Rule(&'a PredictionRule),
    /// The action of the node each controller reaches at layer `h`.
    Controller,
}

/// Final-step reward used when evaluating a policy on a horizon-`h` model.
#[derive(Clone, Copy)]
pub enum FinalReward<'a> {
    Zero,
    /// `ρ̂(σ_h)` of the Dec-ρPOMDP `<M, Γ>`.
    Centralized(&'a AlphaSet),
    /// `R̂_h(σ_h, φ)` of the converted problem `M+`.
    Decentralized(&'a AlphaSet, Prediction<'a>),
    /// `f̂(σ_h)` with the true convex reward.
    True(&'a dyn ConvexReward),
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub stage_rewards: Vec<f64>,
    pub final_reward: f64,
    pub statistic: PlanTimeStatistic,
}

/// Rolls `σ_t` forward under `policy`, summing expected stage rewards, then adds the final term.
pub fn evaluate_exact<P: PastPolicy + ?Sized>(
    model: &DecPomdpModel,
    policy: &P,
    final_reward: &FinalReward<'_>,
) -> Result<Evaluation> {
    let (stage_rewards, sigma) = roll_statistic(model, policy)?;
    let final_value = final_term(model, policy, &sigma, final_reward)?;
    let value = stage_rewards.iter().sum::<f64>() + final_value;
    Ok(Evaluation { value, stage_rewards, final_reward: final_value, statistic: sigma })
}

/// Stage rewards and `σ_h` of `policy`.
pub fn roll_statistic<P: PastPolicy + ?Sized>(
    model: &DecPomdpModel,
    policy: &P,
) -> Result<(Vec<f64>, PlanTimeStatistic)> {
    if policy.agents() != model.num_agents() {
        return Err(Error::Structure(format!(
            "policy has {} agents, model has {}",
            policy.agents(),
            model.num_agents()
        )));
    }
    let mut sigma = PlanTimeStatistic::initial(model);
    let mut rewards = Vec::with_capacity(model.horizon());
    for t in 0..model.horizon() {
        let rule = RuleAt::new(policy, t);
        rewards.push(expected_stage_reward(model, &sigma, &rule)?);
        sigma = statistic_update(model, &sigma, &rule)?;
        let entries = sigma.len() as f64 * model.num_states() as f64;
        if entries > EXACT_ENTRY_LIMIT {
            return Err(Error::BudgetExceeded {
                what: "exact evaluation entries (use Monte Carlo mode)",
                needed: entries,
                limit: EXACT_ENTRY_LIMIT,
            });
        }
    }
    Ok((rewards, sigma))
}

fn final_term<P: PastPolicy + ?Sized>(
    model: &DecPomdpModel,
    policy: &P,
    sigma: &PlanTimeStatistic,
    final_reward: &FinalReward<'_>,
) -> Result<f64> {
    match *final_reward {
        FinalReward::Zero => Ok(0.0),
        FinalReward::Centralized(gamma) => expected_centralized_reward(sigma, gamma),
        FinalReward::True(f) => Ok(expected_true_final_reward(sigma, f)),
        FinalReward::Decentralized(gamma, Prediction::Optimal) => {
            let rule = optimal_prediction_rule(sigma, gamma)?;
            expected_decentralized_reward(sigma, gamma, &rule)
        }
        FinalReward::Decentralized(gamma, Prediction::Rule(rule)) => expected_decentralized_reward(sigma, gamma, rule),
        FinalReward::Decentralized(gamma, Prediction::Controller) => {
            let rule = controller_prediction(model, policy, sigma)?;
            expected_decentralized_reward(sigma, gamma, &rule)
        }
    }
}

/// The prediction rule read off layer `h` of a controller, on the sequences of `σ_h`.
pub fn controller_prediction<P: PastPolicy + ?Sized>(
    model: &DecPomdpModel,
    policy: &P,
    sigma_h: &PlanTimeStatistic,
) -> Result<PredictionRule> {
    let h = model.horizon();
    let mut agents = vec![BTreeMap::new(); model.num_agents()];
    for (history, _) in sigma_h.iter() {
        for (agent, map) in agents.iter_mut().enumerate() {
            let action = policy
                .action_at(h, agent, history)
                .ok_or_else(|| Error::UndefinedPrediction { agent, history: history.individual_vec(agent) })?;
            map.insert(history.individual_vec(agent), action);
        }
    }
    Ok(PredictionRule::new(agents))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `s_0 .. s_h`.
    pub states: Vec<usize>,
    /// Per-agent actions at `t = 0 .. h-1`.
    pub actions: Vec<Vec<usize>>,
    /// Per-agent observations at `t = 1 .. h`.
    pub observations: Vec<Vec<usize>>,
}

impl Trajectory {
    pub fn history(&self, agents: usize) -> JointHistory {
        JointHistory::from_steps(agents, &self.observations)
    }
}

fn sample_index<R: Rng + ?Sized>(probs: impl IntoIterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples `s_0 ~ b0` and simulates the model under `policy` for `h` steps.
pub fn rollout<P: PastPolicy + ?Sized, R: Rng + ?Sized>(
    model: &DecPomdpModel,
    policy: &P,
    rng: &mut R,
) -> Result<Trajectory> {
    let n = model.num_agents();
    let mut state = sample_index(model.initial_belief().iter().copied(), rng);
    let mut traj = Trajectory { states: vec![state], actions: Vec::new(), observations: Vec::new() };
    let mut history = JointHistory::empty(n);
    for t in 0..model.horizon() {
        let stage = model.stage(t);
        let actions = (0..n)
            .map(|agent| {
                policy.action_at(t, agent, &history).ok_or_else(|| Error::UndefinedDecision {
                    time: t,
                    agent,
                    history: history.individual_vec(agent),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ja = stage
            .actions()
            .encode(&actions)
            .ok_or_else(|| Error::Structure(format!("joint action {actions:?} invalid at t={t}")))?;
        let outcomes = stage.outcomes(state, ja);
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument(format!("no successor from state {state} at t={t}")));
        }
        let pick = &outcomes[sample_index(outcomes.iter().map(|o| o.prob), rng)];
        state = pick.next_state;
        let z = stage.observations().decode(pick.observation);
        history.push(&z);
        traj.states.push(state);
        traj.actions.push(actions);
        traj.observations.push(z);
    }
    Ok(traj)
}

/// Joint state estimate `b_h` reached by Bayesian filtering along a trajectory.
pub fn filter_trajectory(model: &DecPomdpModel, traj: &Trajectory) -> Result<Vec<f64>> {
    let mut belief = model.initial_belief().to_vec();
    for (t, (a, z)) in traj.actions.iter().zip(&traj.observations).enumerate() {
        belief = belief_update(model, t, &belief, a, z)?.0.into_inner();
    }
    Ok(belief)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Sample-mean value over `samples` rollouts. The optimal prediction rule is
/// not available here since it needs `σ_h`.
pub fn evaluate_monte_carlo<P: PastPolicy + ?Sized, R: Rng + ?Sized>(
    model: &DecPomdpModel,
    policy: &P,
    final_reward: &FinalReward<'_>,
    samples: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("Monte Carlo mode needs at least one sample".into()));
    }
    let n = model.num_agents();
    let h = model.horizon();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let traj = rollout(model, policy, rng)?;
        let mut value = 0.0;
        for t in 0..h {
            let stage = model.stage(t);
            let ja = stage.actions().encode(&traj.actions[t]).expect("rollout actions are valid");
            value += stage.reward(traj.states[t], ja);
        }
        value += match *final_reward {
            FinalReward::Zero => 0.0,
            FinalReward::Centralized(gamma) => rho_value(gamma, &filter_trajectory(model, &traj)?).0,
            FinalReward::True(f) => f.value(&filter_trajectory(model, &traj)?),
            FinalReward::Decentralized(_, Prediction::Optimal) => {
                return Err(Error::Unsupported("optimal prediction rule in Monte Carlo mode".into()))
            }
            FinalReward::Decentralized(gamma, prediction) => {
                let history = traj.history(n);
                let s = traj.states[h];
                let mut total = 0.0;
                for agent in 0..n {
                    let k = match prediction {
                        Prediction::Rule(rule) => rule.get(agent, &history.individual_vec(agent)),
                        _ => policy.action_at(h, agent, &history),
                    }
                    .filter(|&k| k < gamma.len())
                    .ok_or_else(|| Error::UndefinedPrediction { agent, history: history.individual_vec(agent) })?;
                    total += gamma.vector(k)[s];
                }
                total / n as f64
            }
        };
        sum += value;
        sum_sq += value * value;
    }
    let count = samples as f64;
    let mean = sum / count;
    let variance = if samples > 1 { ((sum_sq - count * mean * mean) / (count - 1.0)).max(0.0) } else { 0.0 };
    Ok(MonteCarloEstimate { mean, std_error: (variance / count).sqrt(), samples })
}
