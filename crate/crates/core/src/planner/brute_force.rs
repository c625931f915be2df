//! Exhaustive search over deterministic history-based policies for tiny instances.
//!
//! The search walks decision steps depth first and shares the statistic of
//! each policy prefix. At every step only the individual histories with
//! positive probability are branched on; the others keep action 0, which
//! does not change any value.

use std::collections::BTreeSet;

use super::policy::{HistoryPolicy, RuleAt};
use crate::beliefs::{expected_stage_reward, statistic_update, PlanTimeStatistic};
use crate::conversion::{expected_decentralized_reward, optimal_prediction_rule, PredictionRule};
use crate::error::{Error, Result};
use crate::model::DecPomdpModel;
use crate::rewards::{expected_centralized_reward, expected_true_final_reward, AlphaSet, ConvexReward};

/// Default limit on the number of deterministic joint policies.
pub const DEFAULT_BUDGET: f64 = 1e7;

#[derive(Clone, Copy)]
pub enum Objective<'a> {
    /// Stage rewards only.
    Standard,
    /// `<M, Γ>`: stage rewards plus `ρ̂(σ_h)`.
    Centralized(&'a AlphaSet),
    /// `M+`: stage rewards plus `R̂_h(σ_h, φ*)`.
    Converted(&'a AlphaSet),
    /// Stage rewards plus `f̂(σ_h)`.
    True(&'a dyn ConvexReward),
}

impl Objective<'_> {
    pub fn final_value(&self, sigma_h: &PlanTimeStatistic) -> Result<f64> {
        match *self {
            Objective::Standard => Ok(0.0),
            Objective::Centralized(gamma) => expected_centralized_reward(sigma_h, gamma),
            Objective::Converted(gamma) => {
                let rule = optimal_prediction_rule(sigma_h, gamma)?;
                expected_decentralized_reward(sigma_h, gamma, &rule)
            }
            Objective::True(f) => Ok(expected_true_final_reward(sigma_h, f)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub value: f64,
    pub policy: HistoryPolicy,
    /// `φ*` of the optimal policy for the converted objective.
    pub prediction: Option<PredictionRule>,
    /// Number of complete policies evaluated after pruning unreachable histories.
    pub evaluated: u64,
}

/// `Π_{i,t} |A_{i,t}|^{#histories_{i,t}}`, the number of deterministic joint policies.
pub fn policy_count(model: &DecPomdpModel) -> f64 {
    let mut log_count = 0.0;
    for agent in 0..model.num_agents() {
        let mut histories = 1.0;
        for t in 0..model.horizon() {
            log_count += histories * (model.action_size(agent, t) as f64).ln();
            histories *= model.stage(t).observations().sizes()[agent] as f64;
        }
    }
    log_count.exp()
}

/// Calls `visit(policy, σ_h, Σ_t expected stage reward)` for every deterministic
/// joint policy, up to choices on unreachable histories. Returns the number of visits.
pub fn for_each_past_policy(
    model: &DecPomdpModel,
    budget: f64,
    mut visit: impl FnMut(&HistoryPolicy, &PlanTimeStatistic, f64) -> Result<()>,
) -> Result<u64> {
    let count = policy_count(model);
    if count > budget {
        return Err(Error::BudgetExceeded { what: "brute-force policies", needed: count, limit: budget });
    }
    let mut policy = HistoryPolicy::zeros(model, model.horizon());
    let mut visits = 0;
    descend(model, &PlanTimeStatistic::initial(model), 0.0, &mut policy, &mut visit, &mut visits)?;
    Ok(visits)
}

fn descend(
    model: &DecPomdpModel,
    sigma: &PlanTimeStatistic,
    stage_sum: f64,
    policy: &mut HistoryPolicy,
    visit: &mut dyn FnMut(&HistoryPolicy, &PlanTimeStatistic, f64) -> Result<()>,
    visits: &mut u64,
) -> Result<()> {
    let t = sigma.time();
    if t == model.horizon() {
        *visits += 1;
        return visit(policy, sigma, stage_sum);
    }
    let mut slots: Vec<(usize, usize)> = Vec::new();
    for agent in 0..model.num_agents() {
        let reachable: BTreeSet<usize> = sigma
            .iter()
            .map(|(history, _)| policy.history_index(agent, history.individual(agent)).expect("history in range"))
            .collect();
        for idx in 0..policy.histories(agent, t) {
            policy.set(agent, t, idx, 0);
        }
        slots.extend(reachable.into_iter().map(|idx| (agent, idx)));
    }
    let radix: Vec<usize> = slots.iter().map(|&(agent, _)| model.action_size(agent, t)).collect();
    let mut digits = vec![0; slots.len()];
    loop {
        for (&(agent, idx), &a) in slots.iter().zip(&digits) {
            policy.set(agent, t, idx, a);
        }
        let (reward, next) = {
            let rule = RuleAt::new(&*policy, t);
            (expected_stage_reward(model, sigma, &rule)?, statistic_update(model, sigma, &rule)?)
        };
        descend(model, &next, stage_sum + reward, policy, visit, visits)?;
        // odometer, last slot fastest
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < radix[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Optimal deterministic joint policy for `objective`. Ties keep the first policy enumerated.
pub fn brute_force(model: &DecPomdpModel, objective: &Objective<'_>, budget: f64) -> Result<BruteForceResult> {
    let mut best: Option<(f64, HistoryPolicy, PlanTimeStatistic)> = None;
    let evaluated = for_each_past_policy(model, budget, |policy, sigma, stage_sum| {
        let value = stage_sum + objective.final_value(sigma)?;
        if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
            best = Some((value, policy.clone(), sigma.clone()));
        }
        Ok(())
    })?;
    let (value, policy, sigma) = best.expect("at least one policy");
    let prediction = match objective {
        Objective::Converted(gamma) => Some(optimal_prediction_rule(&sigma, gamma)?),
        _ => None,
    };
    Ok(BruteForceResult { value, policy, prediction, evaluated })
}

/// Values needed to check the decentralization loss on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAudit {
    /// `V*` of `<M, Γ>`.
    pub centralized: f64,
    /// `V*` of `M+`.
    pub converted: f64,
    /// Largest `ρ̂(σ_h) − R̂_h(σ_h, φ*)` over the reachable statistics.
    pub max_gap: f64,
    /// `<M, Γ>` value of the past policy that is optimal for `M+`.
    pub converted_policy_centralized: f64,
    /// Largest `V_{M+}(φ_h ∘ φ*) − V_{<M,Γ>}(φ_h)` over all past policies (non-positive in theory).
    pub max_excess: f64,
    pub policies: u64,
}

/// One enumeration that yields both optima, the gap bound and the per-policy comparison.
pub fn audit_loss(model: &DecPomdpModel, gamma: &AlphaSet, budget: f64) -> Result<LossAudit> {
    let mut centralized = f64::NEG_INFINITY;
    let mut converted = f64::NEG_INFINITY;
    let mut converted_policy_centralized = f64::NAN;
    let mut max_gap = f64::NEG_INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    let policies = for_each_past_policy(model, budget, |_, sigma, stage_sum| {
        let rho = expected_centralized_reward(sigma, gamma)?;
        let rule = optimal_prediction_rule(sigma, gamma)?;
        let decentralized = expected_decentralized_reward(sigma, gamma, &rule)?;
        let vc = stage_sum + rho;
        let vp = stage_sum + decentralized;
        centralized = centralized.max(vc);
        if vp > converted {
            converted = vp;
            converted_policy_centralized = vc;
        }
        max_gap = max_gap.max(rho - decentralized);
        max_excess = max_excess.max(vp - vc);
        Ok(())
    })?;
    Ok(LossAudit { centralized, converted, max_gap, converted_policy_centralized, max_excess, policies })
}
