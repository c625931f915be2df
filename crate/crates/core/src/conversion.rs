//! Conversion of a Dec-ρPOMDP `<M, Γ>` into a standard Dec-POMDP `M+`.
//!
//! `M+` appends one step in which every agent picks an individual prediction
//! action (one per hyperplane in `Γ`), the state is kept, a null observation
//! is emitted, and the team receives the average of the chosen hyperplanes
//! evaluated at the true state.
//!
//! The explicit [`ConvertedModel`] materializes the `|Γ|^n` joint prediction
//! actions. Planners use the implicit route instead: the final step is solved
//! analytically by the optimal prediction rule `φ*`, which decomposes per agent.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::beliefs::PlanTimeStatistic;
use crate::error::{Error, Result};
use crate::model::{DecPomdpModel, Outcome, Stage};
use crate::rewards::{expected_centralized_reward, AlphaSet};

/// Gap values in `[-GAP_TOLERANCE, 0)` are floating-point noise and are clamped to zero.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Decentralized prediction reward `(1/n) Σ_i α_{a_i}(s)`.
pub fn decentralized_prediction_reward(gamma: &AlphaSet, state: usize, predictions: &[usize]) -> f64 {
    let sum: f64 = predictions.iter().map(|&k| gamma.vector(k)[state]).sum();
    sum / predictions.len() as f64
}

/// `M+` together with the prediction-action → hyperplane link table.
#[derive(Debug, Clone)]
pub struct ConvertedModel {
    pub model: DecPomdpModel,
    pub source_horizon: usize,
    pub gamma: AlphaSet,
    /// `prediction_alpha[a]` is the index in `Γ` of prediction action `a`.
    pub prediction_alpha: Vec<usize>,
}

/// Builds `M+` from `<M, Γ>`. Steps `0..h-1` share the source tables.
pub fn convert_to_standard(model: &DecPomdpModel, gamma: &AlphaSet) -> Result<ConvertedModel> {
    if gamma.dim() != model.num_states() {
        return Err(Error::DimensionMismatch { expected: model.num_states(), found: gamma.dim() });
    }
    let n = model.num_agents();
    let num_states = model.num_states();
    let h = model.horizon();
    let mut last = Stage::new(num_states, vec![gamma.len(); n], vec![1; n]);
    let space = last.actions().clone();
    for s in 0..num_states {
        for (ja, predictions) in space.tuples().enumerate() {
            last.set_outcomes(s, ja, vec![Outcome { next_state: s, observation: 0, prob: 1.0 }]);
            last.set_reward(s, ja, decentralized_prediction_reward(gamma, s, &predictions));
        }
    }
    let mut stages: Vec<Arc<Stage>> = model.stages().to_vec();
    stages.push(Arc::new(last));
    let converted = DecPomdpModel::new(n, num_states, model.initial_belief().to_vec(), stages);
    Ok(ConvertedModel {
        model: converted,
        source_horizon: h,
        gamma: gamma.clone(),
        prediction_alpha: (0..gamma.len()).collect(),
    })
}

impl ConvertedModel {
    pub fn optimal_prediction_rule(&self, sigma_h: &PlanTimeStatistic) -> Result<PredictionRule> {
        optimal_prediction_rule(sigma_h, &self.gamma)
    }
}

/// Per-agent map from final individual observation sequence to a prediction action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRule {
    agents: Vec<BTreeMap<Vec<usize>, usize>>,
}

impl PredictionRule {
    pub fn new(agents: Vec<BTreeMap<Vec<usize>, usize>>) -> Self {
        PredictionRule { agents }
    }

    pub fn agents(&self) -> usize {
        self.agents.len()
    }

    pub fn get(&self, agent: usize, individual: &[usize]) -> Option<usize> {
        self.agents.get(agent)?.get(individual).copied()
    }

    pub fn agent_rules(&self) -> &[BTreeMap<Vec<usize>, usize>] {
        &self.agents
    }
}

/// `φ*_i(z⃗_i) = argmax_a Σ_{z⃗_{-i}, s} σ(s, z⃗_{-i} | z⃗_i) α_a(s)`, lowest index on ties.
pub fn optimal_prediction_rule(sigma_h: &PlanTimeStatistic, gamma: &AlphaSet) -> Result<PredictionRule> {
    if gamma.dim() != sigma_h.num_states() {
        return Err(Error::DimensionMismatch { expected: sigma_h.num_states(), found: gamma.dim() });
    }
    let agents = (0..sigma_h.agents())
        .map(|agent| {
            sigma_h
                .individual_weights(agent)
                .into_iter()
                .map(|(seq, weights)| {
                    let mass: f64 = weights.iter().sum();
                    let cond: Vec<f64> = weights.iter().map(|w| w / mass).collect();
                    (seq, crate::rewards::rho_value(gamma, &cond).1)
                })
                .collect()
        })
        .collect();
    Ok(PredictionRule { agents })
}

/// `R̂_h(σ_h, φ) = Σ_{z⃗,s} σ(s, z⃗) (1/n) Σ_i α_{φ_i(z⃗_i)}(s)`.
pub fn expected_decentralized_reward(
    sigma_h: &PlanTimeStatistic,
    gamma: &AlphaSet,
    rule: &PredictionRule,
) -> Result<f64> {
    if gamma.dim() != sigma_h.num_states() {
        return Err(Error::DimensionMismatch { expected: sigma_h.num_states(), found: gamma.dim() });
    }
    let n = sigma_h.agents();
    let mut predictions = vec![0; n];
    let mut total = 0.0;
    for (history, dist) in sigma_h.iter() {
        for (agent, slot) in predictions.iter_mut().enumerate() {
            let individual = history.individual_vec(agent);
            *slot = match rule.get(agent, &individual) {
                Some(k) if k < gamma.len() => k,
                _ => return Err(Error::UndefinedPrediction { agent, history: individual }),
            };
        }
        for (s, &mass) in dist.iter().enumerate() {
            if mass != 0.0 {
                total += mass * decentralized_prediction_reward(gamma, s, &predictions);
            }
        }
    }
    Ok(total)
}

/// Loss due to decentralization at `σ_h`: `ρ̂(σ_h) − R̂_h(σ_h, φ*)`.
pub fn decentralization_gap(sigma_h: &PlanTimeStatistic, gamma: &AlphaSet) -> Result<f64> {
    let rule = optimal_prediction_rule(sigma_h, gamma)?;
    let gap = expected_centralized_reward(sigma_h, gamma)? - expected_decentralized_reward(sigma_h, gamma, &rule)?;
    Ok(if (-GAP_TOLERANCE..0.0).contains(&gap) { 0.0 } else { gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::JointHistory;
    use crate::model::JointKind;

    fn tiny_model() -> DecPomdpModel {
        let mut stage = Stage::new(2, vec![2, 1], vec![2, 1]);
        for s in 0..2 {
            for a in 0..2 {
                stage.set_outcomes(
                    s,
                    a,
                    vec![
                        Outcome { next_state: s, observation: s, prob: 0.7 },
                        Outcome { next_state: 1 - s, observation: 1 - s, prob: 0.3 },
                    ],
                );
                stage.set_reward(s, a, (s + a) as f64);
            }
        }
        DecPomdpModel::time_homogeneous(2, vec![0.4, 0.6], stage)
    }

    /// The worked two-agent example: agent 0 sees x/y, agent 1 always sees w.
    fn example_sigma() -> PlanTimeStatistic {
        let x = JointHistory::from_steps(2, &[vec![0, 0]]);
        let y = JointHistory::from_steps(2, &[vec![1, 0]]);
        PlanTimeStatistic::from_entries(1, 2, 2, [(x, vec![0.4, 0.1]), (y, vec![0.1, 0.4])]).unwrap()
    }

    fn example_gamma() -> AlphaSet {
        AlphaSet::new(vec![vec![0.0, -2.0], vec![-2.0, 0.0]]).unwrap()
    }

    #[test]
    fn zero_gamma_pads_with_zero_reward() {
        let m = tiny_model();
        let c = convert_to_standard(&m, &AlphaSet::zero(2)).unwrap();
        assert!(c.model.validate().is_empty());
        assert_eq!(c.model.horizon(), 3);
        for s in 0..2 {
            assert_eq!(c.model.stage(2).reward(s, 0), 0.0);
        }
    }

    #[test]
    fn final_step_reward_averages_hyperplanes() {
        let m = tiny_model();
        let g = AlphaSet::new(vec![vec![1.0, -3.0], vec![-0.5, 2.0]]).unwrap();
        let c = convert_to_standard(&m, &g).unwrap();
        let last = c.model.stage(2);
        assert_eq!(last.actions().len(), 4);
        assert_eq!(c.model.enumerate_joint(3, JointKind::Observation).unwrap(), vec![vec![0, 0]]);
        for s in 0..2 {
            for (ja, parts) in last.actions().tuples().enumerate() {
                let expect = (g.vector(parts[0])[s] + g.vector(parts[1])[s]) / 2.0;
                assert_eq!(last.reward(s, ja), expect);
                assert_eq!(last.outcomes(s, ja), &[Outcome { next_state: s, observation: 0, prob: 1.0 }]);
            }
        }
    }

    #[test]
    fn earlier_steps_are_unchanged() {
        let m = tiny_model();
        let c = convert_to_standard(&m, &example_gamma()).unwrap();
        for t in 0..m.horizon() {
            assert_eq!(c.model.stage(t), m.stage(t));
        }
        assert_eq!(c.model.initial_belief(), m.initial_belief());
        assert!(convert_to_standard(&m, &AlphaSet::zero(3)).is_err());
    }

    #[test]
    fn optimal_rule_on_worked_example() {
        let rule = optimal_prediction_rule(&example_sigma(), &example_gamma()).unwrap();
        assert_eq!(rule.get(0, &[0]), Some(0));
        assert_eq!(rule.get(0, &[1]), Some(1));
        // p(s0 | w) = 0.5 ties; lowest index wins
        assert_eq!(rule.get(1, &[0]), Some(0));
    }

    #[test]
    fn worked_example_rewards_and_gap() {
        let sigma = example_sigma();
        let gamma = example_gamma();
        let rule = optimal_prediction_rule(&sigma, &gamma).unwrap();
        let dec = expected_decentralized_reward(&sigma, &gamma, &rule).unwrap();
        let cen = expected_centralized_reward(&sigma, &gamma).unwrap();
        assert!((dec + 0.7).abs() < 1e-12);
        assert!((cen + 0.4).abs() < 1e-12);
        assert!((decentralization_gap(&sigma, &gamma).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_hyperplane_rule_is_constant() {
        let rule = optimal_prediction_rule(&example_sigma(), &AlphaSet::zero(2)).unwrap();
        for agent in 0..2 {
            assert!(rule.agent_rules()[agent].values().all(|&a| a == 0));
        }
        let r = expected_decentralized_reward(&example_sigma(), &AlphaSet::zero(2), &rule).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn single_agent_has_no_gap() {
        let sigma = PlanTimeStatistic::from_entries(
            1,
            2,
            1,
            [
                (JointHistory::from_steps(1, &[vec![0]]), vec![0.4, 0.1]),
                (JointHistory::from_steps(1, &[vec![1]]), vec![0.1, 0.4]),
            ],
        )
        .unwrap();
        let g = example_gamma();
        let rule = optimal_prediction_rule(&sigma, &g).unwrap();
        assert_eq!(
            expected_decentralized_reward(&sigma, &g, &rule).unwrap(),
            expected_centralized_reward(&sigma, &g).unwrap()
        );
        assert_eq!(decentralization_gap(&sigma, &g).unwrap(), 0.0);
    }

    /// Independent agents each perfectly observing their own bit: the
    /// statistic factorizes, yet every agent must guess the other's bit.
    fn independent_bits_sigma() -> PlanTimeStatistic {
        let entries = (0..4).map(|s| {
            let mut dist = vec![0.0; 4];
            dist[s] = 0.25;
            (JointHistory::from_steps(2, &[vec![s / 2, s % 2]]), dist)
        });
        PlanTimeStatistic::from_entries(1, 4, 2, entries).unwrap()
    }

    #[test]
    fn factorized_statistic_can_still_lose() {
        let sigma = independent_bits_sigma();
        for z0 in 0..2 {
            for z1 in 0..2 {
                let joint = sigma.marginal(&JointHistory::from_steps(2, &[vec![z0, z1]]));
                assert!((joint - 0.5 * 0.5).abs() < 1e-15);
            }
        }
        let peaked: Vec<Vec<f64>> =
            (0..4).map(|k| (0..4).map(|s| if s == k { 0.97f64.ln() } else { 0.01f64.ln() }).collect()).collect();
        let gap = decentralization_gap(&sigma, &AlphaSet::new(peaked).unwrap()).unwrap();
        // centralized: ln 0.97; each agent: half ln 0.97 + half ln 0.01
        let expect = 0.97f64.ln() - 0.5 * (0.97f64.ln() + 0.01f64.ln());
        assert!((gap - expect).abs() < 1e-12);
    }

    #[test]
    fn dominating_hyperplane_closes_the_gap() {
        let g = AlphaSet::new(vec![vec![-1.0; 4], vec![-2.0, -3.0, -2.0, -5.0]]).unwrap();
        assert_eq!(decentralization_gap(&independent_bits_sigma(), &g).unwrap(), 0.0);
    }

    #[test]
    fn undefined_prediction_is_an_error() {
        let rule = PredictionRule::new(vec![BTreeMap::new(), BTreeMap::new()]);
        assert!(matches!(
            expected_decentralized_reward(&example_sigma(), &example_gamma(), &rule),
            Err(Error::UndefinedPrediction { .. })
        ));
    }
}
