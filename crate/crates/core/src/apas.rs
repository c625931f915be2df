//! Adaptive prediction action search: alternate planning on the converted
//! problem with re-fitting the hyperplanes at joint state estimates reached
//! by the best policy so far.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::beliefs::Belief;
use crate::error::{Error, Result};
use crate::model::DecPomdpModel;
use crate::planner::{
    evaluate_exact, filter_trajectory, plan, rollout, FinalReward, JointPolicy, PlannerParams, PlanningTarget,
};
use crate::rewards::{sample_simplex, AlphaSet, ConvexReward};

/// Which value decides the best policy across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueMode {
    /// Stage rewards plus `ρ̂` under the iteration's `Γ`.
    Rho,
    /// Stage rewards plus `f̂`, comparable across iterations.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApasConfig {
    /// Linearization points, i.e. prediction actions per agent.
    pub k: usize,
    pub outer_iterations: usize,
    #[serde(skip)]
    pub planner: PlannerParams,
    pub value_mode: ValueMode,
    pub seed: u64,
    /// Keep the hyperplanes of the best iteration when adapting.
    pub retain_best_gamma: bool,
    /// Stop once the sorted linearization points move less than this in L1.
    pub convergence_tolerance: f64,
}

impl Default for ApasConfig {
    fn default() -> Self {
        ApasConfig {
            k: 2,
            outer_iterations: 10,
            planner: PlannerParams::default(),
            value_mode: ValueMode::True,
            seed: 0,
            retain_best_gamma: false,
            convergence_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub plan: f64,
    pub evaluate: f64,
    pub adapt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Hyperplanes used in this iteration.
    pub gamma: Vec<Vec<f64>>,
    pub gamma_points: Vec<Vec<f64>>,
    /// Value of the planned policy on the converted problem (with `φ*`).
    pub value: f64,
    /// Stage rewards plus `ρ̂` under this iteration's `Γ`.
    pub rho_value: f64,
    /// Stage rewards plus `f̂`.
    pub true_value: f64,
    /// Running best under the configured value mode.
    pub best_value: f64,
    /// Wall-clock seconds per phase.
    pub phase_times: PhaseTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApasReport {
    pub iterations: Vec<IterationRecord>,
    pub best_value: f64,
    pub best_iteration: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ApasOutcome {
    pub policy: JointPolicy,
    /// `Γ` the best policy was planned with.
    pub gamma: AlphaSet,
    pub report: ApasReport,
}

#[derive(Clone, Copy)]
enum Purpose {
    InitialGamma = 1,
    Plan = 2,
    Adapt = 3,
}

/// Independent stream for one (iteration, purpose, task) triple.
fn stream(seed: u64, iteration: usize, purpose: Purpose, task: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 40) | ((purpose as u64) << 32) | task as u64);
    rng
}

pub fn run_apas(model: &DecPomdpModel, f: &dyn ConvexReward, config: &ApasConfig) -> Result<ApasOutcome> {
    run(model, f, config, true)
}

/// Ablation: `Γ` is re-sampled uniformly at every iteration instead of adapted.
pub fn run_apas_no_adaptation(model: &DecPomdpModel, f: &dyn ConvexReward, config: &ApasConfig) -> Result<ApasOutcome> {
    run(model, f, config, false)
}

fn sampled_gamma(
    model: &DecPomdpModel,
    f: &dyn ConvexReward,
    config: &ApasConfig,
    iteration: usize,
) -> Result<AlphaSet> {
    let mut rng = stream(config.seed, iteration, Purpose::InitialGamma, 0);
    AlphaSet::from_tangents(f, &sample_simplex(model.num_states(), config.k, &mut rng))
}

fn run(model: &DecPomdpModel, f: &dyn ConvexReward, config: &ApasConfig, adapt: bool) -> Result<ApasOutcome> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if config.outer_iterations == 0 {
        return Err(Error::InvalidArgument("at least one outer iteration is needed".into()));
    }
    let mut gamma = sampled_gamma(model, f, config, 0)?;
    let mut best: Option<(f64, JointPolicy, AlphaSet, usize)> = None;
    let mut records = Vec::new();
    let mut converged = false;
    for iteration in 0..config.outer_iterations {
        let started = Instant::now();
        let params =
            PlannerParams { seed: stream(config.seed, iteration, Purpose::Plan, 0).next_u64(), ..config.planner };
        let planned = plan(&PlanningTarget::Converted { model, gamma: &gamma }, &params)?;
        let plan_time = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let evaluation = evaluate_exact(model, &planned.policy, &FinalReward::Zero)?;
        let stage_sum: f64 = evaluation.stage_rewards.iter().sum();
        let rho_value = stage_sum + crate::rewards::expected_centralized_reward(&evaluation.statistic, &gamma)?;
        let true_value = stage_sum + crate::rewards::expected_true_final_reward(&evaluation.statistic, f);
        let score = match config.value_mode {
            ValueMode::Rho => rho_value,
            ValueMode::True => true_value,
        };
        if best.as_ref().is_none_or(|(v, ..)| score > *v) {
            best = Some((score, planned.policy.clone(), gamma.clone(), iteration));
        }
        let evaluate_time = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let last = iteration + 1 == config.outer_iterations;
        let next_gamma = if last {
            None
        } else if adapt {
            let (_, best_policy, best_gamma, _) = best.as_ref().expect("set above");
            let points = (0..config.k)
                .map(|task| {
                    let mut rng = stream(config.seed, iteration, Purpose::Adapt, task);
                    let traj = rollout(model, best_policy, &mut rng)?;
                    Belief::new(filter_trajectory(model, &traj)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut next = AlphaSet::from_tangents(f, &points)?;
            if config.retain_best_gamma {
                next.extend(best_gamma);
            }
            Some(next)
        } else {
            Some(sampled_gamma(model, f, config, iteration + 1)?)
        };
        let adapt_time = started.elapsed().as_secs_f64();

        records.push(IterationRecord {
            gamma: gamma.vectors().to_vec(),
            gamma_points: gamma.points().to_vec(),
            value: planned.value,
            rho_value,
            true_value,
            best_value: best.as_ref().expect("set above").0,
            phase_times: PhaseTimes { plan: plan_time, evaluate: evaluate_time, adapt: adapt_time },
        });
        if let Some(next) = next_gamma {
            if adapt && points_movement(gamma.points(), next.points()) < config.convergence_tolerance {
                converged = true;
                break;
            }
            gamma = next;
        }
    }
    let (best_value, policy, gamma, best_iteration) = best.expect("at least one iteration");
    Ok(ApasOutcome { policy, gamma, report: ApasReport { iterations: records, best_value, best_iteration, converged } })
}

/// L1 distance between two point sets after sorting each lexicographically.
fn points_movement(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let sorted = |pts: &[Vec<f64>]| {
        let mut v = pts.to_vec();
        v.sort_by(|x, y| x.partial_cmp(y).expect("finite beliefs"));
        v
    };
    sorted(a).iter().zip(&sorted(b)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>()).sum()
}
