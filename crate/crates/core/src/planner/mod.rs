//! Controllers, evaluation, policy-graph improvement and brute force.

pub mod brute_force;
pub mod evaluate;
pub mod improve;
pub mod policy;

pub use brute_force::{
    audit_loss, brute_force, for_each_past_policy, policy_count, BruteForceResult, LossAudit, Objective,
};
pub use evaluate::{
    evaluate_exact, evaluate_monte_carlo, filter_trajectory, rollout, Evaluation, FinalReward, MonteCarloEstimate,
    Prediction, Trajectory,
};
pub use improve::{improve_once, plan, random_policy, PlanResult, PlannerParams, PlanningTarget};
pub use policy::{FscNode, HistoryPolicy, JointPolicy, LayeredFsc, PastPolicy, RuleAt};
