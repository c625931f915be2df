//! Built-in toy domains and random tiny instances.
//!
//! * `decoupled-chains`: `n` static hidden bits; agent `i` reads only bit `i`,
//!   accurately with its `sense` action and at chance with `idle`.
//! * `coupled-tag`: a target moves on three cells; two agents scan
//!   overlapping pairs of cells with noisy detectors.
//! * `single-tiger`: one agent listens for a static tiger with a good or a
//!   poor ear.
//!
//! Stage rewards are zero so that the final information reward is the only signal.

use rand::Rng;

use crate::beliefs::{JointHistory, PlanTimeStatistic};
use crate::error::{Error, Result};
use crate::model::{DecPomdpModel, Labels, Outcome, Stage};
use crate::planner::HistoryPolicy;
use crate::rewards::{sample_simplex, AlphaSet, NegativeEntropy};

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    DecoupledChains { agents: usize, accuracy: f64, horizon: usize },
    CoupledTag { horizon: usize, detection: f64, false_alarm: f64, stay: f64 },
    SingleTiger { accuracy: f64, weak_accuracy: f64, horizon: usize },
}

impl DomainSpec {
    pub const NAMES: [&'static str; 3] = ["decoupled-chains", "coupled-tag", "single-tiger"];

    pub fn decoupled_chains(horizon: usize) -> Self {
        DomainSpec::DecoupledChains { agents: 2, accuracy: 0.8, horizon }
    }

    pub fn coupled_tag(horizon: usize) -> Self {
        DomainSpec::CoupledTag { horizon, detection: 0.8, false_alarm: 0.1, stay: 0.8 }
    }

    pub fn single_tiger(horizon: usize) -> Self {
        DomainSpec::SingleTiger { accuracy: 0.85, weak_accuracy: 0.6, horizon }
    }

    /// Default parameters for a named domain; horizon 2 unless given.
    pub fn by_name(name: &str, horizon: Option<usize>) -> Result<Self> {
        let h = horizon.unwrap_or(2);
        match name {
            "decoupled-chains" => Ok(Self::decoupled_chains(h)),
            "coupled-tag" => Ok(Self::coupled_tag(h)),
            "single-tiger" => Ok(Self::single_tiger(h)),
            other => Err(Error::InvalidArgument(format!(
                "unknown domain '{other}' (expected one of {})",
                Self::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DomainSpec::DecoupledChains { .. } => "decoupled-chains",
            DomainSpec::CoupledTag { .. } => "coupled-tag",
            DomainSpec::SingleTiger { .. } => "single-tiger",
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            DomainSpec::DecoupledChains { horizon, .. }
            | DomainSpec::CoupledTag { horizon, .. }
            | DomainSpec::SingleTiger { horizon, .. } => horizon,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")))
    }
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn build_domain(spec: &DomainSpec) -> Result<DecPomdpModel> {
    if spec.horizon() == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let model = match *spec {
        DomainSpec::DecoupledChains { agents, accuracy, horizon } => decoupled_chains(agents, accuracy, horizon)?,
        DomainSpec::CoupledTag { horizon, detection, false_alarm, stay } => {
            coupled_tag(horizon, detection, false_alarm, stay)?
        }
        DomainSpec::SingleTiger { accuracy, weak_accuracy, horizon } => single_tiger(accuracy, weak_accuracy, horizon)?,
    };
    model.checked()
}

fn decoupled_chains(agents: usize, accuracy: f64, horizon: usize) -> Result<DecPomdpModel> {
    if !(1..=3).contains(&agents) {
        return Err(Error::InvalidArgument(format!("decoupled-chains supports 1 to 3 agents, got {agents}")));
    }
    check_probability("accuracy", accuracy)?;
    let num_states = 1 << agents;
    let mut stage = Stage::new(num_states, vec![2; agents], vec![2; agents]);
    let bit = |s: usize, i: usize| (s >> (agents - 1 - i)) & 1;
    let actions: Vec<Vec<usize>> = stage.actions().tuples().collect();
    let observations: Vec<Vec<usize>> = stage.observations().tuples().collect();
    for s in 0..num_states {
        for (ja, a) in actions.iter().enumerate() {
            let outcomes = observations
                .iter()
                .enumerate()
                .map(|(jz, z)| {
                    let prob = (0..agents)
                        .map(|i| {
                            let p = if a[i] == 0 { accuracy } else { 0.5 };
                            if z[i] == bit(s, i) {
                                p
                            } else {
                                1.0 - p
                            }
                        })
                        .product();
                    Outcome { next_state: s, observation: jz, prob }
                })
                .collect();
            stage.set_outcomes(s, ja, outcomes);
        }
    }
    let labels = Labels {
        agents: names("agent", agents),
        states: (0..num_states).map(|s| format!("b{s:0agents$b}")).collect(),
        actions: vec![strings(&["sense", "idle"]); agents],
        observations: vec![strings(&["zero", "one"]); agents],
    };
    Ok(DecPomdpModel::time_homogeneous(horizon, vec![1.0 / num_states as f64; num_states], stage).with_labels(labels))
}

fn coupled_tag(horizon: usize, detection: f64, false_alarm: f64, stay: f64) -> Result<DecPomdpModel> {
    check_probability("detection", detection)?;
    check_probability("false_alarm", false_alarm)?;
    check_probability("stay", stay)?;
    let cells = 3;
    let mut stage = Stage::new(cells, vec![2, 2], vec![2, 2]);
    // agent 0 scans cell 0 or 1, agent 1 scans cell 1 or 2
    let scanned = |agent: usize, action: usize| agent + action;
    let step = (1.0 - stay) / 2.0;
    for s in 0..cells {
        let mut moves = vec![0.0; cells];
        moves[s] += stay;
        moves[s.saturating_sub(1)] += step;
        moves[(s + 1).min(cells - 1)] += step;
        for ja in 0..4 {
            let a = stage.actions().decode(ja);
            let mut outcomes = Vec::new();
            for (s2, &pm) in moves.iter().enumerate() {
                for jz in 0..4 {
                    let z = stage.observations().decode(jz);
                    let prob: f64 = (0..2)
                        .map(|i| {
                            let p_detect = if scanned(i, a[i]) == s2 { detection } else { false_alarm };
                            if z[i] == 1 {
                                p_detect
                            } else {
                                1.0 - p_detect
                            }
                        })
                        .product();
                    outcomes.push(Outcome { next_state: s2, observation: jz, prob: pm * prob });
                }
            }
            stage.set_outcomes(s, ja, outcomes);
        }
    }
    let labels = Labels {
        agents: names("agent", 2),
        states: names("cell", cells),
        actions: vec![strings(&["scan0", "scan1"]), strings(&["scan1", "scan2"])],
        observations: vec![strings(&["quiet", "ping"]); 2],
    };
    Ok(DecPomdpModel::time_homogeneous(horizon, vec![1.0 / 3.0; 3], stage).with_labels(labels))
}

fn single_tiger(accuracy: f64, weak_accuracy: f64, horizon: usize) -> Result<DecPomdpModel> {
    check_probability("accuracy", accuracy)?;
    check_probability("weak_accuracy", weak_accuracy)?;
    let mut stage = Stage::new(2, vec![2], vec![2]);
    for s in 0..2 {
        for (a, p) in [accuracy, weak_accuracy].into_iter().enumerate() {
            stage.set_outcomes(
                s,
                a,
                vec![
                    Outcome { next_state: s, observation: s, prob: p },
                    Outcome { next_state: s, observation: 1 - s, prob: 1.0 - p },
                ],
            );
        }
    }
    let labels = Labels {
        agents: strings(&["listener"]),
        states: strings(&["tiger-left", "tiger-right"]),
        actions: vec![strings(&["listen", "glance"])],
        observations: vec![strings(&["hear-left", "hear-right"])],
    };
    Ok(DecPomdpModel::time_homogeneous(horizon, vec![0.5, 0.5], stage).with_labels(labels))
}

/// Sizes of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceSize {
    pub agents: usize,
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub horizon: usize,
}

/// Random model with a fresh stage per step. About a third of the
/// transition and observation entries are zero.
pub fn random_model<R: Rng + ?Sized>(size: InstanceSize, rng: &mut R) -> DecPomdpModel {
    let ns = size.states;
    let stages = (0..size.horizon)
        .map(|_| {
            let mut stage = Stage::new(ns, vec![size.actions; size.agents], vec![size.observations; size.agents]);
            let nz = stage.observations().len();
            for ja in 0..stage.actions().len() {
                let observation: Vec<Vec<f64>> = (0..ns).map(|_| sparse_distribution(nz, rng)).collect();
                for s in 0..ns {
                    stage.set_factored(s, ja, &sparse_distribution(ns, rng), &observation);
                    stage.set_reward(s, ja, rng.gen_range(-1.0..1.0));
                }
            }
            std::sync::Arc::new(stage)
        })
        .collect();
    DecPomdpModel::new(size.agents, ns, sparse_distribution(ns, rng), stages)
}

fn sparse_distribution<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let keep = rng.gen_range(0..dim);
    let mut weights: Vec<f64> =
        (0..dim).map(|i| if i == keep || rng.gen_bool(0.67) { rng.gen::<f64>() + 1e-3 } else { 0.0 }).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

/// Tangents of negative entropy at `count` uniformly sampled beliefs.
pub fn random_entropy_gamma<R: Rng + ?Sized>(num_states: usize, count: usize, rng: &mut R) -> AlphaSet {
    AlphaSet::from_tangents(&NegativeEntropy, &sample_simplex(num_states, count, rng)).expect("count >= 1")
}

/// Uniformly random actions on every individual history.
pub fn random_history_policy<R: Rng + ?Sized>(model: &DecPomdpModel, rng: &mut R) -> HistoryPolicy {
    let mut policy = HistoryPolicy::zeros(model, model.horizon());
    for agent in 0..model.num_agents() {
        for t in 0..model.horizon() {
            for idx in 0..policy.histories(agent, t) {
                policy.set(agent, t, idx, rng.gen_range(0..model.action_size(agent, t)));
            }
        }
    }
    policy
}

/// Random one-step statistic: agent `i` has `sequences[i]` possible
/// observations, and roughly a quarter of the entries are zero.
pub fn random_statistic<R: Rng + ?Sized>(num_states: usize, sequences: &[usize], rng: &mut R) -> PlanTimeStatistic {
    let agents = sequences.len();
    let space = crate::model::JointSpace::new(sequences.to_vec());
    let mut entries: Vec<(JointHistory, Vec<f64>)> = space
        .tuples()
        .map(|z| {
            let dist = (0..num_states).map(|_| if rng.gen_bool(0.75) { rng.gen::<f64>() } else { 0.0 }).collect();
            (JointHistory::from_steps(agents, &[z]), dist)
        })
        .collect();
    let mut total: f64 = entries.iter().flat_map(|(_, d)| d.iter()).sum();
    if total == 0.0 {
        entries[0].1[0] = 1.0;
        total = 1.0;
    }
    for (_, dist) in &mut entries {
        dist.iter_mut().for_each(|p| *p /= total);
    }
    PlanTimeStatistic::from_entries(1, num_states, agents, entries).expect("normalized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains_validate() {
        for name in DomainSpec::NAMES {
            for h in 1..=3 {
                let m = build_domain(&DomainSpec::by_name(name, Some(h)).unwrap()).unwrap();
                assert_eq!(m.horizon(), h);
                assert!(m.validate().is_empty());
            }
        }
        assert!(DomainSpec::by_name("mav", None).is_err());
        assert!(build_domain(&DomainSpec::DecoupledChains { agents: 4, accuracy: 0.8, horizon: 2 }).is_err());
    }

    #[test]
    fn decoupled_sensor_reads_own_bit() {
        let m = build_domain(&DomainSpec::decoupled_chains(1)).unwrap();
        let st = m.stage(0);
        // state b10: agent 0's bit is 1, agent 1's bit is 0; both sense
        assert!((st.probability(2, 0, 2, 2) - 0.8 * 0.8).abs() < 1e-15);
        // agent 1 idles: its observation is a coin flip
        assert!((st.probability(2, 1, 2, 2) - 0.8 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_models_are_valid() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let size = InstanceSize { agents: 2, states: 3, actions: 2, observations: 2, horizon: 3 };
            let m = random_model(size, &mut rng);
            assert!(m.validate().is_empty(), "{:?}", m.validate());
            assert!(!m.is_time_homogeneous() || m.horizon() == 1);
        }
    }
}
