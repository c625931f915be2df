use std::collections::BTreeMap;

use decrho::beliefs::condition;
use decrho::benchmarks::{
    build_domain, random_entropy_gamma, random_model, random_statistic, DomainSpec, InstanceSize,
};
use decrho::conversion::{
    convert_to_standard, decentralization_gap, expected_decentralized_reward, optimal_prediction_rule,
};
use decrho::io::{parse_policy, serialize_policy, PolicyMeta};
use decrho::planner::{
    evaluate_exact, filter_trajectory, plan, random_policy, rollout, FinalReward, PlannerParams, PlanningTarget,
    Prediction,
};
use decrho::rewards::{expected_centralized_reward, rho_value, AlphaSet, ConvexReward, NegativeEntropy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn size_strategy() -> impl Strategy<Value = InstanceSize> {
    (1usize..=2, 2usize..=3, 1usize..=2, 1usize..=2, 1usize..=2).prop_map(
        |(agents, states, actions, observations, horizon)| InstanceSize {
            agents,
            states,
            actions,
            observations,
            horizon,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gap_is_non_negative(seed in any::<u64>(), states in 2usize..=4, a in 1usize..=3, b in 1usize..=3, k in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_statistic(states, &[a, b], &mut rng);
        let gamma = random_entropy_gamma(states, k, &mut rng);
        prop_assert!(decentralization_gap(&sigma, &gamma).unwrap() >= 0.0);
    }

    #[test]
    fn tangents_stay_below_entropy(seed in any::<u64>(), states in 2usize..=5, k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = random_entropy_gamma(states, k, &mut rng);
        for b in decrho::rewards::sample_simplex(states, 20, &mut rng) {
            prop_assert!(rho_value(&gamma, b.as_ref()).0 <= NegativeEntropy.value(b.as_ref()) + 1e-9);
        }
    }

    #[test]
    fn policy_json_round_trips(size in size_strategy(), width in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(size, &mut rng);
        let policy = random_policy(&PlanningTarget::Standard(&model), width, &mut rng).unwrap();
        let meta = PolicyMeta { horizon: model.horizon(), value: Some(-0.5), gamma_points: vec![vec![0.25, 0.75]], seed: Some(seed) };
        let (back, back_meta) = parse_policy(&serialize_policy(&policy, &meta).unwrap()).unwrap();
        prop_assert_eq!(back, policy);
        prop_assert_eq!(back_meta, meta);
    }

    #[test]
    fn converted_value_never_exceeds_centralized(size in size_strategy(), k in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(size, &mut rng);
        let gamma = random_entropy_gamma(model.num_states(), k, &mut rng);
        let policy = random_policy(&PlanningTarget::Standard(&model), 2, &mut rng).unwrap();
        let centralized = evaluate_exact(&model, &policy, &FinalReward::Centralized(&gamma)).unwrap().value;
        let converted =
            evaluate_exact(&model, &policy, &FinalReward::Decentralized(&gamma, Prediction::Optimal)).unwrap().value;
        let truth = evaluate_exact(&model, &policy, &FinalReward::True(&NegativeEntropy)).unwrap().value;
        prop_assert!(converted <= centralized + 1e-9);
        prop_assert!(centralized <= truth + 1e-9);
    }
}

/// The controller's prediction layer run as an ordinary last step of the explicit `M+`
/// scores the same as the implicit conversion, and no better than `φ*`.
#[test]
fn planned_value_matches_explicit_conversion() {
    let model = build_domain(&DomainSpec::coupled_tag(2)).unwrap();
    let gamma = random_entropy_gamma(model.num_states(), 3, &mut ChaCha8Rng::seed_from_u64(7));
    let result = plan(&PlanningTarget::Converted { model: &model, gamma: &gamma }, &PlannerParams::default()).unwrap();
    let converted = convert_to_standard(&model, &gamma).unwrap();
    let via_rule = evaluate_exact(
        &model,
        &result.policy,
        &FinalReward::Decentralized(&gamma, Prediction::Rule(result.policy.prediction().unwrap())),
    )
    .unwrap();
    assert!((via_rule.value - result.value).abs() < 1e-12);
    let sigma = via_rule.statistic;
    let rule = optimal_prediction_rule(&sigma, &gamma).unwrap();
    assert!((expected_decentralized_reward(&sigma, &gamma, &rule).unwrap() - via_rule.final_reward).abs() < 1e-12);
    let explicit = evaluate_exact(&converted.model, &result.policy, &FinalReward::Zero).unwrap().value;
    let implicit = evaluate_exact(&model, &result.policy, &FinalReward::Decentralized(&gamma, Prediction::Controller))
        .unwrap()
        .value;
    assert!((explicit - implicit).abs() < 1e-12, "{explicit} vs {implicit}");
    assert!(explicit <= result.value + 1e-12);
    assert!(via_rule.value <= expected_centralized_reward(&sigma, &gamma).unwrap() + 1e-12);
}

/// Observation-sequence frequencies of rollouts match the marginals of `σ_h`,
/// and filtered final beliefs match conditioning `σ_h`.
#[test]
fn rollouts_agree_with_the_statistic() {
    let model = build_domain(&DomainSpec::coupled_tag(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let policy = random_policy(&PlanningTarget::Standard(&model), 2, &mut rng).unwrap();
    let sigma = evaluate_exact(&model, &policy, &FinalReward::Zero).unwrap().statistic;
    let samples = 40_000;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..samples {
        let traj = rollout(&model, &policy, &mut rng).unwrap();
        let history = traj.history(model.num_agents());
        let (belief, _) = condition(&sigma, &history).unwrap();
        let filtered = filter_trajectory(&model, &traj).unwrap();
        for (x, y) in belief.as_ref().iter().zip(&filtered) {
            assert!((x - y).abs() < 1e-9);
        }
        *counts.entry(history.as_flat().to_vec()).or_default() += 1;
    }
    for (history, _) in sigma.iter() {
        let p = sigma.marginal(history);
        let freq = *counts.get(history.as_flat()).unwrap_or(&0) as f64 / samples as f64;
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        assert!((freq - p).abs() <= 4.0 * se + 1e-12, "{history:?}: {freq} vs {p}");
    }
    assert_eq!(counts.values().sum::<usize>(), samples);
}

#[test]
fn single_hyperplane_has_no_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma = random_statistic(3, &[2, 3], &mut rng);
    let gamma = AlphaSet::new(vec![vec![-1.0, -2.0, -0.5]]).unwrap();
    assert_eq!(decentralization_gap(&sigma, &gamma).unwrap(), 0.0);
}
