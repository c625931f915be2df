//! Convex information rewards and their piecewise-linear lower approximation.
//!
//! A differentiable convex `f` on the simplex is approximated from below by
//! `ρ(b) = max_{α∈Γ} <b, α>`, where each `α = ∇f(b_k) − f*(∇f(b_k))` is the
//! tangent hyperplane at a linearization point `b_k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beliefs::{Belief, PlanTimeStatistic};
use crate::error::{Error, Result};

/// Floor applied to belief entries before taking logarithms.
pub const BELIEF_FLOOR: f64 = 1e-12;

/// Bounded, convex, differentiable reward on the probability simplex.
pub trait ConvexReward: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, belief: &[f64]) -> f64;

    fn gradient(&self, belief: &[f64]) -> Vec<f64>;

    /// Convex conjugate `f*(y) = sup_b <y, b> − f(b)`.
    fn conjugate(&self, y: &[f64]) -> f64;

    /// Tangent hyperplane `∇f(b) − f*(∇f(b))`.
    fn tangent(&self, belief: &[f64]) -> Vec<f64> {
        let grad = self.gradient(belief);
        let offset = self.conjugate(&grad);
        grad.into_iter().map(|g| g - offset).collect()
    }
}

/// `f(b) = Σ_s b(s) ln b(s)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegativeEntropy;

impl ConvexReward for NegativeEntropy {
    fn name(&self) -> &str {
        "entropy"
    }

    fn value(&self, belief: &[f64]) -> f64 {
        belief.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum()
    }

    fn gradient(&self, belief: &[f64]) -> Vec<f64> {
        belief.iter().map(|&p| p.max(BELIEF_FLOOR).ln() + 1.0).collect()
    }

    /// Log-sum-exp.
    fn conjugate(&self, y: &[f64]) -> f64 {
        let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    /// `α(s) = ln max(b(s), ε)`; the conjugate term equals one on the simplex.
    fn tangent(&self, belief: &[f64]) -> Vec<f64> {
        belief.iter().map(|&p| p.max(BELIEF_FLOOR).ln()).collect()
    }
}

/// Looks up a built-in reward by name.
pub fn reward_by_name(name: &str) -> Option<Box<dyn ConvexReward>> {
    match name {
        "entropy" | "neg-entropy" | "negative-entropy" => Some(Box::new(NegativeEntropy)),
        _ => None,
    }
}

pub fn tangent_at(f: &dyn ConvexReward, belief: &[f64]) -> Vec<f64> {
    f.tangent(belief)
}

/// Non-empty set `Γ` of hyperplanes over a fixed state count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSet {
    vectors: Vec<Vec<f64>>,
    /// Linearization points, when the vectors are tangents.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    points: Vec<Vec<f64>>,
}

impl AlphaSet {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().ok_or(Error::EmptyGamma)?.len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
        }
        Ok(AlphaSet { vectors, points: Vec::new() })
    }

    /// `Γ = {0}`: the standard Dec-POMDP case.
    pub fn zero(num_states: usize) -> Self {
        AlphaSet { vectors: vec![vec![0.0; num_states]], points: Vec::new() }
    }

    /// Tangents of `f` at each point, in order.
    pub fn from_tangents(f: &dyn ConvexReward, points: &[Belief]) -> Result<Self> {
        let vectors = points.iter().map(|b| f.tangent(b)).collect();
        let mut set = AlphaSet::new(vectors)?;
        set.points = points.iter().map(|b| b.to_vec()).collect();
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Appends another set's vectors (and points, when both record them).
    pub fn extend(&mut self, other: &AlphaSet) {
        let keep_points = self.points.len() == self.vectors.len() && other.points.len() == other.vectors.len();
        self.vectors.extend(other.vectors.iter().cloned());
        if keep_points {
            self.points.extend(other.points.iter().cloned());
        } else {
            self.points.clear();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_{α∈Γ} <b, α>` and the first maximizing index.
pub fn rho_value(gamma: &AlphaSet, belief: &[f64]) -> (f64, usize) {
    let mut best = (dot(belief, &gamma.vectors[0]), 0);
    for (k, alpha) in gamma.vectors.iter().enumerate().skip(1) {
        let v = dot(belief, alpha);
        if v > best.0 {
            best = (v, k);
        }
    }
    best
}

/// Expected centralized prediction reward `ρ̂(σ_h) = Σ_z⃗ σ(z⃗) ρ(σ(·|z⃗))`.
pub fn expected_centralized_reward(sigma: &PlanTimeStatistic, gamma: &AlphaSet) -> Result<f64> {
    if gamma.dim() != sigma.num_states() {
        return Err(Error::DimensionMismatch { expected: sigma.num_states(), found: gamma.dim() });
    }
    let mut total = 0.0;
    for (_, dist) in sigma.iter() {
        let mass: f64 = dist.iter().sum();
        let cond: Vec<f64> = dist.iter().map(|p| p / mass).collect();
        total += mass * rho_value(gamma, &cond).0;
    }
    Ok(total)
}

/// `f̂(σ_h) = Σ_z⃗ σ(z⃗) f(σ(·|z⃗))`.
pub fn expected_true_final_reward(sigma: &PlanTimeStatistic, f: &dyn ConvexReward) -> f64 {
    let mut total = 0.0;
    for (_, dist) in sigma.iter() {
        let mass: f64 = dist.iter().sum();
        let cond: Vec<f64> = dist.iter().map(|p| p / mass).collect();
        total += mass * f.value(&cond);
    }
    total
}

/// `count` points drawn uniformly from the `(dim − 1)`-simplex via sorted-uniform spacings.
pub fn sample_simplex<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Belief> {
    assert!(dim >= 1, "simplex dimension must be at least 1");
    (0..count)
        .map(|_| {
            let mut cuts: Vec<f64> = (0..dim - 1).map(|_| rng.gen::<f64>()).collect();
            cuts.sort_by(f64::total_cmp);
            let mut probs = Vec::with_capacity(dim);
            let mut prev = 0.0;
            for c in cuts {
                probs.push(c - prev);
                prev = c;
            }
            probs.push(1.0 - prev);
            Belief::normalized(probs).expect("spacings have unit mass").0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::JointHistory;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tangent_at_uniform_point() {
        let a = NegativeEntropy.tangent(&[0.5, 0.5]);
        assert!((a[0] - 0.5f64.ln()).abs() < 1e-15 && (a[1] + std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn tangent_at_skewed_point() {
        let a = NegativeEntropy.tangent(&[0.25, 0.75]);
        assert!((a[0] + 1.3863).abs() < 1e-4);
        assert!((a[1] + 0.2877).abs() < 1e-4);
    }

    #[test]
    fn tangent_at_vertex_is_clamped() {
        let a = NegativeEntropy.tangent(&[1.0, 0.0]);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[1], BELIEF_FLOOR.ln());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn generic_tangent_agrees_with_closed_form() {
        for b in [[0.2, 0.3, 0.5], [0.9, 0.05, 0.05]] {
            let f = NegativeEntropy;
            let grad = f.gradient(&b);
            assert!((f.conjugate(&grad) - 1.0).abs() < 1e-12);
            let generic: Vec<f64> = grad.iter().map(|g| g - f.conjugate(&grad)).collect();
            let closed = f.tangent(&b);
            for (x, y) in generic.iter().zip(&closed) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gamma_gives_zero() {
        let g = AlphaSet::zero(3);
        assert_eq!(rho_value(&g, &[0.2, 0.3, 0.5]).0, 0.0);
    }

    #[test]
    fn rho_is_tangent_at_its_point() {
        let b = [0.1, 0.6, 0.3];
        let g = AlphaSet::from_tangents(&NegativeEntropy, &[Belief::new(b.to_vec()).unwrap()]).unwrap();
        assert!((rho_value(&g, &b).0 - NegativeEntropy.value(&b)).abs() < 1e-12);
    }

    #[test]
    fn rho_picks_larger_plane() {
        let g = AlphaSet::new(vec![vec![0.0, -2.0], vec![-2.0, 0.0]]).unwrap();
        let (v, k) = rho_value(&g, &[0.8, 0.2]);
        assert!((v + 0.4).abs() < 1e-12);
        assert_eq!(k, 0);
        // tie goes to the lowest index
        assert_eq!(rho_value(&g, &[0.5, 0.5]).1, 0);
    }

    #[test]
    fn empty_gamma_rejected() {
        assert!(matches!(AlphaSet::new(vec![]), Err(Error::EmptyGamma)));
        assert!(AlphaSet::new(vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    fn two_branch_sigma() -> PlanTimeStatistic {
        PlanTimeStatistic::from_entries(
            1,
            2,
            1,
            [
                (JointHistory::from_steps(1, &[vec![0]]), vec![0.4, 0.1]),
                (JointHistory::from_steps(1, &[vec![1]]), vec![0.1, 0.4]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn centralized_reward_per_branch_maxima() {
        let g = AlphaSet::new(vec![vec![0.0, -2.0], vec![-2.0, 0.0]]).unwrap();
        let v = expected_centralized_reward(&two_branch_sigma(), &g).unwrap();
        assert!((v + 0.4).abs() < 1e-12);
        assert_eq!(expected_centralized_reward(&two_branch_sigma(), &AlphaSet::zero(2)).unwrap(), 0.0);
    }

    #[test]
    fn true_reward_of_uniform_branch() {
        let single = PlanTimeStatistic::from_entries(0, 2, 1, [(JointHistory::empty(1), vec![0.5, 0.5])]).unwrap();
        assert!((expected_true_final_reward(&single, &NegativeEntropy) + 2f64.ln()).abs() < 1e-12);
        let point = PlanTimeStatistic::from_entries(
            1,
            2,
            1,
            [
                (JointHistory::from_steps(1, &[vec![0]]), vec![0.3, 0.0]),
                (JointHistory::from_steps(1, &[vec![1]]), vec![0.0, 0.7]),
            ],
        )
        .unwrap();
        assert_eq!(expected_true_final_reward(&point, &NegativeEntropy), 0.0);
    }

    #[test]
    fn degenerate_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in sample_simplex(1, 5, &mut rng) {
            assert_eq!(&*b, &[1.0]);
        }
    }

    #[test]
    fn simplex_samples_are_deterministic_per_seed() {
        let a = sample_simplex(4, 3, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_simplex(4, 3, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn simplex_coordinate_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = sample_simplex(3, 100_000, &mut rng);
        let mut mean = [0.0; 3];
        for b in &samples {
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.iter().all(|&p| p >= 0.0));
            for (m, p) in mean.iter_mut().zip(b.iter()) {
                *m += p / samples.len() as f64;
            }
        }
        for m in mean {
            assert!((m - 1.0 / 3.0).abs() < 0.01, "mean {m}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn belief(dim: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.0f64..1.0, dim)
                .prop_filter_map("positive mass", |w| Belief::normalized(w).map(|(b, _)| b.into_inner()))
        }

        proptest! {
            #[test]
            fn tangents_lower_bound_entropy(points in proptest::collection::vec(belief(3), 1..5), b in belief(3)) {
                let pts: Vec<Belief> = points.into_iter().map(|p| Belief::new(p).unwrap()).collect();
                let g = AlphaSet::from_tangents(&NegativeEntropy, &pts).unwrap();
                prop_assert!(rho_value(&g, &b).0 <= NegativeEntropy.value(&b) + 1e-9);
            }

            #[test]
            fn rho_is_midpoint_convex(x in belief(3), y in belief(3), gamma in proptest::collection::vec(proptest::collection::vec(-5.0f64..0.0, 3), 1..4)) {
                let g = AlphaSet::new(gamma).unwrap();
                let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                prop_assert!(rho_value(&g, &mid).0 <= 0.5 * (rho_value(&g, &x).0 + rho_value(&g, &y).0) + 1e-12);
            }
        }
    }
}
