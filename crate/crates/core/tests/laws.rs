//! Probability laws, closed-form gradients against finite differences,
//! hyperplane-flip duality and room-world invariants.

use std::sync::Arc;

use asap::envs::{
    build_phi_tabular_actions, make_task_suite, Environment, FeatureBuilder, LinearStateFeatures, RoomWorld,
    TaskDescriptor,
};
use asap::gradient::check_step_gradient;
use asap::learner::{flip_hyperplanes, stream_rng};
use asap::params::{bits_from_index, GeneralizedStep, Parameters, SkillIndex, Temperatures};
use asap::policy::{hyperplane_activation, AsapPolicy};
use proptest::prelude::*;
use rand::Rng;

fn random_policy(rng: &mut asap::Rng64, k: usize, d_psi: usize, actions: usize, beta_scale: f64) -> AsapPolicy {
    let features = FeatureBuilder::new(
        build_phi_tabular_actions(actions).unwrap(),
        Arc::new(LinearStateFeatures { state_dim: d_psi - 1 }),
        0,
    );
    let dims = features.dims(k).unwrap();
    let mut params = Parameters::zeros(dims);
    let theta_len = dims.theta_len();
    for (j, w) in params.omega_mut().iter_mut().enumerate() {
        *w = if j < theta_len { rng.random_range(-2.0..2.0) } else { rng.random_range(-beta_scale..beta_scale) };
    }
    let temps = Temperatures::new(rng.random_range(0.5..2.0), rng.random_range(0.5..20.0)).unwrap();
    AsapPolicy::new(params, temps, features).unwrap()
}

fn no_task() -> TaskDescriptor {
    TaskDescriptor::new("t", vec![])
}

#[test]
fn skill_and_action_distributions_are_normalised() {
    let mut rng = stream_rng(1, 0);
    for _ in 0..1000 {
        let k = rng.random_range(1..=4);
        let d_psi = rng.random_range(2..=8);
        let actions = rng.random_range(2..=6);
        let policy = random_policy(&mut rng, k, d_psi, actions, 1.0);
        let x: Vec<f64> = (0..d_psi - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let skills = policy.skill_distribution(&x, &no_task()).unwrap();
        assert_eq!(skills.probs.len(), 1 << k);
        assert!((skills.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..(1 << k) {
            let sigma = policy.action_distribution(SkillIndex(i), &x).unwrap();
            assert!((sigma.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let marginal = policy.marginal_actions(&x, &no_task()).unwrap();
        assert!((marginal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn skill_probability_is_product_over_bits() {
    let mut rng = stream_rng(2, 0);
    for _ in 0..1000 {
        let k = rng.random_range(1..=5);
        let policy = random_policy(&mut rng, k, 3, 4, 1.0);
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let psi = policy.features.psi(&x, &no_task()).unwrap();
        let skills = policy.skill_distribution(&x, &no_task()).unwrap();
        for i in 0..(1usize << k) {
            let bits = bits_from_index(SkillIndex(i), k).unwrap();
            let brute: f64 = bits
                .iter()
                .enumerate()
                .map(|(kk, &b)| {
                    let p1 = hyperplane_activation(policy.params.beta(kk), &psi, policy.temps.alpha_beta).unwrap();
                    if b == 1 { p1 } else { 1.0 - p1 }
                })
                .product();
            let index: usize = bits.iter().enumerate().map(|(kk, &b)| (b as usize) << kk).sum();
            assert_eq!(index, i);
            assert!((skills.probs[i] - brute).abs() < 1e-12);
        }
    }
}

#[test]
fn step_gradients_match_finite_differences() {
    let mut rng = stream_rng(3, 0);
    for n in 0..100 {
        let k = rng.random_range(1..=3);
        let d_psi = rng.random_range(2..=8);
        let actions = rng.random_range(2..=5);
        let policy = random_policy(&mut rng, k, d_psi, actions, 0.1);
        let x: Vec<f64> = (0..d_psi - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let step = GeneralizedStep {
            state: x.clone(),
            action: rng.random_range(0..actions),
            skill: SkillIndex(rng.random_range(0..1 << k)),
            reward: 0.0,
            next_state: x,
        };
        let report = check_step_gradient(&policy, &step, &no_task(), 1e-5, None).unwrap();
        assert_eq!(report.summary.saturated, 0);
        assert!(report.max_rel_error() < 1e-5, "draw {n}: {:e}", report.max_rel_error());
    }
}

#[test]
fn flipping_hyperplanes_complements_skill_indices() {
    let mut rng = stream_rng(4, 0);
    for _ in 0..200 {
        let k = rng.random_range(1..=4);
        let policy = random_policy(&mut rng, k, 3, 4, 1.0);
        let mut flipped = policy.clone();
        flipped.params = flip_hyperplanes(&policy.params);
        assert_eq!(flip_hyperplanes(&flipped.params), policy.params);
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let p = policy.skill_distribution(&x, &no_task()).unwrap();
        let q = flipped.skill_distribution(&x, &no_task()).unwrap();
        for i in 0..(1usize << k) {
            let c = SkillIndex(i).complement(k);
            assert_eq!(c.0, (1 << k) - 1 - i);
            assert!((p.probs[i] - q.probs[c.0]).abs() < 1e-12);
        }
    }
}

fn world(name: &str) -> RoomWorld {
    make_task_suite(name).unwrap().worlds.remove(0)
}

/// Point `(i, j)` of the lattice reachable from the fixed start.
fn lattice_point(w: &RoomWorld, i: u32, j: u32) -> [f64; 2] {
    let h = w.spec().step_length;
    let asap::envs::Start::Fixed { point } = w.spec().start else { panic!("built-in worlds start at a point") };
    [point[0] % h + h * i as f64, point[1] % h + h * j as f64]
}

proptest! {
    #[test]
    fn moves_never_cross_solid_walls(suite in prop::sample::select(vec!["2R", "flipped2R", "3R"]),
                                     i in 0u32..20, j in 0u32..20, action in 0usize..4) {
        let w = world(suite);
        let x = lattice_point(&w, i, j);
        prop_assume!(RoomWorld::in_bounds(&x));
        let t = w.step_world(&x, action, &mut stream_rng(0, 0)).unwrap();
        prop_assert!(RoomWorld::in_bounds(&t.next_state));
        prop_assert!(!w.blocked(&x, &t.next_state));
        if suite == "3R" {
            for (wx, lo, hi) in [(1.0 / 3.0, 0.6, 0.8), (2.0 / 3.0, 0.2, 0.4)] {
                if (x[0] - wx) * (t.next_state[0] - wx) < 0.0 {
                    prop_assert!(x[1] > lo && x[1] < hi);
                }
            }
        } else if (x[1] - 0.5) * (t.next_state[1] - 0.5) < 0.0 {
            prop_assert!(x[0] > 0.4 && x[0] < 0.6);
        }
    }

    #[test]
    fn random_walks_stay_in_the_unit_square(suite in prop::sample::select(vec!["2R", "flipped2R", "3R"]),
                                            seed in 0u64..1000) {
        let w = world(suite);
        let mut rng = stream_rng(seed, 1);
        let mut x = w.reset(&mut rng);
        for _ in 0..w.horizon() {
            let t = w.step(&x, rng.random_range(0..4), &mut rng).unwrap();
            prop_assert!(RoomWorld::in_bounds(&t.next_state));
            let moved = ((t.next_state[0] - x[0]).powi(2) + (t.next_state[1] - x[1]).powi(2)).sqrt();
            prop_assert!(moved <= w.spec().step_length + 1e-12);
            if t.done {
                break;
            }
            x = t.next_state;
        }
    }

    #[test]
    fn hyperplane_features_are_lipschitz(suite in prop::sample::select(vec!["2R", "3R"]),
                                         x in 0.0f64..1.0, y in 0.0f64..1.0, dx in -1e-3f64..1e-3, dy in -1e-3f64..1e-3) {
        let s = make_task_suite(suite).unwrap();
        let task = s.task(0).clone();
        let a = s.features.psi(&[x, y], &task).unwrap();
        let b = s.features.psi(&[x + dx, y + dy], &task).unwrap();
        let d: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        // sin(3 pi x) has slope at most 3 pi.
        prop_assert!(d <= 3.0 * std::f64::consts::PI * (dx * dx + dy * dy).sqrt() + 1e-12);
    }

    #[test]
    fn skill_probabilities_are_continuous_in_state(x in 0.0f64..1.0, y in 0.0f64..1.0, dx in -1e-6f64..1e-6) {
        let s = make_task_suite("2R").unwrap();
        let params = asap::learner::reference_parameters(&s, 1.0).unwrap();
        let policy = AsapPolicy::new(params, Temperatures::default(), s.features.clone()).unwrap();
        let p = policy.skill_distribution(&[x, y], s.task(0)).unwrap();
        let q = policy.skill_distribution(&[x + dx, y], s.task(0)).unwrap();
        // |d sigma / dz| <= 1/4, z = alpha_beta * 15 * x.
        prop_assert!((p.probs[0] - q.probs[0]).abs() <= 0.25 * 20.0 * 15.0 * dx.abs() + 1e-12);
    }
}
