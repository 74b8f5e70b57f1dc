use beliefrl_core::mdp::{build_gridworld, random_mdp, random_policy, rollout};
use beliefrl_core::rng::{derive_seed, stream};
use beliefrl_core::solvers::{
    discounted_state_dist, eps_greedy_value_iteration, expected_return, greedy_policy,
    performance_difference, policy_evaluation,
};
use beliefrl_core::DEFAULT_TOL;
use rand::Rng;

#[test]
fn performance_difference_matches_return_gap_on_100_random_mdps() {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = stream(derive_seed(11, &[i]));
        let n_s = rng.random_range(2..=8);
        let n_a = rng.random_range(2..=4);
        let discount = rng.random_range(0.1..0.95);
        let mdp = random_mdp(n_s, n_a, discount, &mut rng).unwrap();
        let new = random_policy(n_s, n_a, &mut rng);
        let base = random_policy(n_s, n_a, &mut rng);
        let gap = expected_return(&mdp, &new, DEFAULT_TOL).unwrap()
            - expected_return(&mdp, &base, DEFAULT_TOL).unwrap();
        let pd = performance_difference(&mdp, &new, &base).unwrap();
        worst = worst.max((gap - pd).abs());
    }
    assert!(worst < 1e-8, "largest deviation {worst}");
}

#[test]
fn occupancy_is_a_distribution() {
    for i in 0..20u64 {
        let mut rng = stream(derive_seed(12, &[i]));
        let mdp = random_mdp(6, 3, 0.8, &mut rng).unwrap();
        let pi = random_policy(6, 3, &mut rng);
        let d = discounted_state_dist(&mdp, &pi).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(d.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn expected_return_agrees_with_monte_carlo() {
    let mut rng = stream(5);
    let mdp = random_mdp(5, 3, 0.6, &mut rng).unwrap();
    let pi = random_policy(5, 3, &mut rng);
    let exact = expected_return(&mdp, &pi, DEFAULT_TOL).unwrap();
    let n = 20_000;
    let returns: Vec<f64> = (0..n)
        .map(|_| {
            let t = rollout(&mdp, &pi, 80, &mut rng);
            mdp.discounted_return(&t.transitions, 0.6)
        })
        .collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let sd = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    assert!(
        (mean - exact).abs() < 5.0 * se,
        "mc {mean} exact {exact} se {se}"
    );
}

#[test]
fn eps_greedy_values_are_those_of_their_own_greedy_policy() {
    let mdp = build_gridworld(0.7).unwrap();
    for eps in [0.0, 0.1, 0.3, 0.5] {
        let t = eps_greedy_value_iteration(&mdp, eps, DEFAULT_TOL).unwrap();
        let pi = greedy_policy(&t, eps).unwrap();
        let back = policy_evaluation(&mdp, &pi, DEFAULT_TOL).unwrap();
        for s in 0..mdp.n_states() {
            assert!((t.v[s] - back.v[s]).abs() < 1e-8, "eps {eps} state {s}");
        }
    }
}

#[test]
fn gridworld_optimal_start_value() {
    let mdp = build_gridworld(0.7).unwrap();
    let t = eps_greedy_value_iteration(&mdp, 0.0, DEFAULT_TOL).unwrap();
    // left, six moves up, then right into the goal: seven −1 steps and +200 on the eighth
    let expected = -(1.0 - 0.7f64.powi(7)) / 0.3 + 200.0 * 0.7f64.powi(7);
    assert!((t.v[48] - expected).abs() < 1e-9);
}
