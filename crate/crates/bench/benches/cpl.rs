use std::hint::black_box;

use beliefrl_core::cpl::{cpl_grad, train_cpl, CplConfig, SoftmaxPolicyParams};
use beliefrl_core::mdp::build_gridworld;
use beliefrl_core::preference::{generate_dataset, GenerateParams};
use beliefrl_core::rng::stream;
use beliefrl_core::{BeliefSpec, Policy};
use criterion::{criterion_group, criterion_main, Criterion};

fn cpl(c: &mut Criterion) {
    let mdp = build_gridworld(0.7).unwrap();
    let behavior = Policy::uniform(mdp.n_states(), mdp.n_actions());
    let data = generate_dataset(
        &mdp,
        &behavior,
        &BeliefSpec::EpsGreedyClass { eps: 0.1 },
        &GenerateParams::default(),
        3,
        "gridworld",
    )
    .unwrap();
    let cfg = CplConfig::gridworld_preset();
    let params = SoftmaxPolicyParams::zeros(mdp.n_states(), mdp.n_actions());
    c.bench_function("cpl/grad_500_pairs", |b| {
        b.iter(|| cpl_grad(black_box(&params), black_box(&data), &cfg).unwrap())
    });
    c.bench_function("cpl/train_20_epochs", |b| {
        b.iter(|| train_cpl(black_box(&data), &cfg, &mut stream(0)).unwrap())
    });
}

criterion_group!(benches, cpl);
criterion_main!(benches);
