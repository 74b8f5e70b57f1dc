//! Agent-noise × labeler-noise matrix of post-training returns.
//!
//! Seeds: dataset `k` is drawn from `derive_seed(master, [DATA, k])` and shared by every
//! labeler row, so rows see the same trajectories and differ only in their labels.
//! Training for row `i` uses `[TRAIN, i, k]`; evaluation in column `j` uses
//! `[EVAL, j, k]`, shared by every row of that column.

use beliefrl_core::cpl::{train_cpl, SoftmaxPolicyParams};
use beliefrl_core::mdp::rollout;
use beliefrl_core::preference::generate_dataset;
use beliefrl_core::rng::{derive_seed, stream};
use beliefrl_core::{BeliefSpec, Policy, TabularMdp};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EvalMode, EvalSampling, ExperimentConfig};
use crate::error::CliError;

pub const DATA_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub agent_eps: f64,
    pub labeler_eps: f64,
    pub mean_return: f64,
    pub ci95_halfwidth: f64,
    pub n_samples: usize,
}

/// Row-major over `labeler_eps_list` × `agent_eps_list`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub agent_eps: Vec<f64>,
    pub labeler_eps: Vec<f64>,
    pub cells: Vec<MatrixCell>,
}

impl Matrix {
    pub fn cell(&self, labeler: usize, agent: usize) -> &MatrixCell {
        &self.cells[labeler * self.agent_eps.len() + agent]
    }
}

/// Mean and `1.96·s/√n` with the sample standard deviation; the half-width is 0 for a
/// single sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// The policy the agent actually executes: the trained policy (or its mode) mixed with
/// uniform noise.
pub fn execution_policy(
    params: &SoftmaxPolicyParams,
    sampling: EvalSampling,
    eps: f64,
) -> Result<Policy, CliError> {
    let base = match sampling {
        EvalSampling::Softmax => params.policy()?,
        EvalSampling::Greedy => {
            let actions: Vec<usize> = (0..params.n_states())
                .map(|s| params.logits.argmax(s))
                .collect();
            Policy::deterministic(&actions, params.n_actions())?
        }
    };
    Ok(base.mix_uniform(eps))
}

/// Returns of `n_episodes` capped rollouts.
pub fn episode_returns<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    n_episodes: usize,
    cap: usize,
    mode: EvalMode,
    rng: &mut R,
) -> Vec<f64> {
    let discount = match mode {
        EvalMode::Discounted => mdp.discount(),
        EvalMode::Undiscounted => 1.0,
    };
    (0..n_episodes)
        .map(|_| {
            let traj = rollout(mdp, policy, cap, rng);
            mdp.discounted_return(&traj.transitions, discount)
        })
        .collect()
}

/// Trains one policy per (labeler row, seed), then evaluates each under every agent noise.
pub fn run_matrix(cfg: &ExperimentConfig, mdp: &TabularMdp) -> Result<Matrix, CliError> {
    cfg.validate()?;
    let n_rows = cfg.labeler_eps_list.len();
    let n_cols = cfg.agent_eps_list.len();
    let n_seeds = cfg.seeds();
    let behavior = Policy::uniform(mdp.n_states(), mdp.n_actions());
    let params = cfg.generate_params();
    let mdp_ref = cfg.mdp.label();

    let jobs: Vec<(usize, usize)> = (0..n_rows)
        .flat_map(|i| (0..n_seeds).map(move |k| (i, k)))
        .collect();
    let per_job: Vec<Vec<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let labeler_eps = cfg.labeler_eps_list[i];
            let at = |e: CliError| e.context(format!("cell labeler_eps={labeler_eps}, seed {k}"));
            let belief = BeliefSpec::EpsGreedyClass { eps: labeler_eps };
            let data_seed = derive_seed(cfg.master_seed, &[DATA_STREAM, k as u64]);
            let dataset = generate_dataset(mdp, &behavior, &belief, &params, data_seed, &mdp_ref)
                .map_err(|e| at(e.into()))?;
            let mut train_rng = stream(derive_seed(
                cfg.master_seed,
                &[TRAIN_STREAM, i as u64, k as u64],
            ));
            let trained =
                train_cpl(&dataset, &cfg.cpl, &mut train_rng).map_err(|e| at(e.into()))?;
            cfg.agent_eps_list
                .iter()
                .enumerate()
                .map(|(j, &eps)| {
                    let policy =
                        execution_policy(&trained.params, cfg.eval_sampling, eps).map_err(at)?;
                    let mut rng = stream(derive_seed(
                        cfg.master_seed,
                        &[EVAL_STREAM, j as u64, k as u64],
                    ));
                    Ok(episode_returns(
                        mdp,
                        &policy,
                        cfg.n_eval_episodes,
                        cfg.cap,
                        cfg.eval_mode,
                        &mut rng,
                    ))
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<_, CliError>>()?;

    let mut cells = Vec::with_capacity(n_rows * n_cols);
    for i in 0..n_rows {
        for j in 0..n_cols {
            let pooled: Vec<f64> = (0..n_seeds)
                .flat_map(|k| per_job[i * n_seeds + k][j].iter().copied())
                .collect();
            let (mean, half) = mean_ci95(&pooled);
            cells.push(MatrixCell {
                agent_eps: cfg.agent_eps_list[j],
                labeler_eps: cfg.labeler_eps_list[i],
                mean_return: mean,
                ci95_halfwidth: half,
                n_samples: pooled.len(),
            });
        }
    }
    Ok(Matrix {
        agent_eps: cfg.agent_eps_list.clone(),
        labeler_eps: cfg.labeler_eps_list.clone(),
        cells,
    })
}
