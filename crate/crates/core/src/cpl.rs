//! Contrastive Preference Learning over a softmax tabular policy.
//!
//! A segment is scored by its discounted, temperature-scaled log-likelihood
//! `α Σ_t γ^t log π(a_t|s_t)`, and each labeled pair contributes
//! `−log( e^{score⁺} / (e^{score⁺} + e^{λ·score⁻}) ) = softplus(λ·score⁻ − score⁺)`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, Segment};
use crate::preference::{logistic, PreferenceDataset};
use crate::table::SaTable;

/// Learnable logits `θ(s, a)`; the policy is the per-state softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicyParams {
    pub logits: SaTable,
}

impl SoftmaxPolicyParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            logits: SaTable::zeros(n_states, n_actions),
        }
    }

    pub fn n_states(&self) -> usize {
        self.logits.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.logits.n_actions()
    }

    /// `log π(·|s)` via log-sum-exp.
    pub fn log_probs(&self, s: usize) -> Vec<f64> {
        let row = self.logits.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row.iter().map(|x| x - lse).collect()
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = self.logits.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn policy(&self) -> Result<Policy> {
        let mut table = SaTable::zeros(self.n_states(), self.n_actions());
        for s in 0..self.n_states() {
            table.row_mut(s).copy_from_slice(&self.probs(s));
        }
        Policy::new(table)
    }

    pub fn norm(&self) -> f64 {
        self.logits.sum_squares().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CplConfig {
    /// Temperature on the log-likelihood scores.
    pub alpha: f64,
    pub discount: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight on the non-preferred segment's score, in `(0, 1]`.
    pub lambda_bias: f64,
    /// Coefficient of `‖θ‖²`.
    pub l2_coeff: f64,
    /// Number of independent training seeds an experiment should run.
    pub seeds: usize,
    /// Minibatch size; `None` means full-batch descent.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl CplConfig {
    /// The published gridworld hyperparameters with the `0.01` regularizer read as an L2
    /// penalty on the logits.
    pub fn gridworld_preset() -> Self {
        Self {
            alpha: 10.0,
            discount: 0.7,
            learning_rate: 0.5,
            epochs: 20,
            lambda_bias: 1.0,
            l2_coeff: 0.01,
            seeds: 20,
            batch_size: None,
        }
    }

    /// Same hyperparameters with the `0.01` regularizer read as the CPL bias weight on the
    /// non-preferred segment.
    pub fn gridworld_bias_preset() -> Self {
        Self {
            lambda_bias: 0.01,
            l2_coeff: 0.0,
            ..Self::gridworld_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.lambda_bias > 0.0 && self.lambda_bias <= 1.0) {
            return Err(Error::arg(
                "lambda_bias",
                format!("must lie in (0, 1], got {}", self.lambda_bias),
            ));
        }
        if !(self.l2_coeff >= 0.0) {
            return Err(Error::arg(
                "l2_coeff",
                format!("must be non-negative, got {}", self.l2_coeff),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::arg(
                "discount",
                format!("must lie in [0, 1), got {}", self.discount),
            ));
        }
        if !self.alpha.is_finite() {
            return Err(Error::arg("alpha", "must be finite"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::arg("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

impl Default for CplConfig {
    fn default() -> Self {
        Self::gridworld_preset()
    }
}

/// `α Σ_t γ^t log π(a_t|s_t)`.
pub fn cpl_segment_logprob(
    params: &SoftmaxPolicyParams,
    segment: &Segment,
    discount: f64,
    alpha: f64,
) -> f64 {
    let mut total = 0.0;
    let mut w = 1.0;
    for t in segment.transitions() {
        total += w * params.log_probs(t.state)[t.action];
        w *= discount;
    }
    alpha * total
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_dims(params: &SoftmaxPolicyParams, dataset: &PreferenceDataset) -> Result<()> {
    let h = &dataset.header;
    if h.n_states != params.n_states() || h.n_actions != params.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} logits", h.n_states, h.n_actions),
            actual: format!("{}x{}", params.n_states(), params.n_actions()),
        });
    }
    Ok(())
}

/// Mean contrastive loss over `indices` plus `l2_coeff·‖θ‖²`.
fn loss_on(
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
    indices: &[usize],
    cfg: &CplConfig,
) -> f64 {
    let mut total = 0.0;
    for &i in indices {
        let (pos, neg) = dataset.pairs[i].ordered();
        let sp = cpl_segment_logprob(params, pos, cfg.discount, cfg.alpha);
        let sn = cpl_segment_logprob(params, neg, cfg.discount, cfg.alpha);
        total += softplus(cfg.lambda_bias * sn - sp);
    }
    let data_term = if indices.is_empty() {
        0.0
    } else {
        total / indices.len() as f64
    };
    data_term + cfg.l2_coeff * params.logits.sum_squares()
}

/// Adds `weight · ∂score/∂θ` for one segment, where `∂ log π(a|s)/∂θ(s,·) = e_a − π(·|s)`.
fn accumulate_score_grad(
    grad: &mut SaTable,
    params: &SoftmaxPolicyParams,
    segment: &Segment,
    discount: f64,
    weight: f64,
) {
    let mut w = weight;
    for t in segment.transitions() {
        let probs = params.probs(t.state);
        let row = grad.row_mut(t.state);
        for (a, (g, p)) in row.iter_mut().zip(&probs).enumerate() {
            let indicator = if a == t.action { 1.0 } else { 0.0 };
            *g += w * (indicator - p);
        }
        w *= discount;
    }
}

fn grad_on(
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
    indices: &[usize],
    cfg: &CplConfig,
) -> SaTable {
    let mut grad = SaTable::zeros(params.n_states(), params.n_actions());
    if !indices.is_empty() {
        let scale = 1.0 / indices.len() as f64;
        for &i in indices {
            let (pos, neg) = dataset.pairs[i].ordered();
            let sp = cpl_segment_logprob(params, pos, cfg.discount, cfg.alpha);
            let sn = cpl_segment_logprob(params, neg, cfg.discount, cfg.alpha);
            // d softplus(z)/dz = σ(z), z = λ·sn − sp
            let sig = logistic(cfg.lambda_bias * sn - sp) * scale;
            accumulate_score_grad(&mut grad, params, pos, cfg.discount, -sig * cfg.alpha);
            accumulate_score_grad(
                &mut grad,
                params,
                neg,
                cfg.discount,
                sig * cfg.alpha * cfg.lambda_bias,
            );
        }
    }
    for (g, x) in grad.as_mut_slice().iter_mut().zip(params.logits.as_slice()) {
        *g += 2.0 * cfg.l2_coeff * x;
    }
    grad
}

pub fn cpl_loss(
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
    cfg: &CplConfig,
) -> Result<f64> {
    check_dims(params, dataset)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    Ok(loss_on(params, dataset, &all, cfg))
}

/// Exact gradient of [`cpl_loss`] with respect to the logits.
pub fn cpl_grad(
    params: &SoftmaxPolicyParams,
    dataset: &PreferenceDataset,
    cfg: &CplConfig,
) -> Result<SaTable> {
    check_dims(params, dataset)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    Ok(grad_on(params, dataset, &all, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub params: SoftmaxPolicyParams,
    pub policy: Policy,
    /// Full-dataset loss before the first update and after every epoch.
    pub curve: Vec<(usize, f64)>,
}

/// Gradient descent from zero logits for `cfg.epochs` epochs.
///
/// With `batch_size: None` each epoch is one full-batch step and `rng` is untouched;
/// otherwise each epoch shuffles the pairs and takes one step per minibatch.
pub fn train_cpl<R: Rng + ?Sized>(
    dataset: &PreferenceDataset,
    cfg: &CplConfig,
    rng: &mut R,
) -> Result<TrainedPolicy> {
    cfg.validate()?;
    let (n_s, n_a) = (dataset.header.n_states, dataset.header.n_actions);
    let mut params = SoftmaxPolicyParams::zeros(n_s, n_a);
    let all: Vec<usize> = (0..dataset.len()).collect();

    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let initial = loss_on(&params, dataset, &all, cfg);
    curve.push((0, initial));

    let mut order = all.clone();
    for epoch in 1..=cfg.epochs {
        let batches: Vec<&[usize]> = match cfg.batch_size {
            None => vec![&all[..]],
            Some(b) => {
                order.shuffle(rng);
                order.chunks(b).collect()
            }
        };
        for batch in batches {
            let grad = grad_on(&params, dataset, batch, cfg);
            for (x, g) in params.logits.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *x -= cfg.learning_rate * g;
            }
        }
        let loss = loss_on(&params, dataset, &all, cfg);
        if !loss.is_finite() || params.logits.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                param_norm: params.norm(),
            });
        }
        curve.push((epoch, loss));
    }
    let policy = params.policy()?;
    Ok(TrainedPolicy {
        params,
        policy,
        curve,
    })
}
