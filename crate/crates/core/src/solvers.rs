//! Exact dynamic programming on [`TabularMdp`]s.
//!
//! All routines treat terminal states as absorbing with value 0. Linear systems are
//! solved directly when `n_states · n_actions ≤ 10^4` and by fixed-point iteration
//! otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMdp};
use crate::table::{argmax, SaTable};

const DIRECT_SOLVE_LIMIT: usize = 10_000;
const MAX_SWEEPS: usize = 10_000_000;

/// `Q`, `V` and `A = Q − V` for one policy (or for the optimum of a policy class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub q: SaTable,
    pub v: Vec<f64>,
    pub adv: SaTable,
}

impl ValueTables {
    /// Assembles tables from `q` and `v`, with `adv = q − v` and terminal rows zeroed.
    pub fn from_q_v(mdp: &TabularMdp, mut q: SaTable, mut v: Vec<f64>) -> Self {
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                q.row_mut(s).fill(0.0);
                v[s] = 0.0;
            }
        }
        let adv = SaTable::from_fn(q.n_states(), q.n_actions(), |s, a| q.get(s, a) - v[s]);
        Self { q, v, adv }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::arg("tol", format!("must be positive, got {tol}")));
    }
    Ok(())
}

/// One-step lookahead `r̄(s,a) + γ Σ_s' P(s'|s,a) v(s')`.
#[inline]
fn lookahead(mdp: &TabularMdp, v: &[f64], s: usize, a: usize) -> f64 {
    let future: f64 = mdp.successors(s, a).iter().map(|&(s2, p)| p * v[s2]).sum();
    mdp.expected_reward(s, a) + mdp.discount() * future
}

/// Iterates `Q ← r̄ + γ P backup(Q)` until the sup-norm change drops below `tol`, which
/// bounds the Bellman residual of the returned table by `γ·tol`.
fn bellman_fixed_point(
    mdp: &TabularMdp,
    tol: f64,
    backup: impl Fn(usize, &[f64]) -> f64,
) -> (SaTable, Vec<f64>) {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut q = SaTable::zeros(n_s, n_a);
    let mut v = vec![0.0; n_s];
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        let mut next = SaTable::zeros(n_s, n_a);
        for s in 0..n_s {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..n_a {
                let x = lookahead(mdp, &v, s, a);
                delta = delta.max((x - q.get(s, a)).abs());
                next.set(s, a, x);
            }
        }
        q = next;
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = if mdp.is_terminal(s) {
                0.0
            } else {
                backup(s, q.row(s))
            };
        }
        if delta < tol {
            break;
        }
    }
    (q, v)
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn row_mean(row: &[f64]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// Optimal tables `Q*`, `V* = max_a Q*`, `A*`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<ValueTables> {
    check_tol(tol)?;
    let (q, v) = bellman_fixed_point(mdp, tol, |_, row| row_max(row));
    Ok(ValueTables::from_q_v(mdp, q, v))
}

/// Best policy within the ε-greedy class: the fixed point of the backup
/// `(1 − ε)·max_a Q + ε·mean_a Q`.
pub fn eps_greedy_value_iteration(mdp: &TabularMdp, eps: f64, tol: f64) -> Result<ValueTables> {
    check_tol(tol)?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::arg("eps", format!("must lie in [0, 1], got {eps}")));
    }
    let (q, v) = bellman_fixed_point(mdp, tol, |_, row| {
        (1.0 - eps) * row_max(row) + eps * row_mean(row)
    });
    Ok(ValueTables::from_q_v(mdp, q, v))
}

/// Optimal values when state `s` may only use actions with `allowed[s][a] == true`.
///
/// Disallowed entries of the returned `q` still hold their one-step lookahead values.
pub fn restricted_value_iteration(
    mdp: &TabularMdp,
    allowed: &[Vec<bool>],
    tol: f64,
) -> Result<ValueTables> {
    check_tol(tol)?;
    if allowed.len() != mdp.n_states()
        || allowed
            .iter()
            .any(|r| r.len() != mdp.n_actions() || !r.contains(&true))
    {
        return Err(Error::arg(
            "allowed",
            "need one row per state, one flag per action, and at least one allowed action per state",
        ));
    }
    let (q, v) = bellman_fixed_point(mdp, tol, |s, row| {
        row.iter()
            .zip(&allowed[s])
            .filter(|(_, &ok)| ok)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(ValueTables::from_q_v(mdp, q, v))
}

/// Transition matrix and reward vector of the Markov chain induced by `policy`.
/// Terminal rows are left zero so that terminal values are pinned to 0.
fn induced_chain(mdp: &TabularMdp, policy: &Policy) -> (DMatrix<f64>, DVector<f64>) {
    let n_s = mdp.n_states();
    let mut p = DMatrix::zeros(n_s, n_s);
    let mut r = DVector::zeros(n_s);
    for s in 0..n_s {
        if mdp.is_terminal(s) {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            r[s] += pi * mdp.expected_reward(s, a);
            for &(s2, pt) in mdp.successors(s, a) {
                p[(s, s2)] += pi * pt;
            }
        }
    }
    (p, r)
}

fn state_values(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<Vec<f64>> {
    let n_s = mdp.n_states();
    if n_s * mdp.n_actions() <= DIRECT_SOLVE_LIMIT {
        let (p, r) = induced_chain(mdp, policy);
        let system = DMatrix::identity(n_s, n_s) - p * mdp.discount();
        let v = system
            .lu()
            .solve(&r)
            .ok_or(Error::Singular("evaluating a policy"))?;
        return Ok(v.iter().copied().collect());
    }
    let (_, v) = bellman_fixed_point(mdp, tol, |s, row| {
        row.iter().zip(policy.row(s)).map(|(q, p)| q * p).sum()
    });
    Ok(v)
}

/// `Q^π`, `V^π(s) = Σ_a π(a|s) Q^π(s,a)` and `A^π`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<ValueTables> {
    check_tol(tol)?;
    mdp.check_policy(policy)?;
    let v0 = state_values(mdp, policy, tol)?;
    let q = SaTable::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        if mdp.is_terminal(s) {
            0.0
        } else {
            lookahead(mdp, &v0, s, a)
        }
    });
    let v = (0..mdp.n_states())
        .map(|s| q.row(s).iter().zip(policy.row(s)).map(|(x, p)| x * p).sum())
        .collect();
    Ok(ValueTables::from_q_v(mdp, q, v))
}

/// Greedy policy over `tables.q`, softened to ε-greedy: the argmax (lowest index on ties)
/// gets `1 − eps + eps/|A|`, every other action `eps/|A|`.
pub fn greedy_policy(tables: &ValueTables, eps: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::arg("eps", format!("must lie in [0, 1], got {eps}")));
    }
    let (n_s, n_a) = (tables.q.n_states(), tables.q.n_actions());
    let actions: Vec<usize> = (0..n_s).map(|s| argmax(tables.q.row(s))).collect();
    Ok(Policy::deterministic(&actions, n_a)?.mix_uniform(eps))
}

/// `J^π = Σ_s μ(s) V^π(s)`.
pub fn expected_return(mdp: &TabularMdp, policy: &Policy, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    mdp.check_policy(policy)?;
    let v = state_values(mdp, policy, tol)?;
    Ok(mdp.start_dist().iter().zip(&v).map(|(m, x)| m * x).sum())
}

/// Discounted occupancy `d(s) = (1 − γ) Σ_t γ^t P(s_t = s)` from the start distribution.
///
/// States unreachable under `policy` get exactly 0; the rest solve
/// `(I − γ P_πᵀ) x = μ` restricted to the reachable set.
pub fn discounted_state_dist(mdp: &TabularMdp, policy: &Policy) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let n_s = mdp.n_states();
    let gamma = mdp.discount();

    let mut reachable = vec![false; n_s];
    let mut stack: Vec<usize> = (0..n_s).filter(|&s| mdp.start_dist()[s] > 0.0).collect();
    for &s in &stack {
        reachable[s] = true;
    }
    while let Some(s) = stack.pop() {
        for a in 0..mdp.n_actions() {
            if policy.prob(s, a) == 0.0 {
                continue;
            }
            for &(s2, _) in mdp.successors(s, a) {
                if !reachable[s2] {
                    reachable[s2] = true;
                    stack.push(s2);
                }
            }
        }
    }
    let states: Vec<usize> = (0..n_s).filter(|&s| reachable[s]).collect();
    let mut pos = vec![usize::MAX; n_s];
    for (i, &s) in states.iter().enumerate() {
        pos[s] = i;
    }

    // Terminal states keep their self-loop here: occupancy accumulates in them.
    let m = states.len();
    let mut system = DMatrix::identity(m, m);
    for (i, &s) in states.iter().enumerate() {
        for a in 0..mdp.n_actions() {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            for &(s2, pt) in mdp.successors(s, a) {
                system[(pos[s2], i)] -= gamma * pi * pt;
            }
        }
    }
    let mu = DVector::from_iterator(m, states.iter().map(|&s| mdp.start_dist()[s]));
    let x = system.lu().solve(&mu).ok_or(Error::Singular(
        "computing the discounted state distribution",
    ))?;
    let mut d = vec![0.0; n_s];
    for (i, &s) in states.iter().enumerate() {
        d[s] = ((1.0 - gamma) * x[i]).max(0.0);
    }
    Ok(d)
}

/// Right-hand side of the performance-difference identity:
/// `J(new) − J(base) = 1/(1 − γ) · E_{s∼d^new} E_{a∼new}[A^base(s, a)]`.
pub fn performance_difference(mdp: &TabularMdp, pi_new: &Policy, pi_base: &Policy) -> Result<f64> {
    mdp.check_policy(pi_new)?;
    mdp.check_policy(pi_base)?;
    let d = discounted_state_dist(mdp, pi_new)?;
    let base = policy_evaluation(mdp, pi_base, crate::DEFAULT_TOL)?;
    let mut total = 0.0;
    for (s, &ds) in d.iter().enumerate() {
        if ds == 0.0 {
            continue;
        }
        let inner: f64 = pi_new
            .row(s)
            .iter()
            .zip(base.adv.row(s))
            .map(|(p, a)| p * a)
            .sum();
        total += ds * inner;
    }
    Ok(total / (1.0 - mdp.discount()))
}
