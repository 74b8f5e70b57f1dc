//! Post-RLHF policies under perturbed capability beliefs.
//!
//! A labeler with belief table `B` labels single-transition pairs by the sign of
//! `B(s, a) − V_B(s)`; the post-RLHF policy plays `argmax_a B(s, a)`. This module finds the
//! best policy any labeling of a fixed pair set can induce, builds a belief realizing it,
//! and checks how far single or simultaneous perturbations of that belief can push the
//! return down.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{case_study, random_mdp, Policy, Segment, TabularMdp, Transition};
use crate::preference::{segment_adv_score, PreferencePair, Side};
use crate::rng::{derive_seed, stream};
use crate::solvers::{expected_return, policy_evaluation, restricted_value_iteration};
use crate::table::SaTable;
use crate::DEFAULT_TOL;

/// Most same-state pairs whose labelings [`best_post_policy`] will enumerate.
pub const MAX_ENUMERATED_PAIRS: usize = 20;

/// Gap enforced between ordered entries of a constructed belief.
pub const BELIEF_MARGIN: f64 = 1e-6;

/// Slack allowed when comparing exact returns against the bound.
pub const BOUND_TOL: f64 = 1e-9;

/// Two single transitions to be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionPair {
    pub first: Transition,
    pub second: Transition,
}

impl TransitionPair {
    pub fn new(first: Transition, second: Transition) -> Self {
        Self { first, second }
    }

    pub fn from_preference_pair(pair: &PreferencePair) -> Result<Self> {
        if pair.first.len() != 1 || pair.second.len() != 1 {
            return Err(Error::MalformedPair(format!(
                "expected single-transition segments, got lengths {} and {}",
                pair.first.len(),
                pair.second.len()
            )));
        }
        Ok(Self::new(pair.first.first(), pair.second.first()))
    }

    /// Whether the pair orders two different actions at one state.
    pub fn is_constraining(&self) -> bool {
        self.first.state == self.second.state && self.first.action != self.second.action
    }

    /// `(winner, loser)` under `label`.
    pub fn ordered(&self, label: Side) -> (Transition, Transition) {
        match label {
            Side::First => (self.first, self.second),
            Side::Second => (self.second, self.first),
        }
    }

    pub fn to_preference_pair(&self, label: Side) -> PreferencePair {
        PreferencePair {
            first: Segment::single(self.first.state, self.first.action, self.first.next_state),
            second: Segment::single(
                self.second.state,
                self.second.action,
                self.second.next_state,
            ),
            label,
            label_prob: if label == Side::First { 1.0 } else { 0.0 },
        }
    }
}

fn check_pairs(mdp: &TabularMdp, pairs: &[TransitionPair]) -> Result<()> {
    for p in pairs {
        for t in [p.first, p.second] {
            if t.state >= mdp.n_states()
                || t.action >= mdp.n_actions()
                || t.next_state >= mdp.n_states()
            {
                return Err(Error::InvalidSegment(format!(
                    "transition ({}, {}, {}) outside {}x{} MDP",
                    t.state,
                    t.action,
                    t.next_state,
                    mdp.n_states(),
                    mdp.n_actions()
                )));
            }
        }
    }
    Ok(())
}

/// Per-state action availability; `None` allows every action.
fn resolve_mask(mdp: &TabularMdp, mask: Option<&[Vec<bool>]>) -> Result<Vec<Vec<bool>>> {
    match mask {
        None => Ok(vec![vec![true; mdp.n_actions()]; mdp.n_states()]),
        Some(m) => {
            if m.len() != mdp.n_states()
                || m.iter()
                    .any(|r| r.len() != mdp.n_actions() || !r.contains(&true))
            {
                return Err(Error::arg(
                    "mask",
                    "need one row per state, one flag per action, and at least one available action per state",
                ));
            }
            Ok(m.to_vec())
        }
    }
}

fn check_table(q: &SaTable, mdp: &TabularMdp) -> Result<()> {
    if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", mdp.n_states(), mdp.n_actions()),
            actual: format!("{}x{}", q.n_states(), q.n_actions()),
        });
    }
    if q.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("belief", "table contains non-finite entries"));
    }
    Ok(())
}

/// Greedy action over the available entries of `row`, lowest index on ties.
fn masked_argmax(row: &[f64], available: &[bool]) -> usize {
    let mut best = None;
    for (a, (&x, &ok)) in row.iter().zip(available).enumerate() {
        if ok && best.is_none_or(|(_, b)| x > b) {
            best = Some((a, x));
        }
    }
    best.map(|(a, _)| a).expect("mask rows are non-empty")
}

fn masked_max(row: &[f64], available: &[bool]) -> f64 {
    row[masked_argmax(row, available)]
}

/// Deterministic greedy policy of a belief table, lowest index on ties.
pub fn post_policy_from_belief(q_belief: &SaTable, mask: Option<&[Vec<bool>]>) -> Result<Policy> {
    if q_belief.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("belief", "table contains non-finite entries"));
    }
    let all = vec![true; q_belief.n_actions()];
    if let Some(m) = mask {
        if m.len() != q_belief.n_states()
            || m.iter()
                .any(|r| r.len() != q_belief.n_actions() || !r.contains(&true))
        {
            return Err(Error::arg("mask", "shape does not match the belief table"));
        }
    }
    let actions: Vec<usize> = (0..q_belief.n_states())
        .map(|s| masked_argmax(q_belief.row(s), mask.map_or(&all[..], |m| &m[s][..])))
        .collect();
    Policy::deterministic(&actions, q_belief.n_actions())
}

/// Noiseless labels a belief induces, plus the number of exact ties (labelled
/// [`Side::First`]).
pub fn label_pairs(
    q_belief: &SaTable,
    pairs: &[TransitionPair],
    mask: Option<&[Vec<bool>]>,
) -> (Vec<Side>, usize) {
    let all = vec![true; q_belief.n_actions()];
    let adv = |t: Transition| {
        let avail = mask.map_or(&all[..], |m| &m[t.state][..]);
        q_belief.get(t.state, t.action) - masked_max(q_belief.row(t.state), avail)
    };
    let mut ties = 0;
    let labels = pairs
        .iter()
        .map(|p| {
            let gap = adv(p.first) - adv(p.second);
            if gap == 0.0 {
                ties += 1;
            }
            if gap >= 0.0 {
                Side::First
            } else {
                Side::Second
            }
        })
        .collect();
    (labels, ties)
}

/// Entrywise `|q_a − q_b|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub per_entry: Vec<(usize, usize, f64)>,
    pub max: f64,
}

pub fn disagreement(q_a: &SaTable, q_b: &SaTable) -> Result<Disagreement> {
    q_a.same_shape(q_b)?;
    let mut per_entry = Vec::with_capacity(q_a.as_slice().len());
    let mut max = 0.0f64;
    for s in 0..q_a.n_states() {
        for a in 0..q_a.n_actions() {
            let m = (q_a.get(s, a) - q_b.get(s, a)).abs();
            max = max.max(m);
            per_entry.push((s, a, m));
        }
    }
    Ok(Disagreement { per_entry, max })
}

/// Strict "beats" relation among actions at each state, transitively closed.
struct Dominance {
    n_actions: usize,
    beats: Vec<Vec<bool>>, // [state][winner * n_actions + loser]
}

impl Dominance {
    fn build(
        n_states: usize,
        n_actions: usize,
        edges: impl Iterator<Item = (usize, usize, usize)>,
    ) -> Option<Self> {
        let mut beats = vec![vec![false; n_actions * n_actions]; n_states];
        for (s, w, l) in edges {
            beats[s][w * n_actions + l] = true;
        }
        for rel in &mut beats {
            for k in 0..n_actions {
                for i in 0..n_actions {
                    if rel[i * n_actions + k] {
                        for j in 0..n_actions {
                            if rel[k * n_actions + j] {
                                rel[i * n_actions + j] = true;
                            }
                        }
                    }
                }
            }
            if (0..n_actions).any(|a| rel[a * n_actions + a]) {
                return None;
            }
        }
        Some(Self { n_actions, beats })
    }

    fn beats(&self, s: usize, winner: usize, loser: usize) -> bool {
        self.beats[s][winner * self.n_actions + loser]
    }

    fn n_winners(&self, s: usize, a: usize) -> usize {
        (0..self.n_actions).filter(|&w| self.beats(s, w, a)).count()
    }

    /// Available actions not beaten by any available action.
    fn allowed(&self, mask: &[Vec<bool>]) -> Vec<Vec<bool>> {
        mask.iter()
            .enumerate()
            .map(|(s, row)| {
                (0..self.n_actions)
                    .map(|a| row[a] && !(0..self.n_actions).any(|w| row[w] && self.beats(s, w, a)))
                    .collect()
            })
            .collect()
    }
}

/// The best policy reachable through some labeling of the pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostOptimum {
    pub policy: Policy,
    pub j_star: f64,
    /// A belief whose greedy policy is `policy` and whose labels rank the pairs the
    /// same way the winning labeling does.
    pub belief: SaTable,
    pub labels: Vec<Side>,
    /// Labelings skipped because they order some state's actions cyclically.
    pub inconsistent_labelings: usize,
}

/// Exhaustive search over labelings of the same-state pairs.
///
/// Under a labeling, a state may play any available action that no available action
/// beats (transitively); the best policy over those per-state action sets comes from
/// restricted value iteration and is scored by exact evaluation. Pairs across different
/// states do not restrict the policy. Ties between labelings keep the first one found.
pub fn best_post_policy(
    mdp: &TabularMdp,
    pairs: &[TransitionPair],
    mask: Option<&[Vec<bool>]>,
) -> Result<PostOptimum> {
    check_pairs(mdp, pairs)?;
    let mask = resolve_mask(mdp, mask)?;
    let constraining: Vec<&TransitionPair> = pairs.iter().filter(|p| p.is_constraining()).collect();
    if constraining.len() > MAX_ENUMERATED_PAIRS {
        return Err(Error::EnumerationTooLarge(format!(
            "{} same-state pairs exceed the limit of {MAX_ENUMERATED_PAIRS}",
            constraining.len()
        )));
    }
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());

    let mut cache: HashMap<Vec<Vec<bool>>, (Vec<usize>, f64)> = HashMap::new();
    let mut best: Option<(u64, Vec<usize>, f64)> = None;
    let mut inconsistent = 0;
    for bits in 0u64..(1u64 << constraining.len()) {
        let edges = constraining.iter().enumerate().map(|(i, p)| {
            let label = if bits >> i & 1 == 0 {
                Side::First
            } else {
                Side::Second
            };
            let (w, l) = p.ordered(label);
            (w.state, w.action, l.action)
        });
        let Some(dom) = Dominance::build(n_s, n_a, edges) else {
            inconsistent += 1;
            continue;
        };
        let allowed = dom.allowed(&mask);
        let (actions, j) = match cache.get(&allowed) {
            Some(hit) => hit.clone(),
            None => {
                let tables = restricted_value_iteration(mdp, &allowed, DEFAULT_TOL)?;
                let actions: Vec<usize> = (0..n_s)
                    .map(|s| masked_argmax(tables.q.row(s), &allowed[s]))
                    .collect();
                let j = expected_return(mdp, &Policy::deterministic(&actions, n_a)?, DEFAULT_TOL)?;
                cache.insert(allowed, (actions.clone(), j));
                (actions, j)
            }
        };
        if best.as_ref().is_none_or(|(_, _, bj)| j > bj + 1e-12) {
            best = Some((bits, actions, j));
        }
    }
    let (bits, actions, j_star) = best.ok_or_else(|| {
        Error::arg(
            "pairs",
            "every labeling orders some state's actions cyclically",
        )
    })?;

    let edges: Vec<(usize, usize, usize)> = constraining
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = if bits >> i & 1 == 0 {
                Side::First
            } else {
                Side::Second
            };
            let (w, l) = p.ordered(label);
            (w.state, w.action, l.action)
        })
        .collect();
    let dom = Dominance::build(n_s, n_a, edges.into_iter()).expect("winning labeling is acyclic");
    let policy = Policy::deterministic(&actions, n_a)?;
    let q = policy_evaluation(mdp, &policy, DEFAULT_TOL)?.q;
    let belief = realize_belief(&q, &dom, &actions, &mask);
    let (labels, _) = label_pairs(&belief, pairs, Some(&mask));
    Ok(PostOptimum {
        policy,
        j_star,
        belief,
        labels,
        inconsistent_labelings: inconsistent,
    })
}

/// Starts from `Q^π` and only lowers entries, except the chosen action (raised to the top
/// of the available actions) and, if needed, unavailable actions that beat it. Keeping
/// every other available entry at or below `Q^π` is what lets a single perturbation of
/// size δ cost at most δ in advantage.
fn realize_belief(q: &SaTable, dom: &Dominance, chosen: &[usize], mask: &[Vec<bool>]) -> SaTable {
    let mut b = q.clone();
    let n_a = q.n_actions();
    for s in 0..q.n_states() {
        let mut order: Vec<usize> = (0..n_a).collect();
        order.sort_by_key(|&a| dom.n_winners(s, a));
        for &l in &order {
            for w in 0..n_a {
                if dom.beats(s, w, l) {
                    let cap = b.get(s, w) - BELIEF_MARGIN;
                    if b.get(s, l) > cap {
                        b.set(s, l, cap);
                    }
                }
            }
        }
        let a_star = chosen[s];
        let top = (0..n_a)
            .filter(|&a| a != a_star && mask[s][a])
            .map(|a| b.get(s, a) + BELIEF_MARGIN)
            .fold(q.get(s, a_star), f64::max);
        b.set(s, a_star, top);
        for &l in order.iter().rev() {
            for w in 0..n_a {
                if dom.beats(s, w, l) {
                    let floor = b.get(s, l) + BELIEF_MARGIN;
                    if b.get(s, w) < floor {
                        b.set(s, w, floor);
                    }
                }
            }
        }
    }
    b
}

/// One belief entry shifted by a signed amount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub state: usize,
    pub action: usize,
    pub delta: f64,
}

impl Perturbation {
    pub fn new(state: usize, action: usize, delta: f64) -> Self {
        Self {
            state,
            action,
            delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub per_pair: Vec<(usize, usize, f64)>,
    pub max_delta: f64,
    /// `j_star − max_delta / (1 − γ)`.
    pub bound_value: f64,
    pub j_star: f64,
    pub j_delta: f64,
    pub holds: bool,
    /// `j_delta − bound_value`.
    pub slack: f64,
    /// Pairs whose perturbed belief scores both sides equally.
    pub ties: usize,
    /// Pairs whose label differs from the unperturbed belief's.
    pub labels_changed: usize,
}

fn perturbed(q: &SaTable, perturbations: &[Perturbation]) -> Result<SaTable> {
    let mut out = q.clone();
    for p in perturbations {
        if p.state >= q.n_states() || p.action >= q.n_actions() {
            return Err(Error::arg(
                "perturbation",
                format!(
                    "entry ({}, {}) outside {}x{} table",
                    p.state,
                    p.action,
                    q.n_states(),
                    q.n_actions()
                ),
            ));
        }
        if !p.delta.is_finite() {
            return Err(Error::arg(
                "perturbation",
                format!("non-finite delta at ({}, {})", p.state, p.action),
            ));
        }
        out.set(p.state, p.action, out.get(p.state, p.action) + p.delta);
    }
    Ok(out)
}

fn evaluate_perturbation(
    mdp: &TabularMdp,
    pairs: &[TransitionPair],
    q_star: &SaTable,
    base_labels: &[Side],
    j_star: f64,
    set: &[Perturbation],
    mask: &[Vec<bool>],
) -> Result<DisagreementReport> {
    let q_delta = perturbed(q_star, set)?;
    let (labels, ties) = label_pairs(&q_delta, pairs, Some(mask));
    let labels_changed = labels
        .iter()
        .zip(base_labels)
        .filter(|(a, b)| a != b)
        .count();
    let pi_delta = post_policy_from_belief(&q_delta, Some(mask))?;
    let j_delta = expected_return(mdp, &pi_delta, DEFAULT_TOL)?;
    let d = disagreement(q_star, &q_delta)?;
    let bound_value = j_star - d.max / (1.0 - mdp.discount());
    Ok(DisagreementReport {
        per_pair: d.per_entry,
        max_delta: d.max,
        bound_value,
        j_star,
        j_delta,
        holds: j_delta >= bound_value - BOUND_TOL,
        slack: j_delta - bound_value,
        ties,
        labels_changed,
    })
}

fn baseline(
    mdp: &TabularMdp,
    pairs: &[TransitionPair],
    q_star: &SaTable,
    mask: Option<&[Vec<bool>]>,
) -> Result<(Vec<Vec<bool>>, Vec<Side>, f64)> {
    check_pairs(mdp, pairs)?;
    check_table(q_star, mdp)?;
    let mask = resolve_mask(mdp, mask)?;
    let (labels, _) = label_pairs(q_star, pairs, Some(&mask));
    let j_star = expected_return(
        mdp,
        &post_policy_from_belief(q_star, Some(&mask))?,
        DEFAULT_TOL,
    )?;
    Ok((mask, labels, j_star))
}

/// Applies each perturbation on its own to `q_star` and compares the return of the
/// resulting greedy policy with the single-disagreement bound. `j_star` is the return of
/// the greedy policy of `q_star`.
pub fn verify_single_perturbations(
    mdp: &TabularMdp,
    pairs: &[TransitionPair],
    q_star: &SaTable,
    perturbations: &[Perturbation],
    mask: Option<&[Vec<bool>]>,
) -> Result<Vec<DisagreementReport>> {
    let (mask, labels, j_star) = baseline(mdp, pairs, q_star, mask)?;
    perturbations
        .iter()
        .map(|p| {
            evaluate_perturbation(
                mdp,
                pairs,
                q_star,
                &labels,
                j_star,
                std::slice::from_ref(p),
                &mask,
            )
        })
        .collect()
}

/// Applies all perturbations together and compares against the bound driven by the
/// largest one.
pub fn verify_simultaneous(
    mdp: &TabularMdp,
    pairs: &[TransitionPair],
    q_star: &SaTable,
    perturbations: &[Perturbation],
    mask: Option<&[Vec<bool>]>,
) -> Result<DisagreementReport> {
    let (mask, labels, j_star) = baseline(mdp, pairs, q_star, mask)?;
    evaluate_perturbation(mdp, pairs, q_star, &labels, j_star, perturbations, &mask)
}

/// Which of the risky and safe first moves a labeler prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipSide {
    Risk,
    Safe,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipOutcome {
    pub p_lose: f64,
    pub discount: f64,
    pub preferred: FlipSide,
    /// Score of the risky transition minus score of the safe one.
    pub gap: f64,
}

/// Labeler who believes the agent loses the gamble with probability `p_lose`, judging the
/// two first moves of the case-study MDP.
pub fn case_study_flip(p_lose: f64, discount: f64) -> Result<FlipOutcome> {
    use case_study::*;
    if !(0.0..=1.0).contains(&p_lose) {
        return Err(Error::arg(
            "p_lose",
            format!("must lie in [0, 1], got {p_lose}"),
        ));
    }
    let mdp = crate::mdp::build_case_study(discount)?;
    let rows = (0..N_STATES)
        .map(|s| {
            if s == S_RISK {
                vec![1.0 - p_lose, p_lose]
            } else {
                vec![1.0, 0.0]
            }
        })
        .collect();
    let belief = Policy::from_rows(rows)?;
    let adv = policy_evaluation(&mdp, &belief, DEFAULT_TOL)?.adv;
    let risk = Segment::single(S0, A_RISK, S_RISK);
    let safe = Segment::single(S0, A_SAFE, S_SAFE);
    let gap = segment_adv_score(&risk, &adv, discount) - segment_adv_score(&safe, &adv, discount);
    let preferred = if gap > 0.0 {
        FlipSide::Risk
    } else if gap < 0.0 {
        FlipSide::Safe
    } else {
        FlipSide::Tie
    };
    Ok(FlipOutcome {
        p_lose,
        discount,
        preferred,
        gap,
    })
}

/// Shape of the randomized verification instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepParams {
    pub n_instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub n_pairs: usize,
    pub min_discount: f64,
    pub max_discount: f64,
    /// Perturbation sizes checked one at a time on every instance.
    pub deltas: Vec<f64>,
    /// Largest number of simultaneous perturbations per instance.
    pub max_simultaneous: usize,
    /// Upper end of the simultaneous perturbation sizes.
    pub max_simultaneous_delta: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            n_instances: 50,
            max_states: 8,
            max_actions: 4,
            n_pairs: 8,
            min_discount: 0.5,
            max_discount: 0.95,
            deltas: vec![0.1, 0.5, 1.0, 5.0],
            max_simultaneous: 4,
            max_simultaneous_delta: 5.0,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_states < 2 || self.max_actions < 2 {
            return Err(Error::arg(
                "max_states",
                "instances need at least 2 states and 2 actions",
            ));
        }
        if !(0.0 <= self.min_discount
            && self.min_discount <= self.max_discount
            && self.max_discount < 1.0)
        {
            return Err(Error::arg(
                "min_discount",
                "need 0 <= min_discount <= max_discount < 1",
            ));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::arg("deltas", "must be finite and non-negative"));
        }
        if self.max_simultaneous == 0 {
            return Err(Error::arg("max_simultaneous", "must be at least 1"));
        }
        if !(self.max_simultaneous_delta >= 0.0 && self.max_simultaneous_delta.is_finite()) {
            return Err(Error::arg(
                "max_simultaneous_delta",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// A random MDP, a random pair set and its normative optimum.
#[derive(Debug, Clone)]
pub struct SweepInstance {
    pub mdp: TabularMdp,
    pub pairs: Vec<TransitionPair>,
    pub optimum: PostOptimum,
}

/// Half the pairs compare two actions at one state; the rest compare transitions at
/// different states.
pub fn random_pairs<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    n_pairs: usize,
    rng: &mut R,
) -> Vec<TransitionPair> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let draw = |s: usize, a: usize, rng: &mut R| Transition::new(s, a, mdp.sample_next(s, a, rng));
    (0..n_pairs)
        .map(|_| {
            let s = rng.random_range(0..n_s);
            let a = rng.random_range(0..n_a);
            let first = draw(s, a, rng);
            let second = if rng.random::<bool>() {
                let b = (a + rng.random_range(1..n_a)) % n_a;
                draw(s, b, rng)
            } else {
                let s2 = (s + rng.random_range(1..n_s)) % n_s;
                let b = rng.random_range(0..n_a);
                draw(s2, b, rng)
            };
            TransitionPair::new(first, second)
        })
        .collect()
}

pub fn sweep_instance(params: &SweepParams, seed: u64, index: usize) -> Result<SweepInstance> {
    params.validate()?;
    let mut rng = stream(derive_seed(seed, &[index as u64]));
    let n_s = rng.random_range(2..=params.max_states);
    let n_a = rng.random_range(2..=params.max_actions);
    let discount = rng.random_range(params.min_discount..=params.max_discount);
    let mdp = random_mdp(n_s, n_a, discount, &mut rng)?;
    let pairs = random_pairs(&mdp, params.n_pairs, &mut rng);
    let optimum = best_post_policy(&mdp, &pairs, None)?;
    Ok(SweepInstance {
        mdp,
        pairs,
        optimum,
    })
}

/// One single-perturbation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub instance: usize,
    pub state: usize,
    pub action: usize,
    pub delta: f64,
    pub j_star: f64,
    pub j_delta: f64,
    pub bound_value: f64,
    pub holds: bool,
}

/// For each δ in the grid: pick a random state, then either push the chosen action down by
/// δ or a random other action up by δ.
pub fn single_perturbation_rows(
    params: &SweepParams,
    seed: u64,
    index: usize,
) -> Result<Vec<SweepRow>> {
    let inst = sweep_instance(params, seed, index)?;
    let mut rng = stream(derive_seed(seed, &[index as u64, 1]));
    let (n_s, n_a) = (inst.mdp.n_states(), inst.mdp.n_actions());
    let perturbations: Vec<Perturbation> = params
        .deltas
        .iter()
        .map(|&delta| {
            let s = rng.random_range(0..n_s);
            let chosen = inst
                .optimum
                .policy
                .deterministic_action(s)
                .expect("deterministic");
            if rng.random::<bool>() {
                Perturbation::new(s, chosen, -delta)
            } else {
                Perturbation::new(s, (chosen + rng.random_range(1..n_a)) % n_a, delta)
            }
        })
        .collect();
    let reports = verify_single_perturbations(
        &inst.mdp,
        &inst.pairs,
        &inst.optimum.belief,
        &perturbations,
        None,
    )?;
    Ok(perturbations
        .iter()
        .zip(reports)
        .map(|(p, r)| SweepRow {
            instance: index,
            state: p.state,
            action: p.action,
            delta: p.delta,
            j_star: r.j_star,
            j_delta: r.j_delta,
            bound_value: r.bound_value,
            holds: r.holds,
        })
        .collect())
}

/// One simultaneous-perturbation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousRow {
    pub instance: usize,
    pub perturbations: Vec<Perturbation>,
    pub max_delta: f64,
    pub j_star: f64,
    pub j_delta: f64,
    pub bound_value: f64,
    pub holds: bool,
}

/// Perturbs up to `max_simultaneous` distinct states at once, each entry by a random signed
/// amount of size at most `max_simultaneous_delta`.
pub fn simultaneous_row(params: &SweepParams, seed: u64, index: usize) -> Result<SimultaneousRow> {
    let inst = sweep_instance(params, seed, index)?;
    let mut rng = stream(derive_seed(seed, &[index as u64, 2]));
    let (n_s, n_a) = (inst.mdp.n_states(), inst.mdp.n_actions());
    let k = rng.random_range(1..=params.max_simultaneous.min(n_s));
    let mut states: Vec<usize> = (0..n_s).collect();
    states.shuffle(&mut rng);
    let perturbations: Vec<Perturbation> = states[..k]
        .iter()
        .map(|&s| {
            let size = rng.random::<f64>() * params.max_simultaneous_delta;
            let chosen = inst
                .optimum
                .policy
                .deterministic_action(s)
                .expect("deterministic");
            if rng.random::<bool>() {
                Perturbation::new(s, chosen, -size)
            } else {
                Perturbation::new(s, (chosen + rng.random_range(1..n_a)) % n_a, size)
            }
        })
        .collect();
    let r = verify_simultaneous(
        &inst.mdp,
        &inst.pairs,
        &inst.optimum.belief,
        &perturbations,
        None,
    )?;
    Ok(SimultaneousRow {
        instance: index,
        perturbations,
        max_delta: r.max_delta,
        j_star: r.j_star,
        j_delta: r.j_delta,
        bound_value: r.bound_value,
        holds: r.holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::build_case_study;
    use crate::solvers::value_iteration;
    use approx::assert_abs_diff_eq;
    use case_study::*;

    fn gamble_pair() -> TransitionPair {
        TransitionPair::new(
            Transition::new(S0, A_RISK, S_RISK),
            Transition::new(S0, A_SAFE, S_SAFE),
        )
    }

    /// Every deterministic policy whose action at each state is available and beats no
    /// labeled winner, brute-forced.
    fn brute_best(mdp: &TabularMdp, pairs: &[TransitionPair], mask: &[Vec<bool>]) -> f64 {
        let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
        let constraining: Vec<_> = pairs.iter().filter(|p| p.is_constraining()).collect();
        let mut best = f64::NEG_INFINITY;
        let total = n_a.pow(n_s as u32);
        for code in 0..total {
            let mut c = code;
            let actions: Vec<usize> = (0..n_s)
                .map(|_| {
                    let a = c % n_a;
                    c /= n_a;
                    a
                })
                .collect();
            if (0..n_s).any(|s| !mask[s][actions[s]]) {
                continue;
            }
            // a policy is reachable iff some acyclic labeling never ranks its action below
            // an available action; orient pairs touching the played action in its favour and
            // the rest by action index
            let edges = constraining.iter().map(|p| {
                let s = p.first.state;
                let second_wins = p.second.action == actions[s]
                    || (p.first.action != actions[s] && p.second.action < p.first.action);
                let label = if second_wins {
                    Side::Second
                } else {
                    Side::First
                };
                let (w, l) = p.ordered(label);
                (s, w.action, l.action)
            });
            let Some(dom) = Dominance::build(n_s, n_a, edges) else {
                continue;
            };
            if dom
                .allowed(mask)
                .iter()
                .zip(&actions)
                .any(|(row, &a)| !row[a])
            {
                continue;
            }
            let pi = Policy::deterministic(&actions, n_a).unwrap();
            best = best.max(expected_return(mdp, &pi, DEFAULT_TOL).unwrap());
        }
        best
    }

    #[test]
    fn disagreement_examples() {
        let q = SaTable::from_rows(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let d = disagreement(&q, &q).unwrap();
        assert_eq!(d.max, 0.0);
        assert!(d.per_entry.iter().all(|e| e.2 == 0.0));

        let mut q2 = q.clone();
        q2.set(1, 0, q2.get(1, 0) + 3.0);
        let d = disagreement(&q, &q2).unwrap();
        assert_eq!(d.max, 3.0);
        assert_eq!(
            d.per_entry.iter().filter(|e| e.2 > 0.0).collect::<Vec<_>>(),
            vec![&(1, 0, 3.0)]
        );

        let shifted = SaTable::from_fn(2, 2, |s, a| q.get(s, a) - 2.5);
        assert_abs_diff_eq!(
            disagreement(&q, &shifted).unwrap().max,
            2.5,
            epsilon = 1e-15
        );

        assert!(matches!(
            disagreement(&q, &SaTable::zeros(3, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn post_policy_examples() {
        let q = SaTable::from_rows(vec![vec![0.0, 5.0, 1.0], vec![2.0, 2.0, 2.0]]).unwrap();
        let pi = post_policy_from_belief(&q, None).unwrap();
        assert_eq!(pi.deterministic_action(0), Some(1));
        assert_eq!(pi.deterministic_action(1), Some(0));
        let mask = vec![vec![true, false, true], vec![false, true, true]];
        let pi = post_policy_from_belief(&q, Some(&mask)).unwrap();
        assert_eq!(pi.deterministic_action(0), Some(2));
        assert_eq!(pi.deterministic_action(1), Some(1));
        let bad = SaTable::from_rows(vec![vec![f64::NAN, 0.0]]).unwrap();
        assert!(post_policy_from_belief(&bad, None).is_err());
    }

    #[test]
    fn raising_one_entry_changes_policy_only_there() {
        let mdp = build_case_study(0.9).unwrap();
        let q = value_iteration(&mdp, DEFAULT_TOL).unwrap().q;
        let base = post_policy_from_belief(&q, None).unwrap();
        let lifted = perturbed(&q, &[Perturbation::new(S0, A_SAFE, 9.5)]).unwrap();
        let pi = post_policy_from_belief(&lifted, None).unwrap();
        for s in 0..N_STATES {
            let same = pi.deterministic_action(s) == base.deterministic_action(s);
            assert_eq!(same, s != S0, "state {s}");
        }
    }

    #[test]
    fn no_pairs_gives_the_optimal_policy() {
        let mdp = build_case_study(0.9).unwrap();
        let opt = best_post_policy(&mdp, &[], None).unwrap();
        let vi = value_iteration(&mdp, DEFAULT_TOL).unwrap();
        let j_opt: f64 = mdp.start_dist().iter().zip(&vi.v).map(|(m, v)| m * v).sum();
        assert_abs_diff_eq!(opt.j_star, j_opt, epsilon = 1e-9);
        assert_eq!(
            post_policy_from_belief(&opt.belief, None).unwrap(),
            opt.policy
        );
    }

    #[test]
    fn case_study_optimum_prefers_the_gamble() {
        let mdp = build_case_study(0.9).unwrap();
        let opt = best_post_policy(&mdp, &[gamble_pair()], None).unwrap();
        assert_abs_diff_eq!(opt.j_star, 9.0, epsilon = 1e-9);
        assert_eq!(opt.labels, vec![Side::First]);
        assert_eq!(opt.policy.deterministic_action(S0), Some(A_RISK));
    }

    #[test]
    fn case_study_optimum_when_the_agent_always_loses() {
        let mdp = build_case_study(0.9).unwrap();
        let mut mask = vec![vec![true; N_ACTIONS]; N_STATES];
        mask[S_RISK] = vec![false, true];
        let opt = best_post_policy(&mdp, &[gamble_pair()], Some(&mask)).unwrap();
        assert_abs_diff_eq!(opt.j_star, 0.0, epsilon = 1e-9);
        assert_eq!(opt.labels, vec![Side::Second]);
        assert_eq!(opt.policy.deterministic_action(S_RISK), Some(A_LOSE));
    }

    #[test]
    fn cyclic_labelings_are_skipped() {
        let mdp = random_mdp(2, 3, 0.8, &mut stream(3)).unwrap();
        let t = |a| Transition::new(0, a, 0);
        let pairs = vec![
            TransitionPair::new(t(0), t(1)),
            TransitionPair::new(t(1), t(2)),
            TransitionPair::new(t(2), t(0)),
        ];
        let opt = best_post_policy(&mdp, &pairs, None).unwrap();
        assert_eq!(opt.inconsistent_labelings, 2);
    }

    #[test]
    fn enumeration_cap() {
        let mdp = random_mdp(2, 2, 0.8, &mut stream(3)).unwrap();
        let pair = TransitionPair::new(Transition::new(0, 0, 0), Transition::new(0, 1, 0));
        let pairs = vec![pair; MAX_ENUMERATED_PAIRS + 1];
        assert!(matches!(
            best_post_policy(&mdp, &pairs, None),
            Err(Error::EnumerationTooLarge(_))
        ));
        let cross = TransitionPair::new(Transition::new(0, 0, 0), Transition::new(1, 1, 0));
        assert!(best_post_policy(&mdp, &vec![cross; 40], None).is_ok());
    }

    #[test]
    fn enumeration_matches_brute_force_and_belief_realizes_it() {
        let mut rng = stream(77);
        for _ in 0..30 {
            let n_s = rng.random_range(2..=4);
            let n_a = rng.random_range(2..=3);
            let mdp = random_mdp(n_s, n_a, rng.random_range(0.3..0.95), &mut rng).unwrap();
            let pairs = random_pairs(&mdp, 6, &mut rng);
            let mask: Vec<Vec<bool>> = (0..n_s)
                .map(|_| {
                    let mut row: Vec<bool> = (0..n_a).map(|_| rng.random_bool(0.8)).collect();
                    row[rng.random_range(0..n_a)] = true;
                    row
                })
                .collect();
            let opt = best_post_policy(&mdp, &pairs, Some(&mask)).unwrap();
            assert_abs_diff_eq!(opt.j_star, brute_best(&mdp, &pairs, &mask), epsilon = 1e-8);

            assert_eq!(
                post_policy_from_belief(&opt.belief, Some(&mask)).unwrap(),
                opt.policy
            );
            let q = policy_evaluation(&mdp, &opt.policy, DEFAULT_TOL).unwrap().q;
            for s in 0..n_s {
                let chosen = opt.policy.deterministic_action(s).unwrap();
                assert!(opt.belief.get(s, chosen) >= q.get(s, chosen));
                for a in (0..n_a).filter(|&a| a != chosen && mask[s][a]) {
                    assert!(opt.belief.get(s, a) <= q.get(s, a));
                }
            }
            let (labels, _) = label_pairs(&opt.belief, &pairs, Some(&mask));
            assert_eq!(labels, opt.labels);
            let ordering: Vec<TransitionPair> = pairs
                .iter()
                .copied()
                .filter(|p| p.is_constraining())
                .collect();
            assert_eq!(label_pairs(&opt.belief, &ordering, Some(&mask)).1, 0);
        }
    }

    #[test]
    fn zero_and_unvisited_perturbations_cost_nothing() {
        let mdp = build_case_study(0.9).unwrap();
        let opt = best_post_policy(&mdp, &[gamble_pair()], None).unwrap();
        let reports = verify_single_perturbations(
            &mdp,
            &[gamble_pair()],
            &opt.belief,
            &[
                Perturbation::new(S0, A_RISK, 0.0),
                Perturbation::new(S_SAFE, 1, 50.0),
            ],
            None,
        )
        .unwrap();
        assert_eq!(reports[0].j_delta, reports[0].j_star);
        assert_eq!(reports[0].slack, 0.0);
        assert!(reports[0].holds);
        // s_safe is never visited once the gamble is taken
        assert_abs_diff_eq!(reports[1].j_delta, reports[1].j_star, epsilon = 1e-12);
        assert!(reports[1].holds && reports[1].slack > 400.0);
    }

    #[test]
    fn flipping_the_case_study_label_stays_within_the_bound() {
        let mdp = build_case_study(0.9).unwrap();
        let opt = best_post_policy(&mdp, &[gamble_pair()], None).unwrap();
        let r = &verify_single_perturbations(
            &mdp,
            &[gamble_pair()],
            &opt.belief,
            &[Perturbation::new(S0, A_SAFE, 9.5)],
            None,
        )
        .unwrap()[0];
        assert_eq!(r.labels_changed, 1);
        assert_abs_diff_eq!(r.j_delta, 0.0, epsilon = 1e-9);
        assert!(r.holds);
    }

    #[test]
    fn simultaneous_edge_cases() {
        let mdp = build_case_study(0.9).unwrap();
        let opt = best_post_policy(&mdp, &[gamble_pair()], None).unwrap();
        let zero = verify_simultaneous(
            &mdp,
            &[gamble_pair()],
            &opt.belief,
            &[
                Perturbation::new(S0, 0, 0.0),
                Perturbation::new(S_RISK, 1, 0.0),
            ],
            None,
        )
        .unwrap();
        assert_eq!(zero.j_delta, zero.j_star);
        assert!(zero.holds);

        let dominant = verify_simultaneous(
            &mdp,
            &[gamble_pair()],
            &opt.belief,
            &[
                Perturbation::new(S0, A_SAFE, 4.0),
                Perturbation::new(S_RISK, A_LOSE, 1e-9),
            ],
            None,
        )
        .unwrap();
        assert_eq!(dominant.max_delta, 4.0);
        assert_abs_diff_eq!(dominant.bound_value, dominant.j_star - 40.0, epsilon = 1e-9);
    }

    #[test]
    fn two_disagreements_at_one_state_can_exceed_the_max_bound() {
        // pulling the chosen action down and an alternative up at the same state adds
        // the two gaps, so the loss can exceed max δ / (1 − γ)
        let mdp = build_case_study(0.9).unwrap();
        let opt = best_post_policy(&mdp, &[], None).unwrap();
        let r = verify_simultaneous(
            &mdp,
            &[],
            &opt.belief,
            &[
                Perturbation::new(S0, A_RISK, -5.0),
                Perturbation::new(S0, A_SAFE, 5.0),
            ],
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(r.j_delta, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.bound_value, 9.0 - 50.0, epsilon = 1e-9);
        assert!(r.holds);

        let pair = TransitionPair::new(Transition::new(0, 0, 0), Transition::new(0, 1, 0));
        let mdp = TabularMdp::new(
            1,
            2,
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            0.5,
            vec![1.0],
            vec![false],
        )
        .unwrap();
        let opt = best_post_policy(&mdp, &[pair], None).unwrap();
        assert_abs_diff_eq!(opt.j_star, 2.0, epsilon = 1e-9);
        // belief gap is 1; ±0.6 on each side swaps the greedy action
        let r = verify_simultaneous(
            &mdp,
            &[pair],
            &opt.belief,
            &[Perturbation::new(0, 0, -0.6), Perturbation::new(0, 1, 0.6)],
            None,
        )
        .unwrap();
        assert_abs_diff_eq!(r.j_delta, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.bound_value, 2.0 - 1.2, epsilon = 1e-9);
        assert!(!r.holds);
    }

    #[test]
    fn flip_examples() {
        for &gamma in &[0.1, 0.5, 0.9] {
            let r = case_study_flip(0.0, gamma).unwrap();
            assert_eq!(r.preferred, FlipSide::Risk);
            assert_abs_diff_eq!(r.gap, 10.0 * gamma, epsilon = 1e-10);
            let s = case_study_flip(1.0, gamma).unwrap();
            assert_eq!(s.preferred, FlipSide::Safe);
            assert_abs_diff_eq!(s.gap, -10.0 * gamma, epsilon = 1e-10);
            let t = case_study_flip(0.5, gamma).unwrap();
            assert_eq!(t.preferred, FlipSide::Tie);
            assert_eq!(t.gap, 0.0);
        }
        assert!(case_study_flip(1.5, 0.9).is_err());
    }

    #[test]
    fn random_belief_never_beats_the_optimum() {
        let mut rng = stream(12);
        for _ in 0..20 {
            let mdp = random_mdp(
                rng.random_range(2..=4),
                rng.random_range(2..=3),
                0.8,
                &mut rng,
            )
            .unwrap();
            let pairs = random_pairs(&mdp, 5, &mut rng);
            let opt = best_post_policy(&mdp, &pairs, None).unwrap();
            for _ in 0..10 {
                let b = SaTable::from_fn(mdp.n_states(), mdp.n_actions(), |_, _| {
                    rng.random_range(-5.0..5.0)
                });
                let j = expected_return(
                    &mdp,
                    &post_policy_from_belief(&b, None).unwrap(),
                    DEFAULT_TOL,
                )
                .unwrap();
                assert!(j <= opt.j_star + 1e-9);
            }
        }
    }

    #[test]
    fn preference_pair_conversion() {
        let p = gamble_pair().to_preference_pair(Side::Second);
        assert_eq!(
            TransitionPair::from_preference_pair(&p).unwrap(),
            gamble_pair()
        );
        let long = PreferencePair::new(
            Segment::new(vec![Transition::new(0, 0, 1), Transition::new(1, 0, 2)]).unwrap(),
            Segment::new(vec![Transition::new(0, 1, 1), Transition::new(1, 0, 2)]).unwrap(),
            Side::First,
            0.5,
        )
        .unwrap();
        assert!(TransitionPair::from_preference_pair(&long).is_err());
    }

    #[test]
    fn sweep_is_deterministic_and_holds() {
        let params = SweepParams {
            n_instances: 3,
            ..SweepParams::default()
        };
        for i in 0..3 {
            let a = single_perturbation_rows(&params, 9, i).unwrap();
            assert_eq!(a, single_perturbation_rows(&params, 9, i).unwrap());
            assert_eq!(a.len(), 4);
            assert!(a.iter().all(|r| r.holds));
            assert!(simultaneous_row(&params, 9, i).unwrap().holds);
        }
    }
}
