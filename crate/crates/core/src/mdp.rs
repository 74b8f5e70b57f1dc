//! Finite MDPs, tabular policies, trajectories and the reference environments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::SaTable;

const STOCHASTIC_TOL: f64 = 1e-12;

/// One step `(state, action, next_state)`. Serialized as a three-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

impl Transition {
    pub fn new(state: usize, action: usize, next_state: usize) -> Self {
        Self {
            state,
            action,
            next_state,
        }
    }
}

impl From<[usize; 3]> for Transition {
    fn from([state, action, next_state]: [usize; 3]) -> Self {
        Self::new(state, action, next_state)
    }
}

impl From<Transition> for [usize; 3] {
    fn from(t: Transition) -> Self {
        [t.state, t.action, t.next_state]
    }
}

fn check_chained(transitions: &[Transition]) -> Result<()> {
    for (t, w) in transitions.windows(2).enumerate() {
        if w[0].next_state != w[1].state {
            return Err(Error::InvalidSegment(format!(
                "transition {t} ends in state {} but transition {} starts in state {}",
                w[0].next_state,
                t + 1,
                w[1].state
            )));
        }
    }
    Ok(())
}

/// A non-empty, chained run of transitions. Carries no reward information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Transition>", into = "Vec<Transition>")]
pub struct Segment {
    transitions: Vec<Transition>,
}

impl Segment {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::InvalidSegment(
                "segment must contain at least one transition".into(),
            ));
        }
        check_chained(&transitions)?;
        Ok(Self { transitions })
    }

    pub fn single(state: usize, action: usize, next_state: usize) -> Self {
        Self {
            transitions: vec![Transition::new(state, action, next_state)],
        }
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn first(&self) -> Transition {
        self.transitions[0]
    }

    pub fn start_state(&self) -> usize {
        self.transitions[0].state
    }

    /// Checks every index against the MDP's dimensions.
    pub fn check_bounds(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for t in &self.transitions {
            if t.state >= n_states || t.next_state >= n_states || t.action >= n_actions {
                return Err(Error::InvalidSegment(format!(
                    "transition {:?} out of bounds for {n_states} states and {n_actions} actions",
                    <[usize; 3]>::from(*t)
                )));
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<Transition>> for Segment {
    type Error = Error;

    fn try_from(transitions: Vec<Transition>) -> Result<Self> {
        Segment::new(transitions)
    }
}

impl From<Segment> for Vec<Transition> {
    fn from(s: Segment) -> Self {
        s.transitions
    }
}

/// A rolled-out episode. Unlike [`Segment`] it may be empty (start state already terminal).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// The window of `len` transitions starting at `start`, if it fits.
    pub fn window(&self, start: usize, len: usize) -> Option<Segment> {
        if len == 0 || start + len > self.transitions.len() {
            return None;
        }
        Some(Segment {
            transitions: self.transitions[start..start + len].to_vec(),
        })
    }

    pub fn into_segment(self) -> Result<Segment> {
        Segment::new(self.transitions)
    }
}

/// Stochastic tabular policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub struct Policy {
    probs: SaTable,
}

#[derive(Serialize, Deserialize)]
struct PolicyDocument {
    probs: SaTable,
}

impl TryFrom<PolicyDocument> for Policy {
    type Error = Error;

    fn try_from(doc: PolicyDocument) -> Result<Self> {
        Policy::new(doc.probs)
    }
}

impl From<Policy> for PolicyDocument {
    fn from(p: Policy) -> Self {
        PolicyDocument { probs: p.probs }
    }
}

impl Policy {
    pub fn new(probs: SaTable) -> Result<Self> {
        for s in 0..probs.n_states() {
            let row = probs.row(s);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(SaTable::from_rows(rows)?)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: SaTable::filled(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Point-mass policy playing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::InvalidPolicy(format!(
                "action {bad} out of range for {n_actions} actions"
            )));
        }
        let probs = SaTable::from_fn(actions.len(), n_actions, |s, a| {
            if actions[s] == a {
                1.0
            } else {
                0.0
            }
        });
        Ok(Self { probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn table(&self) -> &SaTable {
        &self.probs
    }

    /// The action played with probability 1 in `s`, if the row is a point mass.
    pub fn deterministic_action(&self, s: usize) -> Option<usize> {
        self.row(s).iter().position(|&p| p == 1.0)
    }

    /// `(1 − eps)·π + eps·uniform`: execution of this policy under ε-greedy action noise.
    pub fn mix_uniform(&self, eps: f64) -> Self {
        let n_a = self.n_actions() as f64;
        let mut probs = self.probs.clone();
        for p in probs.as_mut_slice() {
            *p = (1.0 - eps) * *p + eps / n_a;
        }
        Self { probs }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(s), rng)
    }
}

/// Inverse-CDF draw; falls back to the last positive-mass index on round-off.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Finite MDP with dense `(s, a, s')` transition and reward tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
    start_dist: Vec<f64>,
    terminal: Vec<bool>,
    // Derived: r̄(s,a) = Σ_s' P(s'|s,a) r(s,a,s') and sparse successor lists.
    expected_reward: Vec<f64>,
    successors: Vec<Vec<(usize, f64)>>,
}

/// JSON layout of a [`TabularMdp`]; tensors nest `s → a → s'`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub start_dist: Vec<f64>,
    pub terminal: Vec<bool>,
}

fn flatten_tensor(name: &str, t: Vec<Vec<Vec<f64>>>, n_s: usize, n_a: usize) -> Result<Vec<f64>> {
    if t.len() != n_s
        || t.iter()
            .any(|r| r.len() != n_a || r.iter().any(|c| c.len() != n_s))
    {
        return Err(Error::InvalidMdp(format!(
            "`{name}` must have shape [{n_s}][{n_a}][{n_s}]"
        )));
    }
    Ok(t.into_iter().flatten().flatten().collect())
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let (n_s, n_a) = (doc.n_states, doc.n_actions);
        let transition = flatten_tensor("transition", doc.transition, n_s, n_a)?;
        let reward = flatten_tensor("reward", doc.reward, n_s, n_a)?;
        TabularMdp::new(
            n_s,
            n_a,
            transition,
            reward,
            doc.discount,
            doc.start_dist,
            doc.terminal,
        )
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(m.n_actions * m.n_states)
                .map(|sa| sa.chunks(m.n_states).map(<[f64]>::to_vec).collect())
                .collect()
        };
        MdpDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: nest(&m.transition),
            reward: nest(&m.reward),
            discount: m.discount,
            start_dist: m.start_dist.clone(),
            terminal: m.terminal.clone(),
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP from flat row-major tensors indexed `(s, a, s')`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        start_dist: Vec<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let (n_s, n_a) = (n_states, n_actions);
        if n_s == 0 || n_a == 0 {
            return Err(Error::InvalidMdp(
                "need at least one state and one action".into(),
            ));
        }
        let cube = n_s * n_a * n_s;
        if transition.len() != cube || reward.len() != cube {
            return Err(Error::InvalidMdp(format!(
                "tensors must have {cube} entries"
            )));
        }
        if start_dist.len() != n_s || terminal.len() != n_s {
            return Err(Error::InvalidMdp(format!(
                "start_dist and terminal must have {n_s} entries"
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidMdp(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("rewards must be finite".into()));
        }
        let idx = |s: usize, a: usize, s2: usize| (s * n_a + a) * n_s + s2;
        for s in 0..n_s {
            for a in 0..n_a {
                let row = &transition[idx(s, a, 0)..idx(s, a, 0) + n_s];
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::InvalidMdp(format!(
                        "negative probability at ({s}, {a})"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidMdp(format!("P(·|{s}, {a}) sums to {sum}")));
                }
                if terminal[s] {
                    let absorbing = transition[idx(s, a, s)] == 1.0;
                    let silent = reward[idx(s, a, 0)..idx(s, a, 0) + n_s]
                        .iter()
                        .all(|&r| r == 0.0);
                    if !absorbing || !silent {
                        return Err(Error::InvalidMdp(format!(
                            "terminal state {s} must self-loop with reward 0 under action {a}"
                        )));
                    }
                }
            }
        }
        if start_dist.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidMdp("start_dist has a negative entry".into()));
        }
        let start_sum: f64 = start_dist.iter().sum();
        if (start_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMdp(format!("start_dist sums to {start_sum}")));
        }

        let mut expected_reward = vec![0.0; n_s * n_a];
        let mut successors = Vec::with_capacity(n_s * n_a);
        for s in 0..n_s {
            for a in 0..n_a {
                let mut succ = Vec::new();
                for s2 in 0..n_s {
                    let p = transition[idx(s, a, s2)];
                    if p > 0.0 {
                        expected_reward[s * n_a + a] += p * reward[idx(s, a, s2)];
                        succ.push((s2, p));
                    }
                }
                successors.push(succ);
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
            start_dist,
            terminal,
            expected_reward,
            successors,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.expected_reward[s * self.n_actions + a]
    }

    /// Non-zero entries of `P(·|s, a)`.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + a]
    }

    /// Same dynamics with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidMdp(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        let mut m = self.clone();
        m.discount = discount;
        Ok(m)
    }

    pub fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} policy", self.n_states, self.n_actions),
                actual: format!("{}x{}", policy.n_states(), policy.n_actions()),
            });
        }
        Ok(())
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.start_dist, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let succ = self.successors(s, a);
        if succ.len() == 1 {
            return succ[0].0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(s2, p) in succ {
            acc += p;
            if u < acc {
                return s2;
            }
        }
        succ[succ.len() - 1].0
    }

    /// `Σ_t discount^t · r(s_t, a_t, s_{t+1})` along `transitions`, with `t` starting at 0.
    pub fn discounted_return(&self, transitions: &[Transition], discount: f64) -> f64 {
        let mut g = 0.0;
        let mut w = 1.0;
        for t in transitions {
            g += w * self.reward(t.state, t.action, t.next_state);
            w *= discount;
        }
        g
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Samples a trajectory from the start distribution, stopping on entering a terminal state
/// or after `max_transitions` steps.
pub fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    max_transitions: usize,
    rng: &mut R,
) -> Trajectory {
    let mut transitions = Vec::new();
    let mut s = mdp.sample_start(rng);
    while !mdp.is_terminal(s) && transitions.len() < max_transitions {
        let a = policy.sample(s, rng);
        let s2 = mdp.sample_next(s, a, rng);
        transitions.push(Transition::new(s, a, s2));
        s = s2;
    }
    Trajectory { transitions }
}

// ---------------------------------------------------------------------------
// Gridworld

pub const GRID_SIZE: usize = 7;

/// Cell of the 7x7 gridworld; row 0 is the top row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    row: usize,
    col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Result<Self> {
        if row >= GRID_SIZE || col >= GRID_SIZE {
            return Err(Error::arg(
                "coord",
                format!("({row}, {col}) outside the {GRID_SIZE}x{GRID_SIZE} grid"),
            ));
        }
        Ok(Self { row, col })
    }

    pub fn row(self) -> usize {
        self.row
    }

    pub fn col(self) -> usize {
        self.col
    }

    pub fn state(self) -> usize {
        self.row * GRID_SIZE + self.col
    }

    pub fn from_state(s: usize) -> Result<Self> {
        Self::new(s / GRID_SIZE, s % GRID_SIZE)
    }

    /// Neighbour in direction `action`, or `None` when the move leaves the grid.
    pub fn step(self, action: GridAction) -> Option<Self> {
        let (dr, dc): (isize, isize) = match action {
            GridAction::Up => (-1, 0),
            GridAction::Down => (1, 0),
            GridAction::Left => (0, -1),
            GridAction::Right => (0, 1),
        };
        let r = self.row as isize + dr;
        let c = self.col as isize + dc;
        let size = GRID_SIZE as isize;
        (0..size).contains(&r).then_some(())?;
        (0..size).contains(&c).then_some(())?;
        Some(Self {
            row: r as usize,
            col: c as usize,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Down,
        GridAction::Left,
        GridAction::Right,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Reward layout of the gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldParams {
    pub start: (usize, usize),
    /// `(row, col, reward on entry)` for each terminal cell.
    pub terminals: Vec<(usize, usize, f64)>,
    pub step_reward: f64,
    /// Charged on top of `step_reward` when a move would leave the grid.
    pub off_grid_extra: f64,
}

impl Default for GridworldParams {
    fn default() -> Self {
        Self {
            start: (6, 6),
            terminals: vec![(0, 6, 200.0), (3, 6, -200.0), (4, 6, -200.0)],
            step_reward: -1.0,
            off_grid_extra: -1.0,
        }
    }
}

pub fn build_gridworld(discount: f64) -> Result<TabularMdp> {
    build_gridworld_with(discount, &GridworldParams::default())
}

pub fn build_gridworld_with(discount: f64, params: &GridworldParams) -> Result<TabularMdp> {
    let n_s = GRID_SIZE * GRID_SIZE;
    let n_a = GridAction::ALL.len();
    let mut transition = vec![0.0; n_s * n_a * n_s];
    let mut reward = vec![0.0; n_s * n_a * n_s];
    let mut terminal = vec![false; n_s];
    let mut entry_reward = vec![params.step_reward; n_s];
    for &(r, c, value) in &params.terminals {
        let s = GridCoord::new(r, c)?.state();
        terminal[s] = true;
        entry_reward[s] = value;
    }
    let idx = |s: usize, a: usize, s2: usize| (s * n_a + a) * n_s + s2;
    for s in 0..n_s {
        let here = GridCoord::from_state(s)?;
        for action in GridAction::ALL {
            let a = action.index();
            if terminal[s] {
                transition[idx(s, a, s)] = 1.0;
                continue;
            }
            match here.step(action) {
                Some(next) => {
                    let s2 = next.state();
                    transition[idx(s, a, s2)] = 1.0;
                    reward[idx(s, a, s2)] = entry_reward[s2];
                }
                None => {
                    transition[idx(s, a, s)] = 1.0;
                    reward[idx(s, a, s)] = params.step_reward + params.off_grid_extra;
                }
            }
        }
    }
    let mut start_dist = vec![0.0; n_s];
    start_dist[GridCoord::new(params.start.0, params.start.1)?.state()] = 1.0;
    TabularMdp::new(n_s, n_a, transition, reward, discount, start_dist, terminal)
}

// ---------------------------------------------------------------------------
// Safe/risky case-study MDP

pub mod case_study {
    //! State and action indices of the six-state safe/risky lottery MDP.
    //!
    //! Every state has two action slots. Where fewer named actions exist the spare slot
    //! is a zero-reward self-loop.

    pub const S0: usize = 0;
    pub const S_SAFE: usize = 1;
    pub const S_RISK: usize = 2;
    pub const S_NEUTRAL: usize = 3;
    pub const S_LOSE: usize = 4;
    pub const S_WIN: usize = 5;

    pub const N_STATES: usize = 6;
    pub const N_ACTIONS: usize = 2;

    /// At `S0`.
    pub const A_SAFE: usize = 0;
    /// At `S0`.
    pub const A_RISK: usize = 1;
    /// At `S_RISK`.
    pub const A_WIN: usize = 0;
    /// At `S_RISK`.
    pub const A_LOSE: usize = 1;
    /// At `S_SAFE`: the single named action towards `S_NEUTRAL`.
    pub const A_CONTINUE: usize = 0;

    pub const WIN_REWARD: f64 = 10.0;
    pub const LOSE_REWARD: f64 = -10.0;
}

pub fn build_case_study(discount: f64) -> Result<TabularMdp> {
    use case_study::*;
    let (n_s, n_a) = (N_STATES, N_ACTIONS);
    let mut transition = vec![0.0; n_s * n_a * n_s];
    let mut reward = vec![0.0; n_s * n_a * n_s];
    let idx = |s: usize, a: usize, s2: usize| (s * n_a + a) * n_s + s2;

    // Self-loops everywhere, then overwrite the named edges.
    for s in 0..n_s {
        for a in 0..n_a {
            transition[idx(s, a, s)] = 1.0;
        }
    }
    let mut edge = |s: usize, a: usize, s2: usize, r: f64| {
        transition[idx(s, a, s)] = 0.0;
        transition[idx(s, a, s2)] = 1.0;
        reward[idx(s, a, s2)] = r;
    };
    edge(S0, A_SAFE, S_SAFE, 0.0);
    edge(S0, A_RISK, S_RISK, 0.0);
    edge(S_SAFE, A_CONTINUE, S_NEUTRAL, 0.0);
    edge(S_RISK, A_WIN, S_WIN, WIN_REWARD);
    edge(S_RISK, A_LOSE, S_LOSE, LOSE_REWARD);

    let mut start_dist = vec![0.0; n_s];
    start_dist[S0] = 1.0;
    let mut terminal = vec![false; n_s];
    for s in [S_NEUTRAL, S_LOSE, S_WIN] {
        terminal[s] = true;
    }
    TabularMdp::new(n_s, n_a, transition, reward, discount, start_dist, terminal)
}

// ---------------------------------------------------------------------------
// Random instances

/// Random dense MDP: Dirichlet(1)-like transition rows, rewards uniform in `[-1, 1]`,
/// a random start distribution, and no terminal states.
pub fn random_mdp<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    rng: &mut R,
) -> Result<TabularMdp> {
    let cube = n_states * n_actions * n_states;
    let mut transition = Vec::with_capacity(cube);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(n_states, rng));
    }
    let reward = (0..cube).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let start_dist = random_simplex(n_states, rng);
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        discount,
        start_dist,
        vec![false; n_states],
    )
}

/// Random stochastic policy with rows drawn like [`random_mdp`]'s transition rows.
pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Policy {
    let mut probs = SaTable::zeros(n_states, n_actions);
    for s in 0..n_states {
        probs
            .row_mut(s)
            .copy_from_slice(&random_simplex(n_actions, rng));
    }
    Policy { probs }
}

/// Normalized exponential draws, with the last entry set so the sum is exactly 1 up to
/// one rounding step.
fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = (1.0 - head).max(0.0);
    w
}
