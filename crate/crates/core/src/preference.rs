//! Segment scoring, the three pairwise preference models, and synthetic datasets.
//!
//! All three models are Bradley–Terry comparisons of a per-segment score:
//!
//! * partial return: `Σ_t γ^t r_t`
//! * regret: `Σ_t γ^t A*(s_t, a_t)`
//! * belief: `Σ_t γ^t A^belief(s_t, a_t)` for whatever capability the labeler imagines
//!
//! with `t` counted from each segment's own first transition.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout, Policy, Segment, TabularMdp, Trajectory};
use crate::rng::stream;
use crate::solvers::{eps_greedy_value_iteration, policy_evaluation, value_iteration};
use crate::table::SaTable;
use crate::DEFAULT_TOL;

/// Inverse temperature of a preference model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    /// The `α → ∞` limit: the higher-scoring segment is always preferred.
    Noiseless,
}

impl Alpha {
    pub fn is_noiseless(self) -> bool {
        matches!(self, Alpha::Noiseless)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Alpha::Finite(a) if !(a >= 0.0) || !a.is_finite() => Err(Error::arg(
                "alpha",
                format!("must be finite and non-negative, got {a}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Finite(f64),
    Named(String),
}

impl Serialize for Alpha {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Alpha::Finite(a) => AlphaRepr::Finite(a),
            Alpha::Noiseless => AlphaRepr::Named("noiseless".into()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        match AlphaRepr::deserialize(deserializer)? {
            AlphaRepr::Finite(a) => Ok(Alpha::Finite(a)),
            AlphaRepr::Named(s) if s == "noiseless" => Ok(Alpha::Noiseless),
            AlphaRepr::Named(s) => Err(serde::de::Error::custom(format!(
                "alpha must be a number or \"noiseless\", got \"{s}\""
            ))),
        }
    }
}

/// Which segment of a pair was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    First,
    Second,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::First => Side::Second,
            Side::Second => Side::First,
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `P(first ≻ second)` for a score gap `score_first − score_second`.
pub fn bradley_terry(gap: f64, alpha: Alpha) -> f64 {
    match alpha {
        Alpha::Finite(a) => logistic(a * gap),
        Alpha::Noiseless if gap > 0.0 => 1.0,
        Alpha::Noiseless if gap < 0.0 => 0.0,
        Alpha::Noiseless => 0.5,
    }
}

/// `Σ_{t=0}^{|σ|-1} discount^t · adv(s_t, a_t)`.
pub fn segment_adv_score(segment: &Segment, adv: &SaTable, discount: f64) -> f64 {
    let mut score = 0.0;
    let mut w = 1.0;
    for t in segment.transitions() {
        score += w * adv.get(t.state, t.action);
        w *= discount;
    }
    score
}

fn check_pair(seg_a: &Segment, seg_b: &Segment, n_states: usize, n_actions: usize) -> Result<()> {
    if seg_a.len() != seg_b.len() {
        return Err(Error::MalformedPair(format!(
            "segments have lengths {} and {}",
            seg_a.len(),
            seg_b.len()
        )));
    }
    seg_a.check_bounds(n_states, n_actions)?;
    seg_b.check_bounds(n_states, n_actions)
}

/// Belief-based model: Bradley–Terry over discounted sums of the labeler's believed advantage.
pub fn pref_prob_belief(
    seg_a: &Segment,
    seg_b: &Segment,
    belief_adv: &SaTable,
    discount: f64,
    alpha: Alpha,
) -> Result<f64> {
    alpha.validate()?;
    check_pair(seg_a, seg_b, belief_adv.n_states(), belief_adv.n_actions())?;
    let gap = segment_adv_score(seg_a, belief_adv, discount)
        - segment_adv_score(seg_b, belief_adv, discount);
    Ok(bradley_terry(gap, alpha))
}

/// Regret model: the belief model evaluated with the optimal advantage `A*`.
pub fn pref_prob_regret(
    seg_a: &Segment,
    seg_b: &Segment,
    optimal_adv: &SaTable,
    discount: f64,
    alpha: Alpha,
) -> Result<f64> {
    pref_prob_belief(seg_a, seg_b, optimal_adv, discount, alpha)
}

/// Partial-return model: Bradley–Terry over discounted reward sums looked up in `mdp`.
pub fn pref_prob_partial_return(
    seg_a: &Segment,
    seg_b: &Segment,
    mdp: &TabularMdp,
    alpha: Alpha,
) -> Result<f64> {
    alpha.validate()?;
    check_pair(seg_a, seg_b, mdp.n_states(), mdp.n_actions())?;
    let gamma = mdp.discount();
    let gap = mdp.discounted_return(seg_a.transitions(), gamma)
        - mdp.discounted_return(seg_b.transitions(), gamma);
    Ok(bradley_terry(gap, alpha))
}

/// Draws a label from `prob = P(first ≻ second)`.
///
/// Noiseless mode is deterministic: the side with probability above one half wins and an
/// exact 0.5 resolves to [`Side::First`].
pub fn sample_label<R: Rng + ?Sized>(prob: f64, alpha: Alpha, rng: &mut R) -> Side {
    match alpha {
        Alpha::Noiseless => {
            if prob >= 0.5 {
                Side::First
            } else {
                Side::Second
            }
        }
        Alpha::Finite(_) => {
            if rng.random::<f64>() < prob {
                Side::First
            } else {
                Side::Second
            }
        }
    }
}

/// How the labeler's capability belief is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeliefSpec {
    /// `Q*`: the labeler assumes optimal follow-up behaviour.
    Optimal,
    /// Best policy within the ε'-greedy class.
    EpsGreedyClass { eps: f64 },
    /// A raw `Q` table. Its state values are taken as row maxima, i.e. the labeler
    /// imagines the greedy policy of the table.
    ExplicitTable { q: SaTable },
    /// `Q^π` of a given policy.
    PolicyDerived { policy: Policy },
}

impl BeliefSpec {
    /// The believed advantage table `A^belief`.
    pub fn advantage(&self, mdp: &TabularMdp) -> Result<SaTable> {
        match self {
            BeliefSpec::Optimal => Ok(value_iteration(mdp, DEFAULT_TOL)?.adv),
            BeliefSpec::EpsGreedyClass { eps } => {
                Ok(eps_greedy_value_iteration(mdp, *eps, DEFAULT_TOL)?.adv)
            }
            BeliefSpec::ExplicitTable { q } => {
                if q.n_states() != mdp.n_states() || q.n_actions() != mdp.n_actions() {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{}x{}", mdp.n_states(), mdp.n_actions()),
                        actual: format!("{}x{}", q.n_states(), q.n_actions()),
                    });
                }
                Ok(greedy_advantage(q))
            }
            BeliefSpec::PolicyDerived { policy } => {
                Ok(policy_evaluation(mdp, policy, DEFAULT_TOL)?.adv)
            }
        }
    }
}

/// `A(s, a) = Q(s, a) − max_b Q(s, b)`.
pub fn greedy_advantage(q: &SaTable) -> SaTable {
    SaTable::from_fn(q.n_states(), q.n_actions(), |s, a| {
        q.get(s, a) - q.row_max(s)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub first: Segment,
    pub second: Segment,
    pub label: Side,
    /// Model probability that `first` is preferred.
    pub label_prob: f64,
}

impl PreferencePair {
    pub fn new(first: Segment, second: Segment, label: Side, label_prob: f64) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::MalformedPair(format!(
                "segments have lengths {} and {}",
                first.len(),
                second.len()
            )));
        }
        if !(0.0..=1.0).contains(&label_prob) {
            return Err(Error::MalformedPair(format!(
                "label_prob {label_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            first,
            second,
            label,
            label_prob,
        })
    }

    /// `(preferred, non-preferred)`.
    pub fn ordered(&self) -> (&Segment, &Segment) {
        match self.label {
            Side::First => (&self.first, &self.second),
            Side::Second => (&self.second, &self.first),
        }
    }
}

/// Parameters of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateParams {
    pub n_trajectories: usize,
    pub segment_len: usize,
    pub n_pairs: usize,
    pub alpha: Alpha,
    /// Maximum transitions per rollout.
    pub cap: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            n_trajectories: 100,
            segment_len: 1,
            n_pairs: 500,
            alpha: Alpha::Finite(10.0),
            cap: 1000,
        }
    }
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub mdp_ref: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub belief_spec: BeliefSpec,
    pub behavior_policy: Policy,
    pub alpha: Alpha,
    pub seed: u64,
    pub n_trajectories: usize,
    pub segment_len: usize,
    pub n_pairs: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub header: DatasetHeader,
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// JSON lines: the header object, then one pair per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for pair in &self.pairs {
            serde_json::to_writer(&mut out, pair)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::MalformedPair("dataset file is empty".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut pairs = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: PreferencePair = serde_json::from_str(&line)?;
            PreferencePair::new(
                pair.first.clone(),
                pair.second.clone(),
                pair.label,
                pair.label_prob,
            )?;
            pair.first.check_bounds(header.n_states, header.n_actions)?;
            pair.second
                .check_bounds(header.n_states, header.n_actions)?;
            pairs.push(pair);
        }
        Ok(Self { header, pairs })
    }
}

/// Rolls out `n_trajectories` episodes under `behavior`, draws equal-length windows
/// uniformly without replacement (reshuffling the pool once it runs dry), pairs
/// consecutive windows, and labels each pair with the belief model.
pub fn generate_dataset(
    mdp: &TabularMdp,
    behavior: &Policy,
    belief_spec: &BeliefSpec,
    params: &GenerateParams,
    seed: u64,
    mdp_ref: &str,
) -> Result<PreferenceDataset> {
    mdp.check_policy(behavior)?;
    params.alpha.validate()?;
    if params.n_trajectories < 2 {
        return Err(Error::arg("n_trajectories", "need at least 2 trajectories"));
    }
    if params.segment_len == 0 {
        return Err(Error::arg("segment_len", "must be at least 1"));
    }
    if params.cap == 0 {
        return Err(Error::arg("cap", "must be at least 1"));
    }
    let adv = belief_spec.advantage(mdp)?;
    let header = DatasetHeader {
        mdp_ref: mdp_ref.to_string(),
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        discount: mdp.discount(),
        belief_spec: belief_spec.clone(),
        behavior_policy: behavior.clone(),
        alpha: params.alpha,
        seed,
        n_trajectories: params.n_trajectories,
        segment_len: params.segment_len,
        n_pairs: params.n_pairs,
        cap: params.cap,
    };

    let mut rng = stream(seed);
    let trajectories: Vec<Trajectory> = (0..params.n_trajectories)
        .map(|_| rollout(mdp, behavior, params.cap, &mut rng))
        .collect();
    let len = params.segment_len;
    let pool: Vec<(usize, usize)> = trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| t.len() >= len)
        .flat_map(|(i, t)| (0..=t.len() - len).map(move |start| (i, start)))
        .collect();
    if pool.is_empty() {
        return Err(Error::NoEligibleTrajectory { segment_len: len });
    }
    if pool.len() < 2 && params.n_pairs > 0 {
        return Err(Error::arg(
            "segment_len",
            "fewer than two windows available to pair",
        ));
    }

    let mut pairs = Vec::with_capacity(params.n_pairs);
    let mut round = pool.clone();
    let mut cursor = round.len();
    while pairs.len() < params.n_pairs {
        if cursor + 2 > round.len() {
            round.copy_from_slice(&pool);
            round.shuffle(&mut rng);
            cursor = 0;
        }
        let (ia, sa) = round[cursor];
        let (ib, sb) = round[cursor + 1];
        cursor += 2;
        let first = trajectories[ia].window(sa, len).expect("window in pool");
        let second = trajectories[ib].window(sb, len).expect("window in pool");
        let prob = pref_prob_belief(&first, &second, &adv, mdp.discount(), params.alpha)?;
        let label = sample_label(prob, params.alpha, &mut rng);
        pairs.push(PreferencePair {
            first,
            second,
            label,
            label_prob: prob,
        });
    }
    Ok(PreferenceDataset { header, pairs })
}
