//! JSON run configurations. Unknown fields are rejected; `validate` names the first bad field.

use std::path::{Path, PathBuf};

use beliefrl_core::bound::SweepParams;
use beliefrl_core::cpl::CplConfig;
use beliefrl_core::mdp::{build_case_study, build_gridworld_with, GridworldParams};
use beliefrl_core::preference::GenerateParams;
use beliefrl_core::{Alpha, BeliefSpec, Policy, SaTable, TabularMdp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Reads and parses a JSON config; both failures count as validation errors.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::validation("config", format!("cannot read {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation("config", format!("{}: {e}", path.display())))
}

/// Resolves `p` against the directory holding the config file.
pub fn resolve(config_path: Option<&Path>, p: &Path) -> PathBuf {
    match config_path.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn check_eps(field: &str, eps: f64) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(CliError::validation(
            field,
            format!("must lie in [0, 1], got {eps}"),
        ));
    }
    Ok(())
}

fn check_positive(field: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::validation(field, "must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSpec {
    Gridworld {
        discount: f64,
        #[serde(default)]
        layout: Option<GridworldParams>,
    },
    CaseStudy {
        discount: f64,
    },
    /// An MDP document on disk, relative to the config file.
    File {
        path: PathBuf,
    },
}

impl MdpSpec {
    pub fn build(&self, config_path: Option<&Path>) -> Result<TabularMdp, CliError> {
        let built = match self {
            MdpSpec::Gridworld { discount, layout } => {
                build_gridworld_with(*discount, &layout.clone().unwrap_or_default())
            }
            MdpSpec::CaseStudy { discount } => build_case_study(*discount),
            MdpSpec::File { path } => {
                let full = resolve(config_path, path);
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    CliError::validation("mdp.path", format!("cannot read {}: {e}", full.display()))
                })?;
                TabularMdp::from_json(&text)
            }
        };
        built.map_err(|e| CliError::validation("mdp", e.to_string()))
    }

    pub fn label(&self) -> String {
        match self {
            MdpSpec::Gridworld { .. } => "gridworld".into(),
            MdpSpec::CaseStudy { .. } => "case_study".into(),
            MdpSpec::File { path } => path.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Discounted,
    Undiscounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSampling {
    /// Sample from the trained softmax policy, then apply ε noise.
    Softmax,
    /// Play the trained policy's most likely action, then apply ε noise.
    Greedy,
}

fn default_cap() -> usize {
    1000
}

fn default_label_alpha() -> Alpha {
    Alpha::Finite(10.0)
}

fn default_eval_episodes() -> usize {
    100
}

fn default_eval_mode() -> EvalMode {
    EvalMode::Discounted
}

fn default_eval_sampling() -> EvalSampling {
    EvalSampling::Softmax
}

/// The agent-noise × labeler-noise experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    pub agent_eps_list: Vec<f64>,
    pub labeler_eps_list: Vec<f64>,
    pub n_trajectories: usize,
    pub segment_len: usize,
    pub n_pairs: usize,
    /// Maximum transitions per rollout, for data collection and evaluation alike.
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Temperature of the simulated labeler.
    #[serde(default = "default_label_alpha")]
    pub label_alpha: Alpha,
    pub cpl: CplConfig,
    /// Defaults to `cpl.seeds`.
    #[serde(default)]
    pub n_seeds: Option<usize>,
    #[serde(default = "default_eval_episodes")]
    pub n_eval_episodes: usize,
    #[serde(default = "default_eval_mode")]
    pub eval_mode: EvalMode,
    #[serde(default = "default_eval_sampling")]
    pub eval_sampling: EvalSampling,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// The gridworld matrix: ε, ε' ∈ {0, 0.1, 0.3, 0.5}, 100 trajectories, discount 0.7 and
    /// 20 seeds. Training uses the bias reading of the 0.01 regularizer with minibatches of
    /// 32 over 2000 single-transition pairs; evaluation plays the trained policy's mode.
    pub fn table1() -> Self {
        Self {
            mdp: MdpSpec::Gridworld {
                discount: 0.7,
                layout: None,
            },
            agent_eps_list: vec![0.0, 0.1, 0.3, 0.5],
            labeler_eps_list: vec![0.0, 0.1, 0.3, 0.5],
            n_trajectories: 100,
            segment_len: 1,
            n_pairs: 2000,
            cap: default_cap(),
            label_alpha: default_label_alpha(),
            cpl: CplConfig {
                batch_size: Some(32),
                ..CplConfig::gridworld_bias_preset()
            },
            n_seeds: Some(20),
            n_eval_episodes: default_eval_episodes(),
            eval_mode: default_eval_mode(),
            eval_sampling: EvalSampling::Greedy,
            master_seed: 0,
        }
    }

    pub fn seeds(&self) -> usize {
        self.n_seeds.unwrap_or(self.cpl.seeds)
    }

    pub fn generate_params(&self) -> GenerateParams {
        GenerateParams {
            n_trajectories: self.n_trajectories,
            segment_len: self.segment_len,
            n_pairs: self.n_pairs,
            alpha: self.label_alpha,
            cap: self.cap,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.agent_eps_list.is_empty() {
            return Err(CliError::validation("agent_eps_list", "must not be empty"));
        }
        if self.labeler_eps_list.is_empty() {
            return Err(CliError::validation(
                "labeler_eps_list",
                "must not be empty",
            ));
        }
        for &e in &self.agent_eps_list {
            check_eps("agent_eps_list", e)?;
        }
        for &e in &self.labeler_eps_list {
            check_eps("labeler_eps_list", e)?;
        }
        if self.n_trajectories < 2 {
            return Err(CliError::validation("n_trajectories", "need at least 2"));
        }
        check_positive("segment_len", self.segment_len)?;
        check_positive("n_pairs", self.n_pairs)?;
        check_positive("cap", self.cap)?;
        check_positive("n_eval_episodes", self.n_eval_episodes)?;
        if let Some(n) = self.n_seeds {
            check_positive("n_seeds", n)?;
            if n != self.cpl.seeds {
                return Err(CliError::validation(
                    "n_seeds",
                    format!("{n} disagrees with cpl.seeds = {}", self.cpl.seeds),
                ));
            }
        }
        check_positive("cpl.seeds", self.cpl.seeds)?;
        self.label_alpha
            .validate()
            .map_err(|e| CliError::validation("label_alpha", e.to_string()))?;
        self.cpl
            .validate()
            .map_err(|e| CliError::validation("cpl", e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    ValueIteration,
    EpsGreedy { eps: f64 },
    PolicyEvaluation { policy: Policy },
    Restricted { allowed: Vec<Vec<bool>> },
}

fn default_tol() -> f64 {
    beliefrl_core::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub mdp: MdpSpec,
    pub solver: SolverSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0) {
            return Err(CliError::validation("tol", "must be positive"));
        }
        if let SolverSpec::EpsGreedy { eps } = self.solver {
            check_eps("solver.eps", eps)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenPrefsConfig {
    pub mdp: MdpSpec,
    pub belief: BeliefSpec,
    /// Defaults to the uniform policy.
    #[serde(default)]
    pub behavior: Option<Policy>,
    #[serde(default)]
    pub generate: Option<GenerateParams>,
    #[serde(default)]
    pub seed: u64,
}

impl GenPrefsConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let BeliefSpec::EpsGreedyClass { eps } = self.belief {
            check_eps("belief.eps", eps)?;
        }
        if let Some(g) = &self.generate {
            if g.n_trajectories < 2 {
                return Err(CliError::validation(
                    "generate.n_trajectories",
                    "need at least 2",
                ));
            }
            check_positive("generate.segment_len", g.segment_len)?;
            check_positive("generate.cap", g.cap)?;
            g.alpha
                .validate()
                .map_err(|e| CliError::validation("generate.alpha", e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// JSON-lines dataset, relative to the config file.
    pub dataset: PathBuf,
    #[serde(default)]
    pub cpl: CplConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.cpl
            .validate()
            .map_err(|e| CliError::validation("cpl", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mdp: MdpSpec,
    /// Output of `train` (or a bare policy document), relative to the config file.
    pub policy: PathBuf,
    pub agent_eps: Vec<f64>,
    #[serde(default = "default_eval_episodes")]
    pub n_episodes: usize,
    #[serde(default = "default_eval_mode")]
    pub eval_mode: EvalMode,
    #[serde(default = "default_eval_sampling")]
    pub eval_sampling: EvalSampling,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub seed: u64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.agent_eps.is_empty() {
            return Err(CliError::validation("agent_eps", "must not be empty"));
        }
        for &e in &self.agent_eps {
            check_eps("agent_eps", e)?;
        }
        check_positive("n_episodes", self.n_episodes)?;
        check_positive("cap", self.cap)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default)]
    pub sweep: SweepParams,
    #[serde(default)]
    pub seed: u64,
}

impl BoundConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.sweep
            .validate()
            .map_err(|e| CliError::validation("sweep", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub p_lose: Vec<f64>,
    pub discounts: Vec<f64>,
}

impl CaseStudyConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.p_lose.is_empty() {
            return Err(CliError::validation("p_lose", "must not be empty"));
        }
        if self.discounts.is_empty() {
            return Err(CliError::validation("discounts", "must not be empty"));
        }
        for &p in &self.p_lose {
            check_eps("p_lose", p)?;
        }
        for &g in &self.discounts {
            if !(0.0..1.0).contains(&g) {
                return Err(CliError::validation(
                    "discounts",
                    format!("must lie in [0, 1), got {g}"),
                ));
            }
        }
        Ok(())
    }
}

/// Keep a row only when `column` holds one of `equals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFilterSpec {
    pub column: String,
    pub equals: Vec<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Response CSV, relative to the config file.
    pub csv: PathBuf,
    #[serde(default)]
    pub extra_columns: Vec<String>,
    #[serde(default)]
    pub filter: Option<RowFilterSpec>,
    #[serde(default = "default_true")]
    pub tie_correction: bool,
}

impl StatsConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(f) = &self.filter {
            if !self.extra_columns.contains(&f.column) {
                return Err(CliError::validation(
                    "filter.column",
                    format!("'{}' is not listed in extra_columns", f.column),
                ));
            }
        }
        Ok(())
    }
}

/// A trained policy file may hold either `train` output or a bare policy.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PolicyFile {
    Trained { logits: SaTable, policy: Policy },
    Bare(Policy),
}

impl PolicyFile {
    pub fn policy(&self) -> &Policy {
        match self {
            PolicyFile::Trained { policy, .. } => policy,
            PolicyFile::Bare(p) => p,
        }
    }
}
