use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use beliefrl_core::bound::{case_study_flip, FlipOutcome};
use beliefrl_core::cpl::train_cpl;
use beliefrl_core::preference::generate_dataset;
use beliefrl_core::rng::{derive_seed, stream};
use beliefrl_core::solvers::{
    eps_greedy_value_iteration, policy_evaluation, restricted_value_iteration, value_iteration,
};
use beliefrl_core::stats::{
    cliffs_delta, dunn_bonferroni_with, ingest_likert_csv_with, kruskal_wallis_with, IngestOptions,
    ResponseRow, TestOptions,
};
use beliefrl_core::{Policy, PreferenceDataset};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{
    self, BoundConfig, CaseStudyConfig, EvalConfig, ExperimentConfig, GenPrefsConfig, PolicyFile,
    SolveConfig, SolverSpec, StatsConfig, TrainConfig,
};
use crate::error::CliError;
use crate::matrix::{episode_returns, mean_ci95, run_matrix};
use crate::sweep::run_bound_sweep;

#[derive(Debug, Parser)]
#[command(
    name = "beliefrl",
    version,
    about = "Belief-mismatch experiments for preference-based RL"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "results")]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an MDP exactly and write Q, V and advantages.
    Solve(Common),
    /// Generate a labeled preference dataset.
    GenPrefs(Common),
    /// Train a softmax policy on a preference dataset.
    Train(Common),
    /// Roll out a trained policy under action noise.
    Eval(Common),
    /// Agent-noise × labeler-noise return matrix.
    Table1(Common),
    /// Check the disagreement bound on random instances.
    VerifyBound(Common),
    /// Which first move a labeler prefers in the risky-shortcut MDP.
    CaseStudy(CaseStudyArgs),
    /// Kruskal–Wallis, Dunn and Cliff's delta on Likert responses.
    Stats(Common),
}

#[derive(Debug, Clone, Args)]
pub struct CaseStudyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Believed probability of losing the gamble.
    #[arg(long)]
    pub p_lose: Option<f64>,
    #[arg(long)]
    pub discount: Option<f64>,
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(c) => solve(c),
        Command::GenPrefs(c) => gen_prefs(c),
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::Table1(c) => table1(c),
        Command::VerifyBound(c) => verify_bound(c),
        Command::CaseStudy(a) => case_study(a),
        Command::Stats(c) => stats(c),
    }
}

fn require_config<'a>(c: &'a Common, command: &str) -> Result<&'a Path, CliError> {
    c.config.as_deref().ok_or_else(|| {
        CliError::validation("config", format!("--config is required for {command}"))
    })
}

fn out_dir(c: &Common) -> Result<&Path, CliError> {
    fs::create_dir_all(&c.out)
        .map_err(|e| CliError::runtime(e).context(format!("creating {}", c.out.display())))?;
    Ok(&c.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::runtime(e).context(format!("writing {}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows as `<stem>.csv` or the whole list as `<stem>.json`.
fn write_rows<T: Serialize>(
    dir: &Path,
    stem: &str,
    format: Format,
    rows: &[T],
) -> Result<PathBuf, CliError> {
    let path = dir.join(format!(
        "{stem}.{}",
        if format == Format::Csv { "csv" } else { "json" }
    ));
    match format {
        Format::Csv => write_csv(&path, rows)?,
        Format::Json => write_json(&path, &rows)?,
    }
    Ok(path)
}

#[derive(Serialize)]
struct Metadata<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    format: Format,
    config: &'a T,
}

fn write_metadata<T: Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    format: Format,
    config: &T,
) -> Result<(), CliError> {
    write_json(
        &dir.join("metadata.json"),
        &Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            format,
            config,
        },
    )
}

fn say(line: impl AsRef<str>) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{}", line.as_ref());
}

#[derive(Serialize)]
struct ValueRow {
    state: usize,
    action: usize,
    q: f64,
    v: f64,
    adv: f64,
}

fn solve(c: &Common) -> Result<(), CliError> {
    let path = require_config(c, "solve")?;
    let cfg: SolveConfig = config::load(path)?;
    cfg.validate()?;
    let mdp = cfg.mdp.build(Some(path))?;
    let tables = match &cfg.solver {
        SolverSpec::ValueIteration => value_iteration(&mdp, cfg.tol)?,
        SolverSpec::EpsGreedy { eps } => eps_greedy_value_iteration(&mdp, *eps, cfg.tol)?,
        SolverSpec::PolicyEvaluation { policy } => policy_evaluation(&mdp, policy, cfg.tol)?,
        SolverSpec::Restricted { allowed } => restricted_value_iteration(&mdp, allowed, cfg.tol)?,
    };
    let dir = out_dir(c)?;
    match c.format {
        Format::Json => write_json(&dir.join("values.json"), &tables)?,
        Format::Csv => {
            let rows: Vec<ValueRow> = (0..mdp.n_states())
                .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
                .map(|(s, a)| ValueRow {
                    state: s,
                    action: a,
                    q: tables.q.get(s, a),
                    v: tables.v[s],
                    adv: tables.adv.get(s, a),
                })
                .collect();
            write_csv(&dir.join("values.csv"), &rows)?;
        }
    }
    write_metadata(dir, "solve", 0, c.format, &cfg)?;
    let j: f64 = mdp
        .start_dist()
        .iter()
        .zip(&tables.v)
        .map(|(m, v)| m * v)
        .sum();
    say(format!(
        "solved {} states x {} actions; start value {j}",
        mdp.n_states(),
        mdp.n_actions()
    ));
    Ok(())
}

#[derive(Serialize)]
struct PairRow {
    pair: usize,
    first: String,
    second: String,
    label: String,
    label_prob: f64,
}

fn segment_text(seg: &beliefrl_core::Segment) -> String {
    seg.transitions()
        .iter()
        .map(|t| format!("{}:{}:{}", t.state, t.action, t.next_state))
        .collect::<Vec<_>>()
        .join(" ")
}

fn gen_prefs(c: &Common) -> Result<(), CliError> {
    let path = require_config(c, "gen-prefs")?;
    let mut cfg: GenPrefsConfig = config::load(path)?;
    cfg.validate()?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let mdp = cfg.mdp.build(Some(path))?;
    let behavior = cfg
        .behavior
        .clone()
        .unwrap_or_else(|| Policy::uniform(mdp.n_states(), mdp.n_actions()));
    let params = cfg.generate.clone().unwrap_or_default();
    cfg.behavior = Some(behavior.clone());
    cfg.generate = Some(params.clone());
    let dataset = generate_dataset(
        &mdp,
        &behavior,
        &cfg.belief,
        &params,
        cfg.seed,
        &cfg.mdp.label(),
    )?;
    let dir = out_dir(c)?;
    fs::write(dir.join("dataset.jsonl"), dataset.to_jsonl()?)?;
    let rows: Vec<PairRow> = dataset
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairRow {
            pair: i,
            first: segment_text(&p.first),
            second: segment_text(&p.second),
            label: format!("{:?}", p.label).to_lowercase(),
            label_prob: p.label_prob,
        })
        .collect();
    write_rows(dir, "pairs", c.format, &rows)?;
    write_metadata(dir, "gen-prefs", cfg.seed, c.format, &cfg)?;
    say(format!("wrote {} pairs", dataset.len()));
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    epoch: usize,
    loss: f64,
}

fn train(c: &Common) -> Result<(), CliError> {
    let path = require_config(c, "train")?;
    let cfg: TrainConfig = config::load(path)?;
    cfg.validate()?;
    let data_path = config::resolve(Some(path), &cfg.dataset);
    let file = fs::File::open(&data_path).map_err(|e| {
        CliError::validation(
            "dataset",
            format!("cannot read {}: {e}", data_path.display()),
        )
    })?;
    let dataset = PreferenceDataset::read_jsonl(io::BufReader::new(file))?;
    let seed = c.seed.unwrap_or(0);
    let trained = train_cpl(&dataset, &cfg.cpl, &mut stream(seed))?;
    let dir = out_dir(c)?;
    write_json(
        &dir.join("policy.json"),
        &serde_json::json!({ "logits": trained.params.logits, "policy": trained.policy }),
    )?;
    let curve: Vec<CurveRow> = trained
        .curve
        .iter()
        .map(|&(epoch, loss)| CurveRow { epoch, loss })
        .collect();
    write_rows(dir, "curve", c.format, &curve)?;
    write_metadata(dir, "train", seed, c.format, &cfg)?;
    let last = curve.last().map_or(f64::NAN, |r| r.loss);
    say(format!(
        "trained on {} pairs; final loss {last}",
        dataset.len()
    ));
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    agent_eps: f64,
    mean_return: f64,
    ci95: f64,
    n_samples: usize,
}

fn eval(c: &Common) -> Result<(), CliError> {
    let path = require_config(c, "eval")?;
    let mut cfg: EvalConfig = config::load(path)?;
    cfg.validate()?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let mdp = cfg.mdp.build(Some(path))?;
    let policy_path = config::resolve(Some(path), &cfg.policy);
    let text = fs::read_to_string(&policy_path).map_err(|e| {
        CliError::validation(
            "policy",
            format!("cannot read {}: {e}", policy_path.display()),
        )
    })?;
    let file: PolicyFile =
        serde_json::from_str(&text).map_err(|e| CliError::validation("policy", e.to_string()))?;
    let base = file.policy();
    mdp.check_policy(base)?;
    let rows: Vec<EvalRow> = cfg
        .agent_eps
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let policy = match cfg.eval_sampling {
                config::EvalSampling::Softmax => base.clone(),
                config::EvalSampling::Greedy => {
                    let actions: Vec<usize> = (0..base.n_states())
                        .map(|s| base.table().argmax(s))
                        .collect();
                    Policy::deterministic(&actions, base.n_actions()).expect("argmax is in range")
                }
            }
            .mix_uniform(eps);
            let mut rng = stream(derive_seed(cfg.seed, &[j as u64]));
            let returns = episode_returns(
                &mdp,
                &policy,
                cfg.n_episodes,
                cfg.cap,
                cfg.eval_mode,
                &mut rng,
            );
            let (mean, half) = mean_ci95(&returns);
            EvalRow {
                agent_eps: eps,
                mean_return: mean,
                ci95: half,
                n_samples: returns.len(),
            }
        })
        .collect();
    let dir = out_dir(c)?;
    write_rows(dir, "eval", c.format, &rows)?;
    write_metadata(dir, "eval", cfg.seed, c.format, &cfg)?;
    for r in &rows {
        say(format!(
            "eps {}: {:.4} ± {:.4}",
            r.agent_eps, r.mean_return, r.ci95
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct MatrixRow {
    agent_eps: f64,
    labeler_eps: f64,
    mean_return: f64,
    ci95: f64,
    n_samples: usize,
}

fn table1(c: &Common) -> Result<(), CliError> {
    let mut cfg = match c.config.as_deref() {
        Some(path) => config::load::<ExperimentConfig>(path)?,
        None => ExperimentConfig::table1(),
    };
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    cfg.n_seeds = Some(cfg.seeds());
    let mdp = cfg.mdp.build(c.config.as_deref())?;
    let matrix = run_matrix(&cfg, &mdp)?;
    let rows: Vec<MatrixRow> = matrix
        .cells
        .iter()
        .map(|m| MatrixRow {
            agent_eps: m.agent_eps,
            labeler_eps: m.labeler_eps,
            mean_return: m.mean_return,
            ci95: m.ci95_halfwidth,
            n_samples: m.n_samples,
        })
        .collect();
    let dir = out_dir(c)?;
    write_rows(dir, "matrix", c.format, &rows)?;
    write_metadata(dir, "table1", cfg.master_seed, c.format, &cfg)?;

    let mut header = String::from("labeler_eps \\ agent_eps");
    for e in &matrix.agent_eps {
        header.push_str(&format!("\t{e}"));
    }
    say(header);
    for (i, le) in matrix.labeler_eps.iter().enumerate() {
        let mut line = format!("{le}");
        for j in 0..matrix.agent_eps.len() {
            let cell = matrix.cell(i, j);
            line.push_str(&format!(
                "\t{:.2} ± {:.2}",
                cell.mean_return, cell.ci95_halfwidth
            ));
        }
        say(line);
    }
    Ok(())
}

fn verify_bound(c: &Common) -> Result<(), CliError> {
    let mut cfg = match c.config.as_deref() {
        Some(path) => config::load::<BoundConfig>(path)?,
        None => BoundConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let report = run_bound_sweep(&cfg.sweep, cfg.seed)?;
    let dir = out_dir(c)?;
    write_rows(dir, "single", c.format, &report.single)?;
    #[derive(Serialize)]
    struct SimultaneousCsv {
        instance: usize,
        n_perturbations: usize,
        perturbations: String,
        max_delta: f64,
        j_star: f64,
        j_delta: f64,
        bound_value: f64,
        holds: bool,
    }
    match c.format {
        Format::Json => {
            write_json(&dir.join("simultaneous.json"), &report.simultaneous)?;
        }
        Format::Csv => {
            let rows: Vec<SimultaneousCsv> = report
                .simultaneous
                .iter()
                .map(|r| SimultaneousCsv {
                    instance: r.instance,
                    n_perturbations: r.perturbations.len(),
                    perturbations: r
                        .perturbations
                        .iter()
                        .map(|p| format!("{}:{}:{}", p.state, p.action, p.delta))
                        .collect::<Vec<_>>()
                        .join(" "),
                    max_delta: r.max_delta,
                    j_star: r.j_star,
                    j_delta: r.j_delta,
                    bound_value: r.bound_value,
                    holds: r.holds,
                })
                .collect();
            write_csv(&dir.join("simultaneous.csv"), &rows)?;
        }
    }
    write_json(&dir.join("summary.json"), &report.summary)?;
    write_metadata(dir, "verify-bound", cfg.seed, c.format, &cfg)?;
    let s = &report.summary;
    say(format!(
        "single perturbations: {}/{} hold; simultaneous: {}/{} hold",
        s.single_holds, s.single_checks, s.simultaneous_holds, s.simultaneous_checks
    ));
    if s.single_holds != s.single_checks || s.simultaneous_holds != s.simultaneous_checks {
        return Err(CliError::runtime(anyhow::anyhow!(
            "bound violated on at least one instance"
        )));
    }
    Ok(())
}

fn case_study(a: &CaseStudyArgs) -> Result<(), CliError> {
    let c = &a.common;
    let mut cfg = match c.config.as_deref() {
        Some(path) => config::load::<CaseStudyConfig>(path)?,
        None => CaseStudyConfig {
            p_lose: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            discounts: vec![0.1, 0.5, 0.9],
        },
    };
    if let Some(p) = a.p_lose {
        cfg.p_lose = vec![p];
    }
    if let Some(g) = a.discount {
        cfg.discounts = vec![g];
    } else if a.p_lose.is_some() && c.config.is_none() {
        cfg.discounts = vec![0.9];
    }
    cfg.validate()?;
    let mut rows: Vec<FlipOutcome> = Vec::new();
    for &g in &cfg.discounts {
        for &p in &cfg.p_lose {
            rows.push(case_study_flip(p, g)?);
        }
    }
    let dir = out_dir(c)?;
    write_rows(dir, "flip", c.format, &rows)?;
    write_metadata(dir, "case-study", 0, c.format, &cfg)?;
    for r in &rows {
        let side = match r.preferred {
            beliefrl_core::bound::FlipSide::Risk => "risk",
            beliefrl_core::bound::FlipSide::Safe => "safe",
            beliefrl_core::bound::FlipSide::Tie => "tie",
        };
        say(format!(
            "discount {} p_lose {}: {side} (gap {})",
            r.discount, r.p_lose, r.gap
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsOutput<'a> {
    groups: &'a [String],
    n_per_group: Vec<usize>,
    n_rows: usize,
    excluded: usize,
    kruskal_wallis: &'a beliefrl_core::stats::KruskalWallis,
    dunn: &'a beliefrl_core::stats::DunnResult,
    cliffs_delta: Vec<CliffRow>,
}

#[derive(Serialize, Clone)]
struct CliffRow {
    group_a: String,
    group_b: String,
    delta: f64,
}

#[derive(Serialize)]
struct DunnRow<'a> {
    group_a: &'a str,
    group_b: &'a str,
    z: f64,
    p_raw: f64,
    p_adjusted: f64,
}

#[derive(Serialize)]
struct KwRow {
    h: f64,
    p: f64,
    df: usize,
    n_rows: usize,
    excluded: usize,
}

fn stats(c: &Common) -> Result<(), CliError> {
    let path = require_config(c, "stats")?;
    let cfg: StatsConfig = config::load(path)?;
    cfg.validate()?;
    let csv_path = config::resolve(Some(path), &cfg.csv);
    if !csv_path.is_file() {
        return Err(CliError::validation(
            "csv",
            format!("{} does not exist", csv_path.display()),
        ));
    }
    let filter = cfg.filter.clone().map(|f| {
        Box::new(move |row: &ResponseRow| {
            row.extras
                .get(&f.column)
                .is_some_and(|v| f.equals.contains(v))
        }) as Box<dyn Fn(&ResponseRow) -> bool>
    });
    let opts = IngestOptions {
        extra_columns: cfg.extra_columns.clone(),
        filter,
    };
    let report = ingest_likert_csv_with(&csv_path, &opts)?;
    let test_opts = TestOptions {
        tie_correction: cfg.tie_correction,
    };
    let kw = kruskal_wallis_with(&report.groups, test_opts)?;
    let dunn = dunn_bonferroni_with(&report.groups, test_opts)?;
    let names = report.groups.names();
    let groups = report.groups.groups();
    let mut cliffs = Vec::new();
    let mut dunn_rows = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            cliffs.push(CliffRow {
                group_a: names[i].clone(),
                group_b: names[j].clone(),
                delta: cliffs_delta(&groups[i], &groups[j])?,
            });
            dunn_rows.push(DunnRow {
                group_a: &names[i],
                group_b: &names[j],
                z: dunn.z[i][j],
                p_raw: dunn.p_raw[i][j],
                p_adjusted: dunn.p_adjusted[i][j],
            });
        }
    }
    let dir = out_dir(c)?;
    match c.format {
        Format::Json => write_json(
            &dir.join("stats.json"),
            &StatsOutput {
                groups: names,
                n_per_group: groups.iter().map(Vec::len).collect(),
                n_rows: report.n_rows,
                excluded: report.excluded.len(),
                kruskal_wallis: &kw,
                dunn: &dunn,
                cliffs_delta: cliffs.clone(),
            },
        )?,
        Format::Csv => {
            write_csv(
                &dir.join("kruskal.csv"),
                &[KwRow {
                    h: kw.h,
                    p: kw.p,
                    df: kw.df,
                    n_rows: report.n_rows,
                    excluded: report.excluded.len(),
                }],
            )?;
            write_csv(&dir.join("dunn.csv"), &dunn_rows)?;
            write_csv(&dir.join("cliffs.csv"), &cliffs)?;
        }
    }
    write_metadata(dir, "stats", 0, c.format, &cfg)?;

    say(format!(
        "Kruskal-Wallis H = {:.6}, df = {}, p = {:.6} ({} rows, {} excluded)",
        kw.h,
        kw.df,
        kw.p,
        report.n_rows,
        report.excluded.len()
    ));
    say(format!(
        "{:<12} {:<12} {:>10} {:>10} {:>10} {:>8}",
        "group_a", "group_b", "z", "p_raw", "p_adj", "cliff_d"
    ));
    for (d, cl) in dunn_rows.iter().zip(&cliffs) {
        say(format!(
            "{:<12} {:<12} {:>10.4} {:>10.6} {:>10.6} {:>8.4}",
            d.group_a, d.group_b, d.z, d.p_raw, d.p_adjusted, cl.delta
        ));
    }
    Ok(())
}
