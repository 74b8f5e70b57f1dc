//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use beliefrl_cli::config::{self, ExperimentConfig};
use beliefrl_cli::matrix::run_matrix;
use beliefrl_cli::sweep::run_bound_sweep;
use beliefrl_core::bound::{case_study_flip, FlipSide, SweepParams};
use beliefrl_core::cpl::{cpl_grad, cpl_loss, CplConfig, SoftmaxPolicyParams};
use beliefrl_core::mdp::{random_mdp, random_policy};
use beliefrl_core::preference::{pref_prob_belief, sample_label, segment_adv_score, DatasetHeader};
use beliefrl_core::rng::{derive_seed, stream, StreamRng};
use beliefrl_core::solvers::{expected_return, performance_difference};
use beliefrl_core::stats::{cliffs_delta, dunn_bonferroni, kruskal_wallis, LikertGroups};
use beliefrl_core::{
    Alpha, BeliefSpec, Policy, PreferenceDataset, PreferencePair, SaTable, Segment, Side,
    Transition, DEFAULT_TOL,
};
use rand::Rng;

const PD_TOL: f64 = 1e-8;
const PD_BUDGET: Duration = Duration::from_secs(10);
const SWEEP_BUDGET: Duration = Duration::from_secs(60);
const FLIP_TOL: f64 = 1e-10;
const TABLE1_BUDGET: Duration = Duration::from_secs(15 * 60);
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-5;
const KW_H_TOL: f64 = 1e-9;
const KW_P: f64 = 0.02732;
const KW_P_TOL: f64 = 1e-4;
const N_LABEL_PAIRS: u64 = 10_000;

type Outcome = Result<String, String>;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut rng = stream(derive_seed(101, &[i]));
        let n_s = rng.random_range(2..=8);
        let n_a = rng.random_range(2..=4);
        let discount = rng.random_range(0.1..0.95);
        let mdp = random_mdp(n_s, n_a, discount, &mut rng).map_err(|e| e.to_string())?;
        let new = random_policy(n_s, n_a, &mut rng);
        let base = random_policy(n_s, n_a, &mut rng);
        let j_new = expected_return(&mdp, &new, DEFAULT_TOL).map_err(|e| e.to_string())?;
        let j_base = expected_return(&mdp, &base, DEFAULT_TOL).map_err(|e| e.to_string())?;
        let pd = performance_difference(&mdp, &new, &base).map_err(|e| e.to_string())?;
        worst = worst.max((j_new - j_base - pd).abs());
    }
    let took = start.elapsed();
    check(
        worst < PD_TOL && took < PD_BUDGET,
        format!("100 MDPs, max |gap − PD| = {worst:.2e}, {took:.2?}"),
        format!("max |gap − PD| = {worst:.2e} (tol {PD_TOL:e}), {took:.2?}"),
    )
}

fn criterion_2_and_3() -> (Outcome, Outcome) {
    let start = Instant::now();
    let params = SweepParams::default();
    let report = match run_bound_sweep(&params, 0) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let took = start.elapsed();
    let s = &report.summary;
    let single = check(
        s.single_checks == 200 && s.single_holds == s.single_checks && took < SWEEP_BUDGET,
        format!(
            "{}/{} single-perturbation checks hold, {took:.2?}",
            s.single_holds, s.single_checks
        ),
        format!(
            "{}/{} single-perturbation checks hold, {took:.2?}",
            s.single_holds, s.single_checks
        ),
    );
    let mut holds = s.simultaneous_holds;
    let mut checks = s.simultaneous_checks;
    for seed in 1..4 {
        match run_bound_sweep(&params, seed) {
            Ok(r) => {
                holds += r.summary.simultaneous_holds;
                checks += r.summary.simultaneous_checks;
            }
            Err(e) => return (single, Err(e.to_string())),
        }
    }
    let multi = check(
        holds == checks && checks > 0,
        format!("{holds}/{checks} simultaneous-perturbation checks hold"),
        format!("{holds}/{checks} simultaneous-perturbation checks hold"),
    );
    (single, multi)
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    let mut wrong = Vec::new();
    for discount in [0.1, 0.5, 0.9] {
        for k in 0..=20 {
            let p = k as f64 / 20.0;
            let out = case_study_flip(p, discount).map_err(|e| e.to_string())?;
            worst = worst.max((out.gap - 10.0 * discount * (1.0 - 2.0 * p)).abs());
            let expected = if p < 0.5 {
                FlipSide::Risk
            } else if p > 0.5 {
                FlipSide::Safe
            } else {
                FlipSide::Tie
            };
            if out.preferred != expected {
                wrong.push(format!("p={p} γ={discount}"));
            }
        }
    }
    check(
        wrong.is_empty() && worst < FLIP_TOL,
        format!("63 points, sides correct, max gap error {worst:.1e}"),
        format!("wrong side at {wrong:?}, max gap error {worst:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let path = workspace_root().join("presets/table1.json");
    let cfg: ExperimentConfig = config::load(&path).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mdp = cfg.mdp.build(Some(&path)).map_err(|e| e.to_string())?;
    let m = run_matrix(&cfg, &mdp).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let idx = |list: &[f64], x: f64| list.iter().position(|&v| v == x).expect("preset grid");
    let (e0, e5) = (idx(&m.agent_eps, 0.0), idx(&m.agent_eps, 0.5));
    let (l0, l5) = (idx(&m.labeler_eps, 0.0), idx(&m.labeler_eps, 0.5));
    let col0: Vec<f64> = (0..m.labeler_eps.len())
        .map(|i| m.cell(i, e0).mean_return)
        .collect();
    let a = (0..col0.len()).all(|i| i == l0 || col0[l0] > col0[i]);
    let b = m.cell(l5, e5).mean_return > m.cell(l0, e5).mean_return;
    let row0: Vec<f64> = (0..m.agent_eps.len())
        .map(|j| m.cell(l0, j).mean_return)
        .collect();
    let c = row0.windows(2).all(|w| w[0] > w[1]);
    let diag: Vec<String> = (0..m.agent_eps.len().min(m.labeler_eps.len()))
        .map(|k| format!("{:.2}", m.cell(k, k).mean_return))
        .collect();
    let detail = format!(
        "(a) {a} (b) {b} (c) {c}; diagonal [{}]; ε=0 column {:?}; {took:.2?}",
        diag.join(", "),
        col0.iter()
            .map(|x| (x * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );
    check(a && b && c && took < TABLE1_BUDGET, detail.clone(), detail)
}

fn chained_segment(n_s: usize, n_a: usize, len: usize, rng: &mut StreamRng) -> Segment {
    let mut s = rng.random_range(0..n_s);
    let t = (0..len)
        .map(|_| {
            let next = rng.random_range(0..n_s);
            let t = Transition::new(s, rng.random_range(0..n_a), next);
            s = next;
            t
        })
        .collect();
    Segment::new(t).expect("chained")
}

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let mut rng = stream(derive_seed(606, &[i]));
        let n_s = rng.random_range(2..=6);
        let n_a = rng.random_range(2..=4);
        let len = rng.random_range(1..=4);
        let n_pairs = rng.random_range(1..=30);
        let pairs = (0..n_pairs)
            .map(|_| {
                let label = if rng.random::<bool>() {
                    Side::First
                } else {
                    Side::Second
                };
                let a = chained_segment(n_s, n_a, len, &mut rng);
                let b = chained_segment(n_s, n_a, len, &mut rng);
                PreferencePair::new(a, b, label, 0.5).expect("equal lengths")
            })
            .collect();
        let data = PreferenceDataset {
            header: DatasetHeader {
                mdp_ref: "random".into(),
                n_states: n_s,
                n_actions: n_a,
                discount: 0.9,
                belief_spec: BeliefSpec::Optimal,
                behavior_policy: Policy::uniform(n_s, n_a),
                alpha: Alpha::Finite(1.0),
                seed: i,
                n_trajectories: 0,
                segment_len: len,
                n_pairs,
                cap: 0,
            },
            pairs,
        };
        let params = SoftmaxPolicyParams {
            logits: SaTable::from_fn(n_s, n_a, |_, _| rng.random_range(-1.0..=1.0)),
        };
        let cfg = CplConfig {
            alpha: rng.random_range(0.5..=10.0),
            discount: rng.random_range(0.5..=0.99),
            lambda_bias: rng.random_range(0.01..=1.0),
            l2_coeff: rng.random_range(0.0..=0.1),
            ..CplConfig::gridworld_preset()
        };
        let g = cpl_grad(&params, &data, &cfg).map_err(|e| e.to_string())?;
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        for s in 0..n_s {
            for a in 0..n_a {
                let mut up = params.clone();
                let mut down = params.clone();
                up.logits.set(s, a, params.logits.get(s, a) + GRAD_STEP);
                down.logits.set(s, a, params.logits.get(s, a) - GRAD_STEP);
                let lu = cpl_loss(&up, &data, &cfg).map_err(|e| e.to_string())?;
                let ld = cpl_loss(&down, &data, &cfg).map_err(|e| e.to_string())?;
                err = err.max(((lu - ld) / (2.0 * GRAD_STEP) - g.get(s, a)).abs());
                scale = scale.max(g.get(s, a).abs());
            }
        }
        worst = worst.max(err / scale.max(1e-12));
    }
    check(
        worst < GRAD_REL_TOL,
        format!("20 instances, max relative sup-norm error {worst:.2e}"),
        format!("max relative sup-norm error {worst:.2e} (tol {GRAD_REL_TOL:e})"),
    )
}

fn criterion_7() -> Outcome {
    let three = LikertGroups::unnamed(vec![
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![7.0, 8.0, 9.0],
    ])
    .map_err(|e| e.to_string())?;
    let kw = kruskal_wallis(&three).map_err(|e| e.to_string())?;
    let kw_ok = (kw.h - 7.2).abs() < KW_H_TOL && (kw.p - KW_P).abs() < KW_P_TOL;

    let d = |a: &[f64], b: &[f64]| cliffs_delta(a, b).map_err(|e| e.to_string());
    let deltas = [
        d(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])?,
        d(&[1.0, 2.0], &[1.0, 2.0])?,
        d(&[1.0, 2.0], &[2.0, 3.0])?,
    ];
    let cliff_ok = deltas == [-1.0, 0.0, -0.75];

    let mut dunn_ok = true;
    for groups in [
        three.clone(),
        LikertGroups::unnamed(vec![
            vec![1.0, 2.0, 2.0, 3.0],
            vec![2.0, 3.0, 4.0],
            vec![1.0, 1.0, 5.0, 5.0],
        ])
        .map_err(|e| e.to_string())?,
    ] {
        let r = dunn_bonferroni(&groups).map_err(|e| e.to_string())?;
        for i in 0..3 {
            dunn_ok &= r.p_adjusted[i][i] == 1.0;
            for j in 0..3 {
                if i != j {
                    dunn_ok &= r.p_adjusted[i][j] == (3.0 * r.p_raw[i][j]).min(1.0);
                }
            }
        }
    }
    check(
        kw_ok && cliff_ok && dunn_ok,
        format!(
            "H = {:.9}, p = {:.6}; Cliff's delta {deltas:?}; Dunn diagonal and Bonferroni exact",
            kw.h, kw.p
        ),
        format!(
            "kw {kw_ok} (H {}, p {}), cliff {cliff_ok} {deltas:?}, dunn {dunn_ok}",
            kw.h, kw.p
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut agree = 0u64;
    let mut ties = 0u64;
    for i in 0..N_LABEL_PAIRS {
        let mut rng = stream(derive_seed(808, &[i]));
        let n_s = rng.random_range(2..=8);
        let n_a = rng.random_range(2..=4);
        let len = rng.random_range(1..=4);
        let discount = rng.random_range(0.1..0.99);
        let adv = SaTable::from_fn(n_s, n_a, |_, _| rng.random_range(-3i32..=0) as f64);
        let a = chained_segment(n_s, n_a, len, &mut rng);
        let b = chained_segment(n_s, n_a, len, &mut rng);
        let p = pref_prob_belief(&a, &b, &adv, discount, Alpha::Noiseless)
            .map_err(|e| e.to_string())?;
        let label = sample_label(p, Alpha::Noiseless, &mut rng);
        let gap = segment_adv_score(&a, &adv, discount) - segment_adv_score(&b, &adv, discount);
        if gap == 0.0 {
            ties += 1;
        }
        let expected = if gap >= 0.0 {
            Side::First
        } else {
            Side::Second
        };
        agree += u64::from(label == expected);
    }
    check(
        agree == N_LABEL_PAIRS,
        format!(
            "{agree}/{N_LABEL_PAIRS} labels match the score sign ({ties} exact ties, all First)"
        ),
        format!("{agree}/{N_LABEL_PAIRS} labels match the score sign"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_beliefrl"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.map_err(|e| e.to_string())?;
            let bytes = fs::read(e.path()).map_err(|e| e.to_string())?;
            Ok((e.file_name().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn criterion_9() -> Outcome {
    let root = workspace_root().join("presets");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let work = tmp.path();
    let preset = |name: &str| root.join(name).to_string_lossy().into_owned();

    // upstream artifacts for train and eval
    let prefs_dir = work.join("prefs");
    run_cli(&[
        "gen-prefs",
        "--config",
        &preset("gen_prefs.json"),
        "--out",
        prefs_dir.to_str().unwrap(),
    ])?;
    let train_cfg = work.join("train.json");
    fs::write(
        &train_cfg,
        serde_json::json!({ "dataset": prefs_dir.join("dataset.jsonl"), "cpl": CplConfig::gridworld_bias_preset() })
            .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let policy_dir = work.join("policy");
    run_cli(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--out",
        policy_dir.to_str().unwrap(),
    ])?;
    let eval_cfg = work.join("eval.json");
    fs::write(
        &eval_cfg,
        serde_json::json!({
            "mdp": { "builder": "gridworld", "discount": 0.7 },
            "policy": policy_dir.join("policy.json"),
            "agent_eps": [0.0, 0.3],
            "n_episodes": 50
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;

    let runs: Vec<(&str, String)> = vec![
        ("solve", preset("solve_gridworld.json")),
        ("gen-prefs", preset("gen_prefs.json")),
        ("train", train_cfg.to_string_lossy().into_owned()),
        ("eval", eval_cfg.to_string_lossy().into_owned()),
        ("table1", preset("table1.json")),
        ("verify-bound", preset("verify_bound.json")),
        ("case-study", preset("case_study.json")),
        ("stats", preset("likert.json")),
    ];
    let mut compared = 0;
    let mut differing = Vec::new();
    for (cmd, cfg) in &runs {
        for format in ["csv", "json"] {
            let mut outputs = Vec::new();
            for rep in 0..2 {
                let dir = work.join(format!("{cmd}-{format}-{rep}"));
                run_cli(&[
                    cmd,
                    "--config",
                    cfg,
                    "--out",
                    dir.to_str().unwrap(),
                    "--seed",
                    "7",
                    "--format",
                    format,
                ])?;
                outputs.push(dir_bytes(&dir)?);
            }
            compared += outputs[0].len();
            if outputs[0] != outputs[1] || outputs[0].is_empty() {
                differing.push(format!("{cmd} --format {format}"));
            }
        }
    }
    check(
        differing.is_empty(),
        format!("8 subcommands × 2 formats, {compared} files byte-identical across reruns"),
        format!("outputs differ for {differing:?}"),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "performance-difference identity", criterion_1()));
    let (two, three) = criterion_2_and_3();
    results.push((2, "single-perturbation bound sweep", two));
    results.push((3, "simultaneous-perturbation bound sweep", three));
    results.push((4, "case-study flip", criterion_4()));
    results.push((5, "noise matrix pattern", criterion_5()));
    results.push((6, "CPL gradient check", criterion_6()));
    results.push((7, "statistics oracles", criterion_7()));
    results.push((8, "noiseless labeling consistency", criterion_8()));
    results.push((9, "CLI determinism", criterion_9()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n}: {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
