//! Rank-based tests for Likert-style group comparisons.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named samples, one list of per-participant scores per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertGroups {
    names: Vec<String>,
    groups: Vec<Vec<f64>>,
}

impl LikertGroups {
    pub fn new(names: Vec<String>, groups: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != groups.len() {
            return Err(Error::Stats(format!(
                "{} names for {} groups",
                names.len(),
                groups.len()
            )));
        }
        if groups.len() < 2 {
            return Err(Error::Stats(format!(
                "need at least 2 groups, got {}",
                groups.len()
            )));
        }
        if let Some(i) = groups.iter().position(|g| g.is_empty()) {
            return Err(Error::Stats(format!("group '{}' is empty", names[i])));
        }
        if let Some(i) = groups.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Stats(format!(
                "group '{}' has a non-finite score",
                names[i]
            )));
        }
        Ok(Self { names, groups })
    }

    /// Groups named `g0`, `g1`, ...
    pub fn unnamed(groups: Vec<Vec<f64>>) -> Result<Self> {
        let names = (0..groups.len()).map(|i| format!("g{i}")).collect();
        Self::new(names, groups)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Mid-ranks (1-based) of the pooled sample, split back into groups, plus `Σ (t³ − t)`
/// over tie blocks.
fn pooled_ranks(data: &LikertGroups) -> (Vec<Vec<f64>>, f64) {
    let mut pooled: Vec<(f64, usize, usize)> = data
        .groups
        .iter()
        .enumerate()
        .flat_map(|(g, xs)| xs.iter().enumerate().map(move |(i, &x)| (x, g, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks: Vec<Vec<f64>> = data.groups.iter().map(|g| vec![0.0; g.len()]).collect();
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        for &(_, g, k) in &pooled[i..j] {
            ranks[g][k] = mid;
        }
        let t = (j - i) as f64;
        tie_sum += t * t * t - t;
        i = j;
    }
    (ranks, tie_sum)
}

fn check_size(data: &LikertGroups) -> Result<()> {
    if data.n_total() < 3 {
        return Err(Error::Stats(format!(
            "need at least 3 observations, got {}",
            data.n_total()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub tie_correction: bool,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            tie_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
    pub mean_ranks: Vec<f64>,
}

pub fn kruskal_wallis(data: &LikertGroups) -> Result<KruskalWallis> {
    kruskal_wallis_with(data, TestOptions::default())
}

pub fn kruskal_wallis_with(data: &LikertGroups, opts: TestOptions) -> Result<KruskalWallis> {
    check_size(data)?;
    let (ranks, tie_sum) = pooled_ranks(data);
    let n = data.n_total() as f64;
    let df = data.n_groups() - 1;
    let mean_ranks: Vec<f64> = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let correction = if opts.tie_correction {
        1.0 - tie_sum / (n * n * n - n)
    } else {
        1.0
    };
    if correction <= 0.0 {
        return Ok(KruskalWallis {
            h: 0.0,
            p: 1.0,
            df,
            mean_ranks,
        });
    }
    let s: f64 = ranks
        .iter()
        .map(|r| {
            let total: f64 = r.iter().sum();
            total * total / r.len() as f64
        })
        .sum();
    let h = ((12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)) / correction).max(0.0);
    Ok(KruskalWallis {
        h,
        p: chi2_sf(h, df as f64),
        df,
        mean_ranks,
    })
}

/// Pairwise Dunn statistics; all matrices are `k × k`, indexed like the input groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnResult {
    pub names: Vec<String>,
    /// `z[i][j]` is positive when group `i` ranks higher than group `j`.
    pub z: Vec<Vec<f64>>,
    pub p_raw: Vec<Vec<f64>>,
    pub p_adjusted: Vec<Vec<f64>>,
    pub n_comparisons: usize,
}

pub fn dunn_bonferroni(data: &LikertGroups) -> Result<DunnResult> {
    dunn_bonferroni_with(data, TestOptions::default())
}

pub fn dunn_bonferroni_with(data: &LikertGroups, opts: TestOptions) -> Result<DunnResult> {
    check_size(data)?;
    let (ranks, tie_sum) = pooled_ranks(data);
    let n = data.n_total() as f64;
    let k = data.n_groups();
    let m = k * (k - 1) / 2;
    let mean: Vec<f64> = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let mut variance = n * (n + 1.0) / 12.0;
    if opts.tie_correction {
        variance -= tie_sum / (12.0 * (n - 1.0));
    }
    let mut z = vec![vec![0.0; k]; k];
    let mut p_raw = vec![vec![1.0; k]; k];
    let mut p_adjusted = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let se =
                (variance * (1.0 / ranks[i].len() as f64 + 1.0 / ranks[j].len() as f64)).sqrt();
            let zij = if se > 0.0 {
                (mean[i] - mean[j]) / se
            } else {
                0.0
            };
            let p = (2.0 * normal_sf(zij.abs())).min(1.0);
            z[i][j] = zij;
            p_raw[i][j] = p;
            p_adjusted[i][j] = (m as f64 * p).min(1.0);
        }
    }
    Ok(DunnResult {
        names: data.names.clone(),
        z,
        p_raw,
        p_adjusted,
        n_comparisons: m,
    })
}

/// `(#{x > y} − #{x < y}) / (|a|·|b|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Stats(
            "cliffs_delta needs two non-empty samples".into(),
        ));
    }
    let mut score: i64 = 0;
    for x in a {
        for y in b {
            if x > y {
                score += 1;
            } else if x < y {
                score -= 1;
            }
        }
    }
    Ok(score as f64 / (a.len() * b.len()) as f64)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Lentz's method on the continued fraction for `Q(a, x)`.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    let tiny = f64::MIN_POSITIVE / GAMMA_EPS;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_fraction(a, x)
    }
}

/// `P(χ²_df > x)`.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    gamma_q(df / 2.0, x / 2.0)
}

/// `erfc(x)`, through `erfc(x) = Q(1/2, x²)` for `x ≥ 0`.
pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        gamma_q(0.5, x * x)
    } else {
        1.0 + gamma_p(0.5, x * x)
    }
}

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRow {
    pub line: u64,
    pub group_id: String,
    pub participant_id: String,
    pub response: f64,
    /// Values of the declared extra columns, by column name.
    pub extras: HashMap<String, String>,
}

pub const REQUIRED_COLUMNS: [&str; 3] = ["group_id", "participant_id", "response"];

/// Row predicate; rows for which it returns `false` are excluded and logged.
pub type RowFilter = Box<dyn Fn(&ResponseRow) -> bool>;

#[derive(Default)]
pub struct IngestOptions {
    /// Columns allowed beyond the required three.
    pub extra_columns: Vec<String>,
    pub filter: Option<RowFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub line: u64,
    pub group_id: String,
    pub participant_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub groups: LikertGroups,
    /// Data rows read, excluded ones included.
    pub n_rows: usize,
    pub excluded: Vec<Exclusion>,
}

pub fn ingest_likert_csv(path: impl AsRef<Path>) -> Result<IngestReport> {
    ingest_likert_csv_with(path, &IngestOptions::default())
}

pub fn ingest_likert_csv_with(
    path: impl AsRef<Path>,
    opts: &IngestOptions,
) -> Result<IngestReport> {
    let file = std::fs::File::open(path)?;
    ingest_likert_reader(file, opts)
}

fn csv_err(line: u64, reason: impl Into<String>) -> Error {
    Error::Csv {
        line,
        reason: reason.into(),
    }
}

/// Averages each participant's responses and groups the means by `group_id`.
///
/// Groups and participants keep their order of first appearance. Line numbers count the
/// header as line 1.
pub fn ingest_likert_reader<R: Read>(input: R, opts: &IngestOptions) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(csv_err(1, "file is empty"));
    }
    let mut index = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        let known =
            REQUIRED_COLUMNS.contains(&name) || opts.extra_columns.iter().any(|c| c == name);
        if !known {
            return Err(csv_err(1, format!("unknown column '{name}'")));
        }
        if index.insert(name.to_string(), i).is_some() {
            return Err(csv_err(1, format!("duplicate column '{name}'")));
        }
    }
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| csv_err(1, format!("missing column '{name}'")))
    };
    let (gi, pi, ri) = (col("group_id")?, col("participant_id")?, col("response")?);

    let mut group_order: Vec<String> = Vec::new();
    let mut participants: Vec<Vec<String>> = Vec::new();
    let mut sums: HashMap<(String, String), (f64, usize)> = HashMap::new();
    let mut excluded = Vec::new();
    let mut n_rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        n_rows += 1;
        let group_id = record[gi].to_string();
        let participant_id = record[pi].to_string();
        if group_id.is_empty() || participant_id.is_empty() {
            return Err(csv_err(
                line,
                "group_id and participant_id must be non-empty",
            ));
        }
        let response: f64 = record[ri]
            .parse()
            .map_err(|_| csv_err(line, format!("response '{}' is not a number", &record[ri])))?;
        if !response.is_finite() {
            return Err(csv_err(
                line,
                format!("response '{}' is not finite", &record[ri]),
            ));
        }
        let row = ResponseRow {
            line,
            group_id,
            participant_id,
            response,
            extras: opts
                .extra_columns
                .iter()
                .filter_map(|c| index.get(c).map(|&i| (c.clone(), record[i].to_string())))
                .collect(),
        };
        if let Some(keep) = &opts.filter {
            if !keep(&row) {
                excluded.push(Exclusion {
                    line,
                    group_id: row.group_id,
                    participant_id: row.participant_id,
                });
                continue;
            }
        }
        let g = match group_order.iter().position(|x| *x == row.group_id) {
            Some(g) => g,
            None => {
                group_order.push(row.group_id.clone());
                participants.push(Vec::new());
                group_order.len() - 1
            }
        };
        let key = (row.group_id, row.participant_id);
        let entry = sums.entry(key.clone()).or_insert_with(|| {
            participants[g].push(key.1.clone());
            (0.0, 0)
        });
        entry.0 += row.response;
        entry.1 += 1;
    }
    if n_rows == 0 {
        return Err(csv_err(2, "no data rows"));
    }
    let groups = group_order
        .iter()
        .zip(&participants)
        .map(|(g, ps)| {
            ps.iter()
                .map(|p| {
                    let (s, c) = sums[&(g.clone(), p.clone())];
                    s / c as f64
                })
                .collect()
        })
        .collect();
    Ok(IngestReport {
        groups: LikertGroups::new(group_order, groups)?,
        n_rows,
        excluded,
    })
}
