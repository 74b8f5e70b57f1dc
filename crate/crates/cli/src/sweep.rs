//! Batched bound verification over random instances.

use beliefrl_core::bound::{
    simultaneous_row, single_perturbation_rows, SimultaneousRow, SweepParams, SweepRow,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n_instances: usize,
    pub single_checks: usize,
    pub single_holds: usize,
    pub simultaneous_checks: usize,
    pub simultaneous_holds: usize,
    /// Smallest `j_delta − bound_value` seen across all checks.
    pub min_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub single: Vec<SweepRow>,
    pub simultaneous: Vec<SimultaneousRow>,
    pub summary: SweepSummary,
}

pub fn run_bound_sweep(params: &SweepParams, seed: u64) -> Result<SweepReport, CliError> {
    params.validate()?;
    let per_instance: Vec<(Vec<SweepRow>, SimultaneousRow)> = (0..params.n_instances)
        .into_par_iter()
        .map(|i| {
            let at = |e: beliefrl_core::Error| CliError::from(e).context(format!("instance {i}"));
            Ok((
                single_perturbation_rows(params, seed, i).map_err(at)?,
                simultaneous_row(params, seed, i).map_err(at)?,
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let (single, simultaneous): (Vec<Vec<SweepRow>>, Vec<SimultaneousRow>) =
        per_instance.into_iter().unzip();
    let single: Vec<SweepRow> = single.into_iter().flatten().collect();
    let slacks = single
        .iter()
        .map(|r| r.j_delta - r.bound_value)
        .chain(simultaneous.iter().map(|r| r.j_delta - r.bound_value));
    let summary = SweepSummary {
        n_instances: params.n_instances,
        single_checks: single.len(),
        single_holds: single.iter().filter(|r| r.holds).count(),
        simultaneous_checks: simultaneous.len(),
        simultaneous_holds: simultaneous.iter().filter(|r| r.holds).count(),
        min_slack: slacks.reduce(f64::min),
    };
    Ok(SweepReport {
        single,
        simultaneous,
        summary,
    })
}
