use anyhow::Result;
use hmlab::matching::answer_is_valid;
use hmlab::quantum::qubit_cost;
use hmlab::zero_error_sweep;

use crate::config::QuantumConfig;
use crate::output::RunContext;
use crate::Outcome;

pub const DISTRIBUTION_HEADER: [&str; 9] = ["n0", "z", "x1", "left", "right", "sign", "probability", "b", "valid"];
pub const SUMMARY_HEADER: [&str; 8] = [
    "n0",
    "cases",
    "invalid_cases",
    "off_value_outcomes",
    "unnormalized",
    "max_probability_deviation",
    "qubits",
    "pass",
];

/// Writes `quantum_check.csv` (every outcome, `2m` rows per `(z, x1)`) and
/// `quantum_summary.csv`.
pub fn quantum_check(ctx: &RunContext, cfg: &QuantumConfig) -> Result<Outcome> {
    let n0 = cfg.n0;
    let m = n0 as usize / 2;
    let mut table = match cfg.distributions {
        true => Some(ctx.table("quantum_check.csv", &DISTRIBUTION_HEADER)?),
        false => None,
    };
    let mut write_error = None;
    let report = zero_error_sweep(n0, |z, x1, dist| {
        let Some(t) = table.as_mut() else { return };
        if write_error.is_some() {
            return;
        }
        for o in &dist.entries {
            let a = o.answer();
            let row = [
                n0.to_string(),
                z.to_string(),
                x1.to_string(),
                o.edge.left.to_string(),
                o.edge.right.to_string(),
                o.sign.as_char().to_string(),
                o.probability.to_string(),
                (a.b as u8).to_string(),
                answer_is_valid(z, x1, m, &a).to_string(),
            ];
            if let Err(e) = t.row(row) {
                write_error = Some(e);
                return;
            }
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    if let Some(t) = table {
        t.finish()?;
    }
    let mut summary = ctx.table("quantum_summary.csv", &SUMMARY_HEADER)?;
    summary.row([
        n0.to_string(),
        report.cases.to_string(),
        report.invalid_cases.to_string(),
        report.off_value_outcomes.to_string(),
        report.unnormalized.to_string(),
        report.max_probability_deviation.to_string(),
        qubit_cost(n0).to_string(),
        report.pass().to_string(),
    ])?;
    summary.finish()?;
    Ok(Outcome {
        pass: report.pass(),
        warnings: Vec::new(),
    })
}
