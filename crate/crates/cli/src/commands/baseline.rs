use anyhow::Result;
use hmlab::protocol::{baseline_success_mc, BaselineEstimate, ZSource};

use crate::config::BaselineConfig;
use crate::output::RunContext;
use crate::Outcome;

pub const SWEEP_HEADER: [&str; 7] = ["n0", "t", "trials", "successes", "success", "std_error", "expected"];
pub const CHECK_HEADER: [&str; 5] = ["check", "t", "value", "bound", "pass"];

/// Success probability of the index baseline on a uniform string: the
/// answer is certain when some edge of the matching has both endpoints in
/// the known set, and a coin flip otherwise. A `t`-subset of `2m`
/// positions misses every full edge with probability `C(m,t) 2^t / C(2m,t)`.
pub fn closed_form_success(n0: u32, t: u32) -> f64 {
    let m = n0 as f64 / 2.0;
    let miss: f64 = (0..t).map(|i| 2.0 * (m - i as f64).max(0.0) / (n0 - i) as f64).product();
    1.0 - miss / 2.0
}

/// Writes `baseline_sweep.csv` and `baseline_checks.csv`.
///
/// Checks: consecutive estimates never drop by more than three combined
/// standard errors, `t = n0` always succeeds, and for a uniform string
/// `t = 0` is within three standard errors of 1/2 and every estimate is
/// within four standard errors of the closed form.
pub fn baseline_sweep(ctx: &RunContext, cfg: &BaselineConfig) -> Result<Outcome> {
    let source = cfg.source();
    let n0 = source.n0();
    let uniform = matches!(source, ZSource::Uniform { .. });
    let estimates: Vec<BaselineEstimate> = cfg
        .t_values()
        .into_iter()
        .map(|t| baseline_success_mc(&source, t, cfg.trials, ctx.seed))
        .collect::<Result<_, _>>()?;

    let mut sweep = ctx.table("baseline_sweep.csv", &SWEEP_HEADER)?;
    for e in &estimates {
        let expected = if uniform { closed_form_success(n0, e.t).to_string() } else { String::new() };
        sweep.row([
            n0.to_string(),
            e.t.to_string(),
            e.trials.to_string(),
            e.successes.to_string(),
            e.success.to_string(),
            e.std_error.to_string(),
            expected,
        ])?;
    }
    sweep.finish()?;

    let mut checks = ctx.table("baseline_checks.csv", &CHECK_HEADER)?;
    let mut pass = true;
    let mut check = |name: &str, t: u32, value: f64, bound: f64, ok: bool| {
        pass &= ok;
        checks.row([name.to_string(), t.to_string(), value.to_string(), bound.to_string(), ok.to_string()])
    };
    for w in estimates.windows(2) {
        let slack = 3.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        let drop = w[0].success - w[1].success;
        check("nondecreasing", w[1].t, drop, slack, drop <= slack)?;
    }
    for e in &estimates {
        if e.t == n0 {
            check("full_information", e.t, e.success, 1.0, e.successes == e.trials)?;
        }
        if uniform && e.t == 0 {
            let dev = (e.success - 0.5).abs();
            check("no_information_half", 0, dev, 3.0 * e.std_error, dev <= 3.0 * e.std_error)?;
        }
        if uniform {
            let p = closed_form_success(n0, e.t);
            let sigma = (p * (1.0 - p) / e.trials as f64).sqrt();
            let dev = (e.success - p).abs();
            check("closed_form", e.t, dev, 4.0 * sigma, dev <= 4.0 * sigma + 1e-12)?;
        }
    }
    checks.finish()?;
    Ok(Outcome {
        pass,
        warnings: Vec::new(),
    })
}
