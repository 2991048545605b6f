use anyhow::{bail, Result};
use hmlab::seed::task_seed;
use hmlab::{extractor_estimate, CylinderSampler};

use crate::config::ExtractorConfig;
use crate::output::RunContext;
use crate::Outcome;

pub const HEADER: [&str; 18] = [
    "trial",
    "sampler_seed",
    "set_size",
    "set_size_exact",
    "premise",
    "samples",
    "gip_value",
    "gip_estimate",
    "gip_std_error",
    "gip_bound",
    "gip_pass",
    "gadget_value",
    "gadget_estimate",
    "gadget_std_error",
    "gadget_bound",
    "gadget_pass",
    "warnings",
    "pass",
];

/// Writes `extractor.csv`, one row per sampled set. A trial fails when the
/// GIP estimate exceeds its bound by more than three standard errors.
pub fn extractor(ctx: &RunContext, cfg: &ExtractorConfig) -> Result<Outcome> {
    let mut table = ctx.table("extractor.csv", &HEADER)?;
    let mut pass = true;
    let mut warnings: Vec<String> = Vec::new();
    for trial in 0..cfg.trials {
        let sampler = CylinderSampler {
            mode: cfg.sampler.clone(),
            seed: task_seed(ctx.seed, trial),
        };
        let r = extractor_estimate(&cfg.gadget, &sampler, cfg.samples)?;
        if ctx.strict && !r.warnings.is_empty() {
            bail!("under --strict: {}", r.warnings.join("; "));
        }
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        pass &= r.pass();
        table.row([
            trial.to_string(),
            sampler.seed.to_string(),
            r.set_size.value.to_string(),
            r.set_size.exact.to_string(),
            r.premise.to_string(),
            r.samples.to_string(),
            r.gip.value.to_string(),
            r.gip.estimate.to_string(),
            r.gip.std_error.to_string(),
            r.gip.bound.to_string(),
            r.gip.pass.to_string(),
            r.gadget.value.to_string(),
            r.gadget.estimate.to_string(),
            r.gadget.std_error.to_string(),
            r.gadget.bound.to_string(),
            r.gadget.pass.to_string(),
            r.warnings.len().to_string(),
            r.pass().to_string(),
        ])?;
    }
    table.finish()?;
    Ok(Outcome { pass, warnings })
}
