use anyhow::{Context, Result};
use hmlab::protocol::{
    check_simplified, helper_protocol, prefix_protocol, random_guess_protocol, send_all_protocol, silent_protocol,
    x1_dependent_protocol, SimplifiedClaims,
};
use hmlab::{audit_entropy_loss, audit_info_upper_bound, baseline_index_protocol, simplify, AuditReport, TableProtocol};
use serde_json::json;

use crate::config::{AuditConfig, AuditName, Fixture, ProtocolSource};
use crate::output::RunContext;
use crate::Outcome;

pub const SUMMARY_HEADER: [&str; 8] = [
    "protocol",
    "audit",
    "error",
    "premise_met",
    "mutual_information",
    "c1",
    "c0",
    "pass",
];
pub const CHECK_HEADER: [&str; 6] = ["audit", "check", "evaluated", "failed", "first_failure", "pass"];

pub struct LoadedProtocol {
    pub protocol: TableProtocol,
    /// File contents when read from disk; they enter the config hash.
    pub source_bytes: Vec<u8>,
}

pub fn load_protocol(source: &ProtocolSource) -> Result<LoadedProtocol> {
    match source {
        ProtocolSource::File { file } => {
            let bytes = std::fs::read(file).with_context(|| format!("reading protocol {}", file.display()))?;
            let text = std::str::from_utf8(&bytes).context("protocol file is not UTF-8")?;
            let protocol =
                TableProtocol::from_json(text).with_context(|| format!("loading protocol {}", file.display()))?;
            Ok(LoadedProtocol {
                protocol,
                source_bytes: bytes,
            })
        }
        ProtocolSource::Fixture { fixture, gadget, c1, t } => {
            let protocol = match fixture {
                Fixture::SendAll => send_all_protocol(gadget),
                Fixture::Prefix => prefix_protocol(gadget, c1.unwrap_or(0)),
                Fixture::RandomGuess => random_guess_protocol(gadget),
                Fixture::Silent => silent_protocol(gadget),
                Fixture::Helper => helper_protocol(gadget),
                Fixture::X1Dependent => x1_dependent_protocol(gadget),
                Fixture::Baseline => baseline_index_protocol(t.unwrap_or(0), gadget),
            }
            .context("building fixture protocol")?;
            Ok(LoadedProtocol {
                protocol,
                source_bytes: Vec::new(),
            })
        }
    }
}

fn audit_name(a: AuditName) -> &'static str {
    match a {
        AuditName::SimplifiedClaims => "simplified_claims",
        AuditName::InfoUpperBound => "info_upper_bound",
        AuditName::EntropyLoss => "entropy_loss",
    }
}

/// Writes `protocol.json` (the audited protocol), `audit.json`,
/// `audit_summary.csv`, `audit_checks.csv` and `audit_transcripts.csv`.
///
/// An entropy-loss audit whose error premise is unmet is reported as a
/// warning, not a failure.
pub fn protocol_audit(ctx: &RunContext, cfg: &AuditConfig, original: TableProtocol) -> Result<Outcome> {
    let thresholds = cfg.thresholds.parse()?;
    let audited = if cfg.simplify {
        simplify(&original).context("simplifying protocol")?
    } else {
        original.clone()
    };
    ctx.write_text("protocol.json", &audited.to_json())?;

    let mut claims: Option<SimplifiedClaims> = None;
    let mut reports: Vec<(AuditName, AuditReport)> = Vec::new();
    for &a in &cfg.audits {
        match a {
            AuditName::SimplifiedClaims => {
                let candidate = if cfg.simplify { audited.clone() } else { simplify(&original)? };
                claims = Some(check_simplified(&original, &candidate)?);
            }
            AuditName::InfoUpperBound => reports.push((a, audit_info_upper_bound(&audited)?)),
            AuditName::EntropyLoss => reports.push((a, audit_entropy_loss(&audited, &thresholds)?)),
        }
    }

    let mut pass = true;
    let mut warnings = Vec::new();
    let mut summary = ctx.table("audit_summary.csv", &SUMMARY_HEADER)?;
    let mut checks = ctx.table("audit_checks.csv", &CHECK_HEADER)?;
    if let Some(c) = &claims {
        pass &= c.pass();
        summary.row([
            original.name().to_string(),
            "simplified_claims".to_string(),
            hmlab::ratio::format(&c.error_simplified),
            "true".to_string(),
            String::new(),
            c.cost_simplified.c1.to_string(),
            c.cost_simplified.c0.to_string(),
            c.pass().to_string(),
        ])?;
        for (name, ok) in [
            ("error_equal", c.error_equal),
            ("cost_relation", c.cost_relation),
            ("x1_independent", c.x1_independent),
        ] {
            let detail = match (&c.counterexample, name) {
                (Some(x), "x1_independent") => serde_json::to_string(x)?,
                _ => String::new(),
            };
            checks.row([
                "simplified_claims".to_string(),
                name.to_string(),
                "1".to_string(),
                (!ok as u8).to_string(),
                detail,
                ok.to_string(),
            ])?;
        }
    }
    let mut transcripts = ctx.table(
        "audit_transcripts.csv",
        &std::iter::once("audit")
            .chain(AuditReport::CSV_HEADER.split(','))
            .collect::<Vec<_>>(),
    )?;
    for (a, r) in &reports {
        let name = audit_name(*a);
        let holds = r.checks.all_hold();
        pass &= holds;
        if !r.premise_met {
            warnings.push(format!("{name}: {}", r.premise));
        }
        summary.row([
            r.protocol.clone(),
            name.to_string(),
            r.error.clone(),
            r.premise_met.to_string(),
            r.aggregate.mutual_information.to_string(),
            r.aggregate.c1.to_string(),
            r.aggregate.c0.to_string(),
            holds.to_string(),
        ])?;
        for c in r.checks.iter() {
            checks.row([
                name.to_string(),
                c.name.clone(),
                c.evaluated.to_string(),
                c.failed.to_string(),
                c.first_failure.clone().unwrap_or_default(),
                c.holds().to_string(),
            ])?;
        }
        let csv_text = r.to_csv();
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        for record in reader.records() {
            let record = record?;
            transcripts.row(std::iter::once(name).chain(record.iter()))?;
        }
    }
    summary.finish()?;
    checks.finish()?;
    transcripts.finish()?;

    let doc = json!({
        "seed": ctx.seed,
        "config_hash": ctx.config_hash,
        "protocol": original.name(),
        "simplified": cfg.simplify,
        "simplified_claims": claims,
        "audits": reports.iter().map(|(_, r)| r).collect::<Vec<_>>(),
        "pass": pass,
    });
    ctx.write_text("audit.json", &serde_json::to_string_pretty(&doc)?)?;
    Ok(Outcome { pass, warnings })
}
