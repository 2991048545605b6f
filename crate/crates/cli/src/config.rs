//! JSON experiment configs, one shape per subcommand.
//!
//! Every field has a default, so a missing `--config` means "run the
//! defaults". Unknown fields are rejected. The seed is kept out of the
//! config hash; it is reported in its own column.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hmlab::analysis::Thresholds;
use hmlab::protocol::ZSource;
use hmlab::suites::Suite;
use hmlab::{GadgetSpec, SamplerMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_SEED: u64 = 1;

/// Loads a config of type `T`, or its defaults when `path` is `None`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// First 16 hex digits of SHA-256 over the subcommand name, the config as
/// canonical JSON, and any extra bytes the run depends on.
pub fn config_hash<T: Serialize>(command: &str, config: &T, extra: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(b"\n");
    h.update(extra);
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantumConfig {
    pub n0: u32,
    /// Write every outcome row, not just the summary.
    pub distributions: bool,
    #[serde(skip_serializing)]
    pub seed: Option<u64>,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig {
            n0: 4,
            distributions: true,
            seed: None,
        }
    }
}

impl QuantumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 < 2 || !self.n0.is_multiple_of(2) {
            bail!("n0 = {} must be even and at least 2", self.n0);
        }
        if self.n0 > 24 {
            bail!("n0 = {} exceeds the exhaustive sweep limit of 24", self.n0);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub gadget: GadgetSpec,
    pub sampler: SamplerMode,
    /// Independent random sets, each with its own sampling run.
    pub trials: u64,
    pub samples: u64,
    #[serde(skip_serializing)]
    pub seed: Option<u64>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            gadget: GadgetSpec::with_degree(2, 3, 8, 2).expect("valid default gadget"),
            sampler: SamplerMode::Rectangle {
                sizes: [1 << 24, 1 << 21],
            },
            trials: 10,
            samples: 100_000,
            seed: None,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        if self.samples < hmlab::gadget::MIN_EXTRACTOR_SAMPLES {
            bail!(
                "samples = {} is below the minimum of {}",
                self.samples,
                hmlab::gadget::MIN_EXTRACTOR_SAMPLES
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    SendAll,
    Prefix,
    RandomGuess,
    Silent,
    Helper,
    X1Dependent,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ProtocolSource {
    File {
        file: PathBuf,
    },
    Fixture {
        fixture: Fixture,
        gadget: GadgetSpec,
        /// Prefix length for `prefix`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c1: Option<u32>,
        /// Index-set size for `baseline`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditName {
    SimplifiedClaims,
    InfoUpperBound,
    EntropyLoss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub error_gate: String,
    pub good_transcript: String,
    pub good_matching: String,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            error_gate: "1/16".into(),
            good_transcript: "1/8".into(),
            good_matching: "1/4".into(),
        }
    }
}

impl ThresholdConfig {
    pub fn parse(&self) -> Result<Thresholds> {
        let get = |name: &str, s: &str| {
            hmlab::ratio::parse(s).with_context(|| format!("threshold {name} = `{s}` is not a rational"))
        };
        let t = Thresholds {
            error_gate: get("error_gate", &self.error_gate)?,
            good_transcript: get("good_transcript", &self.good_transcript)?,
            good_matching: get("good_matching", &self.good_matching)?,
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub protocol: ProtocolSource,
    /// Audit the simplified version (the audits require x1-independence).
    pub simplify: bool,
    pub audits: Vec<AuditName>,
    pub thresholds: ThresholdConfig,
    #[serde(skip_serializing)]
    pub seed: Option<u64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            protocol: ProtocolSource::Fixture {
                fixture: Fixture::Prefix,
                gadget: GadgetSpec::with_degree(1, 4, 1, 4).expect("valid default gadget"),
                c1: Some(2),
                t: None,
            },
            simplify: true,
            audits: vec![AuditName::SimplifiedClaims, AuditName::InfoUpperBound],
            thresholds: ThresholdConfig::default(),
            seed: None,
        }
    }
}

impl AuditConfig {
    /// Resolves a relative protocol file against the config's directory.
    pub fn resolve_paths(&mut self, config_path: Option<&Path>) {
        if let (ProtocolSource::File { file }, Some(cfg)) = (&mut self.protocol, config_path) {
            if file.is_relative() {
                if let Some(dir) = cfg.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.audits.is_empty() {
            bail!("no audits requested");
        }
        self.thresholds.parse()?;
        if let ProtocolSource::Fixture { fixture, c1, t, .. } = &self.protocol {
            match fixture {
                Fixture::Prefix if c1.is_none() => bail!("fixture `prefix` needs c1"),
                Fixture::Baseline if t.is_none() => bail!("fixture `baseline` needs t"),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuitesConfig {
    pub instances: u64,
    pub suites: Vec<Suite>,
    #[serde(skip_serializing)]
    pub seed: Option<u64>,
}

impl Default for SuitesConfig {
    fn default() -> Self {
        SuitesConfig {
            instances: 10_000,
            suites: Suite::ALL.to_vec(),
            seed: None,
        }
    }
}

impl SuitesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            bail!("instances must be positive");
        }
        if self.suites.is_empty() {
            bail!("no suites requested");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Length of a uniform hidden string. Ignored when `gadget` is set.
    pub n0: u32,
    /// Draw the hidden string from the gadget instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gadget: Option<GadgetSpec>,
    /// Index-set sizes to sweep; all of `0..=n0` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<u32>>,
    pub trials: u64,
    #[serde(skip_serializing)]
    pub seed: Option<u64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            n0: 64,
            gadget: None,
            t: None,
            trials: 100_000,
            seed: None,
        }
    }
}

impl BaselineConfig {
    pub fn source(&self) -> ZSource {
        match self.gadget {
            Some(gadget) => ZSource::Gadget { gadget },
            None => ZSource::Uniform { n0: self.n0 },
        }
    }

    pub fn t_values(&self) -> Vec<u32> {
        match &self.t {
            Some(t) => t.clone(),
            None => (0..=self.source().n0()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n0 = self.source().n0();
        if self.gadget.is_none() && (!(2..=64).contains(&n0) || !n0.is_multiple_of(2)) {
            bail!("n0 = {n0} must be even in 2..=64");
        }
        if let Some(g) = &self.gadget {
            if g.input_bits() > 64 {
                bail!("gadget input of {} bits does not fit a word", g.input_bits());
            }
        }
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        let t = self.t_values();
        if t.is_empty() {
            bail!("no t values");
        }
        if let Some(bad) = t.iter().find(|&&t| t > n0) {
            bail!("t = {bad} exceeds n0 = {n0}");
        }
        if t.windows(2).any(|w| w[0] >= w[1]) {
            bail!("t values must be strictly increasing");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        QuantumConfig::default().validate().unwrap();
        ExtractorConfig::default().validate().unwrap();
        AuditConfig::default().validate().unwrap();
        SuitesConfig::default().validate().unwrap();
        BaselineConfig::default().validate().unwrap();
    }

    #[test]
    fn quantum_rejects_odd_n0() {
        let c: QuantumConfig = serde_json::from_str(r#"{"n0": 3}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<QuantumConfig>(r#"{"n": 4}"#).is_err());
        assert!(serde_json::from_str::<SuitesConfig>(r#"{"instances": 5, "extra": 1}"#).is_err());
    }

    #[test]
    fn modulus_is_filled_in() {
        let c: AuditConfig = serde_json::from_str(
            r#"{"protocol": {"fixture": "send-all", "gadget": {"p": 1, "degree": 4, "r": 1, "n0": 4}}}"#,
        )
        .unwrap();
        let ProtocolSource::Fixture { gadget, .. } = c.protocol else {
            panic!("fixture expected")
        };
        assert_eq!(gadget.field().modulus(), 0b10011);
    }

    #[test]
    fn hash_ignores_seed_but_not_parameters() {
        let a = QuantumConfig::default();
        let b = QuantumConfig {
            seed: Some(9),
            ..a.clone()
        };
        let c = QuantumConfig { n0: 8, ..a.clone() };
        assert_eq!(config_hash("q", &a, b""), config_hash("q", &b, b""));
        assert_ne!(config_hash("q", &a, b""), config_hash("q", &c, b""));
        assert_ne!(config_hash("q", &a, b""), config_hash("x", &a, b""));
        assert_eq!(config_hash("q", &a, b"").len(), 16);
    }

    #[test]
    fn baseline_validation() {
        let c = BaselineConfig {
            t: Some(vec![0, 65]),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = BaselineConfig {
            n0: 7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(BaselineConfig::default().t_values().len(), 65);
    }
}
