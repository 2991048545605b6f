//! Exact and Monte Carlo tools for the lifted Hidden Matching problem in the
//! one-way number-on-forehead model: finite-field gadget evaluation, the
//! quantum protocol, table-based classical protocols and audits of the
//! classical lower-bound argument.

pub mod analysis;
pub mod gadget;
pub mod gf2n;
pub mod infotheory;
pub mod matching;
pub mod protocol;
pub mod quantum;
pub mod ratio;
pub mod seed;
pub mod suites;

pub use analysis::{
    audit_entropy_loss, audit_info_upper_bound, spanning_forest, verify_turan, AnalysisError, AuditReport,
    BipartiteGraph, Thresholds,
};
pub use gadget::{
    eval_gadget, eval_gip, extractor_estimate, CylinderSampler, GadgetError, GadgetInput, GadgetSpec, GipSpec,
    SamplerMode,
};
pub use gf2n::{FieldElement, FieldError, FieldSpec};
pub use infotheory::{InfoError, JointDistribution};
pub use matching::{check_answer, verify_family, Answer, Edge, HMInstance, MatchingError, MatchingFamily};
pub use protocol::{
    baseline_index_protocol, distributional_error, run_protocol, simplify, verify_simplified_claims, Bits,
    CostReport, ProtocolError, TableProtocol, Transcript,
};
pub use quantum::{run_quantum_protocol, zero_error_sweep, QuantumError};
pub use suites::{run_suite, Suite, SuiteReport};
