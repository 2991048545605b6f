//! One module per subcommand. Each writes its report files and returns
//! whether every assertion held; errors mean the config was unusable.

mod audit;
mod baseline;
mod extractor;
mod quantum;
mod suites;

pub use audit::{load_protocol, protocol_audit, LoadedProtocol};
pub use baseline::{baseline_sweep, closed_form_success};
pub use extractor::extractor;
pub use quantum::quantum_check;
pub use suites::property_suites;
