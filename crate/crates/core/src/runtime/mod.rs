//! Class runtimes: template selection, the deployed platform and its
//! invocation path.

pub mod external;
pub mod invocation;
mod platform;
pub mod template;

pub use external::{ExternalDb, ExternalDbConfig};
pub use invocation::{Breakdown, FailReason, InvocationOutcome, InvocationRequest, OutcomeLog, OutcomeSink, ResourceSample, Status};
pub use platform::{Counters, DeployOptions, DeploymentInfo, LoadTarget, NodeSpec, Platform, PlatformConfig};
pub use template::{declared_requirements, default_registry, select_template, ClassRuntimeTemplate, Requirement};

use crate::enforcement::EnforcementError;
use crate::package::PackageError;
use crate::sim::SimError;
use crate::store::StoreError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Package(#[from] PackageError),
    #[error("no runtime template can realize class `{0}`")]
    NoTemplate(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Enforcement(#[from] EnforcementError),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{class}` has no function `{function}`")]
    UnknownFunction { class: String, function: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}
