//! Class packages: manifest parsing and inheritance resolution.

mod manifest;
mod resolve;

pub use manifest::{
    parse_manifest, Archetype, ClassDefinition, ConstraintSpec, FunctionDefinition, KeyKind, KeySpec, Locality, PackageManifest,
    QosSpec, ServiceTime, WorkloadProfile, UNENFORCED_CONSTRAINTS,
};
pub use resolve::{effective_requirements, resolve_inheritance, EffectiveRequirements, ResolvedClass, ResolvedFunction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PackageError {
    #[error("malformed manifest: {0}")]
    Syntax(String),
    #[error("manifest schema violation: {0}")]
    Schema(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("inheritance cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("class `{class}` names unknown parent `{parent}`")]
    UnknownParent { class: String, parent: String },
    #[error("class `{class}` declares `{name}` twice")]
    DuplicateKey { class: String, name: String },
    #[error("class `{class}` has no function `{function}`")]
    UnknownFunction { class: String, function: String },
}

/// Parses and resolves in one step.
pub fn load_classes(source: &str) -> Result<Vec<ResolvedClass>, PackageError> {
    resolve_inheritance(&parse_manifest(source)?)
}
