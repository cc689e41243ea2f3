use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::package::{ConstraintSpec, QosSpec, ResolvedClass};

use super::RuntimeError;

/// Requirement kinds a class can declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Requirement {
    Throughput,
    Availability,
    Locality,
    Persistent,
    RuntimeReq,
}

/// Requirements a class declares anywhere: class level or any method.
pub fn declared_requirements(class: &ResolvedClass) -> BTreeSet<Requirement> {
    let mut out = BTreeSet::new();
    let mut add_qos = |q: &QosSpec| {
        if q.throughput.is_some() {
            out.insert(Requirement::Throughput);
        }
        if q.availability.is_some() {
            out.insert(Requirement::Availability);
        }
        if q.locality.is_some() {
            out.insert(Requirement::Locality);
        }
    };
    add_qos(&class.qos);
    for f in &class.functions {
        add_qos(&f.requirements.qos);
    }
    let c: &ConstraintSpec = &class.constraint;
    if c.persistent.is_some() {
        out.insert(Requirement::Persistent);
    }
    if !c.runtime_req.is_empty() {
        out.insert(Requirement::RuntimeReq);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRuntimeTemplate {
    pub id: String,
    /// Higher wins when several templates accept a class.
    pub priority: i32,
    pub supports: BTreeSet<Requirement>,
}

impl ClassRuntimeTemplate {
    /// Latency, throughput and availability guarantees.
    pub fn ltag() -> Self {
        ClassRuntimeTemplate {
            id: "ltag".into(),
            priority: 100,
            supports: [Requirement::Throughput, Requirement::Availability, Requirement::Locality, Requirement::Persistent, Requirement::RuntimeReq]
                .into_iter()
                .collect(),
        }
    }

    /// Plain function hosting with no guarantees.
    pub fn basic() -> Self {
        ClassRuntimeTemplate { id: "basic".into(), priority: 0, supports: [Requirement::Persistent].into_iter().collect() }
    }

    pub fn accepts(&self, class: &ResolvedClass) -> bool {
        declared_requirements(class).is_subset(&self.supports)
    }
}

pub fn default_registry() -> Vec<ClassRuntimeTemplate> {
    vec![ClassRuntimeTemplate::ltag(), ClassRuntimeTemplate::basic()]
}

/// Highest-priority template that can realize the class; ties go to the
/// earlier registry entry.
pub fn select_template<'a>(class: &ResolvedClass, registry: &'a [ClassRuntimeTemplate]) -> Result<&'a ClassRuntimeTemplate, RuntimeError> {
    let mut best: Option<&ClassRuntimeTemplate> = None;
    for t in registry.iter().filter(|t| t.accepts(class)) {
        if best.is_none_or(|b| t.priority > b.priority) {
            best = Some(t);
        }
    }
    best.ok_or_else(|| RuntimeError::NoTemplate(class.name.clone()))
}
