use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::manifest::{ClassDefinition, ConstraintSpec, FunctionDefinition, KeyKind, KeySpec, PackageManifest, QosSpec, WorkloadProfile};
use super::PackageError;

/// The requirement record the platform enforces for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveRequirements {
    pub qos: QosSpec,
    pub constraint: ConstraintSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedFunction {
    pub name: String,
    pub image: Option<String>,
    pub workload_profile: Option<WorkloadProfile>,
    /// QoS written on the method itself, before any class-level fill-in.
    pub declared_qos: QosSpec,
    pub requirements: EffectiveRequirements,
}

/// A class with inheritance flattened: every key and method it can see, and
/// the effective requirements of each method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedClass {
    pub name: String,
    pub key_specs: Vec<KeySpec>,
    pub functions: Vec<ResolvedFunction>,
    pub qos: QosSpec,
    pub constraint: ConstraintSpec,
}

impl ResolvedClass {
    pub fn function(&self, name: &str) -> Option<&ResolvedFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn key_spec(&self, name: &str) -> Option<&KeySpec> {
        self.key_specs.iter().find(|k| k.name == name)
    }

    pub fn structured_keys(&self) -> impl Iterator<Item = &str> {
        self.key_specs.iter().filter(|k| k.kind == KeyKind::Structured).map(|k| k.name.as_str())
    }

    /// Strictest per-method availability, falling back to the class level.
    pub fn max_availability(&self) -> Option<f64> {
        self.functions
            .iter()
            .filter_map(|f| f.requirements.qos.availability)
            .chain(self.qos.availability)
            .reduce(f64::max)
    }

    /// Deployment warnings for constraints that are carried but not enforced.
    pub fn warnings(&self) -> Vec<String> {
        self.constraint
            .unenforced
            .iter()
            .map(|(k, v)| format!("class {}: constraint `{k}` = {v} is recorded but not enforced", self.name))
            .collect()
    }

    /// Flattens back to a parentless definition whose resolution is `self`.
    pub fn to_definition(&self) -> ClassDefinition {
        ClassDefinition {
            name: self.name.clone(),
            parent: None,
            qos: self.qos,
            constraint: self.constraint.clone(),
            key_specs: self.key_specs.clone(),
            functions: self
                .functions
                .iter()
                .map(|f| FunctionDefinition {
                    name: f.name.clone(),
                    image: f.image.clone(),
                    qos: f.declared_qos,
                    workload_profile: f.workload_profile.clone(),
                })
                .collect(),
        }
    }
}

/// Looks up the precomputed requirements of one method.
pub fn effective_requirements<'a>(resolved: &'a ResolvedClass, function_name: &str) -> Result<&'a EffectiveRequirements, PackageError> {
    resolved
        .function(function_name)
        .map(|f| &f.requirements)
        .ok_or_else(|| PackageError::UnknownFunction { class: resolved.name.clone(), function: function_name.to_string() })
}

/// Flattens inheritance for every class. Output is in topological order
/// (ancestors first), ties broken by manifest order.
pub fn resolve_inheritance(manifest: &PackageManifest) -> Result<Vec<ResolvedClass>, PackageError> {
    let by_name: BTreeMap<&str, &ClassDefinition> = manifest.classes.iter().map(|c| (c.name.as_str(), c)).collect();
    let order = topological_order(manifest, &by_name)?;

    let mut resolved: BTreeMap<&str, ResolvedClass> = BTreeMap::new();
    let mut out = Vec::with_capacity(order.len());
    for name in order {
        let def = by_name[name];
        check_unique(def)?;
        let parent = def.parent.as_deref().map(|p| &resolved[p]);
        let class = resolve_one(def, parent);
        resolved.insert(name, class.clone());
        out.push(class);
    }
    Ok(out)
}

fn topological_order<'a>(manifest: &'a PackageManifest, by_name: &BTreeMap<&'a str, &'a ClassDefinition>) -> Result<Vec<&'a str>, PackageError> {
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut order = Vec::with_capacity(manifest.classes.len());
    for class in &manifest.classes {
        // Walk up to the first resolved ancestor, then emit the chain root-first.
        let mut chain: Vec<&str> = Vec::new();
        let mut cursor = Some(class.name.as_str());
        while let Some(name) = cursor {
            if done.contains(name) {
                break;
            }
            if chain.contains(&name) {
                let mut cycle: Vec<String> = chain.iter().map(|s| s.to_string()).collect();
                cycle.push(name.to_string());
                return Err(PackageError::Cycle(cycle));
            }
            chain.push(name);
            let def = by_name.get(name).ok_or_else(|| PackageError::UnknownParent {
                class: chain[chain.len().saturating_sub(2)].to_string(),
                parent: name.to_string(),
            })?;
            cursor = def.parent.as_deref();
        }
        for name in chain.into_iter().rev() {
            done.insert(name);
            order.push(name);
        }
    }
    Ok(order)
}

fn check_unique(def: &ClassDefinition) -> Result<(), PackageError> {
    let mut keys = BTreeSet::new();
    for k in &def.key_specs {
        if !keys.insert(k.name.as_str()) {
            return Err(PackageError::DuplicateKey { class: def.name.clone(), name: k.name.clone() });
        }
    }
    let mut fns = BTreeSet::new();
    for f in &def.functions {
        if !fns.insert(f.name.as_str()) {
            return Err(PackageError::DuplicateKey { class: def.name.clone(), name: f.name.clone() });
        }
    }
    Ok(())
}

fn resolve_one(def: &ClassDefinition, parent: Option<&ResolvedClass>) -> ResolvedClass {
    let qos = match parent {
        Some(p) => def.qos.or(&p.qos),
        None => def.qos,
    };
    let mut constraint = match parent {
        Some(p) => def.constraint.or(&p.constraint),
        None => def.constraint.clone(),
    };
    constraint.persistent = Some(constraint.is_persistent());

    let mut key_specs: Vec<KeySpec> = parent.map(|p| p.key_specs.clone()).unwrap_or_default();
    for k in &def.key_specs {
        match key_specs.iter_mut().find(|e| e.name == k.name) {
            Some(existing) => *existing = k.clone(),
            None => key_specs.push(k.clone()),
        }
    }

    // Inherited methods are re-evaluated against this class's QoS so a child's
    // class-level declaration reaches them; the method's own fields still win.
    let requirements = |declared: &QosSpec| EffectiveRequirements { qos: declared.or(&qos), constraint: constraint.clone() };
    let mut functions: Vec<ResolvedFunction> = parent
        .map(|p| {
            p.functions
                .iter()
                .map(|f| ResolvedFunction { requirements: requirements(&f.declared_qos), ..f.clone() })
                .collect()
        })
        .unwrap_or_default();
    for f in &def.functions {
        let rf = ResolvedFunction {
            name: f.name.clone(),
            image: f.image.clone(),
            workload_profile: f.workload_profile.clone(),
            declared_qos: f.qos,
            requirements: requirements(&f.qos),
        };
        match functions.iter_mut().find(|e| e.name == f.name) {
            Some(existing) => *existing = rf,
            None => functions.push(rf),
        }
    }

    ResolvedClass { name: def.name.clone(), key_specs, functions, qos, constraint }
}
