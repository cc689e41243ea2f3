//! Manifest types and the YAML reader/writer.
//!
//! Parsing runs in three passes so each failure maps onto one error class:
//! YAML syntax, then schema (unknown keys, wrong value types), then value
//! ranges.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PackageError;

/// Constraint keys that are parsed and kept but not enforced by any template.
pub const UNENFORCED_CONSTRAINTS: [&str; 4] = ["budget", "consistency", "jurisdiction", "encryption"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Locality {
    #[serde(alias = "local", alias = "LOCAL")]
    Local,
    #[serde(alias = "none", alias = "NONE")]
    None,
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Locality::Local => f.write_str("Local"),
            Locality::None => f.write_str("None"),
        }
    }
}

/// QoS requirements. Every field is optional; an absent field inherits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosSpec {
    /// Guaranteed invocation rate in requests per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<u64>,
    /// Target availability in percent, strictly inside (0, 100).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locality: Option<Locality>,
}

impl QosSpec {
    pub fn is_empty(&self) -> bool {
        self.throughput.is_none() && self.availability.is_none() && self.locality.is_none()
    }

    /// Field-wise overlay: values declared in `self` win, gaps are filled from `fallback`.
    pub fn or(&self, fallback: &QosSpec) -> QosSpec {
        QosSpec {
            throughput: self.throughput.or(fallback.throughput),
            availability: self.availability.or(fallback.availability),
            locality: self.locality.or(fallback.locality),
        }
    }

    /// Availability as a fraction in (0, 1).
    pub fn availability_fraction(&self) -> Option<f64> {
        self.availability.map(|a| a / 100.0)
    }

    pub(crate) fn validate(&self, owner: &str) -> Result<(), PackageError> {
        if let Some(a) = self.availability {
            if !(a > 0.0 && a < 100.0) || !a.is_finite() {
                return Err(PackageError::Range(format!(
                    "{owner}: availability must lie strictly between 0 and 100 percent, got {a}"
                )));
            }
        }
        Ok(())
    }
}

/// Deployment constraints.
///
/// `persistent` is kept as declared (`None` when absent) so that inheritance can
/// tell "not declared" from "declared true"; use [`ConstraintSpec::is_persistent`]
/// for the effective value.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConstraintSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persistent: Option<bool>,
    #[serde(rename = "runtimeReq", skip_serializing_if = "BTreeMap::is_empty")]
    pub runtime_req: BTreeMap<String, String>,
    #[serde(flatten)]
    pub unenforced: BTreeMap<String, Value>,
}

impl ConstraintSpec {
    pub fn is_persistent(&self) -> bool {
        self.persistent.unwrap_or(true)
    }

    pub fn is_empty(&self) -> bool {
        self.persistent.is_none() && self.runtime_req.is_empty() && self.unenforced.is_empty()
    }

    pub fn or(&self, fallback: &ConstraintSpec) -> ConstraintSpec {
        let mut runtime_req = fallback.runtime_req.clone();
        runtime_req.extend(self.runtime_req.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut unenforced = fallback.unenforced.clone();
        unenforced.extend(self.unenforced.iter().map(|(k, v)| (k.clone(), v.clone())));
        ConstraintSpec {
            persistent: self.persistent.or(fallback.persistent),
            runtime_req,
            unenforced,
        }
    }
}

impl<'de> Deserialize<'de> for ConstraintSpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(default)]
            persistent: Option<bool>,
            #[serde(default, rename = "runtimeReq")]
            runtime_req: BTreeMap<String, String>,
            #[serde(flatten)]
            rest: BTreeMap<String, Value>,
        }
        let raw = Raw::deserialize(de)?;
        for key in raw.rest.keys() {
            if !UNENFORCED_CONSTRAINTS.contains(&key.as_str()) {
                return Err(serde::de::Error::custom(format!(
                    "unknown constraint `{key}`, expected one of persistent, runtimeReq, {}",
                    UNENFORCED_CONSTRAINTS.join(", ")
                )));
            }
        }
        Ok(ConstraintSpec { persistent: raw.persistent, runtime_req: raw.runtime_req, unenforced: raw.rest })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyKind {
    #[serde(alias = "structured", alias = "STRUCTURED")]
    Structured,
    #[default]
    #[serde(alias = "unstructured", alias = "UNSTRUCTURED")]
    Unstructured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySpec {
    pub name: String,
    #[serde(default)]
    pub kind: KeyKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Chatty,
    DataIntensive,
    ComputeIntensive,
}

/// Service-time distribution of a simulated method body: lognormal with the given
/// mean and coefficient of variation, or fixed when `cv` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ServiceTime {
    pub mean_ms: f64,
    #[serde(default)]
    pub cv: f64,
}

/// Simulation stand-in for a container image: how long the method runs, how
/// many bytes move in and out, and which attribute it rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct WorkloadProfile {
    pub archetype: Archetype,
    pub service_time: ServiceTime,
    #[serde(default)]
    pub bytes_in: u64,
    #[serde(default)]
    pub bytes_out: u64,
    /// Number of sequential invocations one client request triggers.
    #[serde(default = "default_chain_length")]
    pub chain_length: u32,
    /// Workflow functions: the methods this one is composed of, run as a chain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workflow: Vec<String>,
}

fn default_chain_length() -> u32 {
    1
}

impl WorkloadProfile {
    /// Preset profile for an archetype. The service-time means are calibration
    /// knobs sized so one container's capacity is plausible, not measured values.
    pub fn preset(archetype: Archetype) -> Self {
        match archetype {
            Archetype::Chatty => WorkloadProfile {
                archetype,
                service_time: ServiceTime { mean_ms: 1.0, cv: 0.2 },
                bytes_in: 1024,
                bytes_out: 1024,
                chain_length: 10,
                workflow: Vec::new(),
            },
            Archetype::DataIntensive => WorkloadProfile {
                archetype,
                service_time: ServiceTime { mean_ms: 50.0, cv: 0.2 },
                bytes_in: 512 * 1024,
                bytes_out: 256 * 1024,
                chain_length: 1,
                workflow: Vec::new(),
            },
            Archetype::ComputeIntensive => WorkloadProfile {
                archetype,
                service_time: ServiceTime { mean_ms: 2000.0, cv: 0.1 },
                bytes_in: 64 * 1024,
                bytes_out: 64 * 1024,
                chain_length: 1,
                workflow: Vec::new(),
            },
        }
    }

    pub(crate) fn validate(&self, owner: &str) -> Result<(), PackageError> {
        let st = self.service_time;
        if !(st.mean_ms.is_finite() && st.mean_ms > 0.0) {
            return Err(PackageError::Range(format!("{owner}: x-sim serviceTime.meanMs must be positive")));
        }
        if !(st.cv.is_finite() && st.cv >= 0.0) {
            return Err(PackageError::Range(format!("{owner}: x-sim serviceTime.cv must be non-negative")));
        }
        if self.chain_length == 0 {
            return Err(PackageError::Range(format!("{owner}: x-sim chainLength must be at least 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDefinition {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "QosSpec::is_empty")]
    pub qos: QosSpec,
    #[serde(default, rename = "x-sim", skip_serializing_if = "Option::is_none")]
    pub workload_profile: Option<WorkloadProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDefinition {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "QosSpec::is_empty")]
    pub qos: QosSpec,
    #[serde(default, skip_serializing_if = "ConstraintSpec::is_empty")]
    pub constraint: ConstraintSpec,
    #[serde(default, rename = "keySpecs", skip_serializing_if = "Vec::is_empty")]
    pub key_specs: Vec<KeySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<FunctionDefinition>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageManifest {
    pub classes: Vec<ClassDefinition>,
}

impl PackageManifest {
    pub fn class(&self, name: &str) -> Option<&ClassDefinition> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("manifest types always serialize")
    }

    fn validate(&self) -> Result<(), PackageError> {
        let mut seen = std::collections::BTreeSet::new();
        for class in &self.classes {
            if class.name.is_empty() {
                return Err(PackageError::Schema("class name must not be empty".into()));
            }
            if !seen.insert(class.name.as_str()) {
                return Err(PackageError::Schema(format!("class `{}` defined twice", class.name)));
            }
            class.qos.validate(&class.name)?;
            for key in &class.key_specs {
                if key.name.is_empty() {
                    return Err(PackageError::Schema(format!("{}: keySpec name must not be empty", class.name)));
                }
            }
            for f in &class.functions {
                if f.name.is_empty() {
                    return Err(PackageError::Schema(format!("{}: function name must not be empty", class.name)));
                }
                let owner = format!("{}.{}", class.name, f.name);
                f.qos.validate(&owner)?;
                if let Some(p) = &f.workload_profile {
                    p.validate(&owner)?;
                }
            }
        }
        for class in &self.classes {
            if let Some(parent) = &class.parent {
                if !seen.contains(parent.as_str()) {
                    return Err(PackageError::UnknownParent { class: class.name.clone(), parent: parent.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Parses a manifest document.
pub fn parse_manifest(source: &str) -> Result<PackageManifest, PackageError> {
    let doc: serde_yaml::Value = serde_yaml::from_str(source).map_err(|e| PackageError::Syntax(e.to_string()))?;
    if let Some(classes) = doc.get("classes").and_then(|c| c.as_sequence()) {
        for class in classes {
            if class.get("parent").is_some_and(|p| p.is_sequence()) {
                return Err(PackageError::Schema("multiple inheritance is not supported: `parent` must be a single class name".into()));
            }
        }
    }
    let manifest: PackageManifest = serde_yaml::from_value(doc).map_err(|e| PackageError::Schema(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}
