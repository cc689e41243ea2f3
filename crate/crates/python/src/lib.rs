use std::collections::BTreeMap;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;
use serde_json::Value;

use oaas_core::enforcement::{self, PolicyKind};
use oaas_core::harness::{self, HarnessError, Scenario};
use oaas_core::package;
use oaas_core::runtime::{self, DeployOptions, InvocationRequest, PlatformConfig, RuntimeError};
use oaas_core::store::ObjectId;

fn runtime_err(e: RuntimeError) -> PyErr {
    match e {
        RuntimeError::Sim(_) | RuntimeError::Store(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Runtime(r) => runtime_err(r),
        HarnessError::Audit(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py(obj: Option<&Bound<'_, PyAny>>) -> PyResult<Value> {
    let Some(obj) = obj else { return Ok(Value::Null) };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn policy(name: &str) -> PyResult<PolicyKind> {
    name.parse().map_err(PyValueError::new_err)
}

/// A simulated cluster with deployed classes and their objects.
#[pyclass(unsendable, name = "Platform")]
struct Platform {
    inner: runtime::Platform,
}

#[pymethods]
impl Platform {
    /// `config` takes the same keys as the `platform` section of a scenario file.
    #[new]
    #[pyo3(signature = (seed=0, config=None, trace=false))]
    fn new(seed: u64, config: Option<&Bound<'_, PyAny>>, trace: bool) -> PyResult<Self> {
        let mut cfg: PlatformConfig = match from_py(config)? {
            Value::Null => PlatformConfig::default(),
            v => serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?,
        };
        cfg.seed = seed;
        cfg.trace |= trace;
        Ok(Platform { inner: runtime::Platform::new(cfg).map_err(runtime_err)? })
    }

    #[getter]
    fn now(&self) -> f64 {
        self.inner.now().as_secs_f64()
    }

    #[pyo3(signature = (manifest, policy="oprc", pods=1, concurrency=None))]
    fn deploy<'py>(&mut self, py: Python<'py>, manifest: &str, policy: &str, pods: u32, concurrency: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
        let mut opts = DeployOptions::policy(self::policy(policy)?);
        opts.pods = pods;
        if let Some(c) = concurrency {
            opts.concurrency = c;
        }
        let infos = self.inner.deploy_manifest(manifest, opts).map_err(runtime_err)?;
        to_py(py, &infos)
    }

    #[pyo3(signature = (class_name, attributes=None))]
    fn create_object(&mut self, class_name: &str, attributes: Option<&Bound<'_, PyAny>>) -> PyResult<u64> {
        let attrs = from_py(attributes)?;
        Ok(self.inner.create_object(class_name, attrs, BTreeMap::new()).map_err(runtime_err)?.0)
    }

    fn object<'py>(&self, py: Python<'py>, class_name: &str, object_id: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.object(class_name, ObjectId(object_id)).map_err(runtime_err)?)
    }

    fn object_ids(&self, class_name: &str) -> PyResult<Vec<u64>> {
        Ok(self.inner.object_ids(class_name).map_err(runtime_err)?.into_iter().map(|o| o.0).collect())
    }

    /// Runs one invocation to completion and returns its outcome.
    #[pyo3(signature = (class_name, object_id, function, args=None))]
    fn invoke<'py>(&mut self, py: Python<'py>, class_name: &str, object_id: u64, function: &str, args: Option<&Bound<'_, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let mut req = InvocationRequest::new(class_name, ObjectId(object_id), function);
        req.args = from_py(args)?;
        let out = self.inner.invoke(&req).map_err(runtime_err)?;
        to_py(py, &out)
    }

    fn invoke_chain<'py>(&mut self, py: Python<'py>, class_name: &str, object_id: u64, functions: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        let names: Vec<&str> = functions.iter().map(String::as_str).collect();
        let outs = self.inner.invoke_chain(class_name, ObjectId(object_id), &names).map_err(runtime_err)?;
        to_py(py, &outs)
    }

    fn run_for(&mut self, seconds: f64) -> PyResult<()> {
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(PyValueError::new_err("seconds must be a non-negative number"));
        }
        self.inner.run_for(Duration::from_secs_f64(seconds));
        Ok(())
    }

    fn replicas(&self, class_name: &str) -> PyResult<u32> {
        self.inner.replicas(class_name).map_err(runtime_err)
    }

    fn warm_containers(&self, class_name: &str) -> PyResult<u32> {
        self.inner.warm_containers(class_name).map_err(runtime_err)
    }

    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.counters())
    }

    fn audit(&self) -> PyResult<()> {
        self.inner.audit().map_err(PyRuntimeError::new_err)
    }

    fn take_trace(&mut self) -> Vec<String> {
        self.inner.take_trace()
    }
}

/// Resolves a class package and returns each class with effective requirements.
#[pyfunction]
fn load_classes<'py>(py: Python<'py>, manifest: &str) -> PyResult<Bound<'py, PyAny>> {
    let classes = package::load_classes(manifest).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &classes)
}

/// Replicas needed for availability `a` with per-replica stability `p` (both fractions).
#[pyfunction]
fn required_replicas(a: f64, p: f64) -> PyResult<u32> {
    enforcement::required_replicas(a, p).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    harness::PRESETS.to_vec()
}

fn results<'py>(py: Python<'py>, scenarios: Vec<Scenario>, policy: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let policy = policy.map(self::policy).transpose()?;
    let mut out = Vec::new();
    for mut s in scenarios {
        if let Some(p) = policy {
            s = s.with_policy(p);
        }
        out.push(harness::run_experiment(&s, false).map_err(harness_err)?);
    }
    to_py(py, &out)
}

/// Runs a built-in preset and returns one result per scenario it contains.
#[pyfunction]
#[pyo3(signature = (name, seed=1, policy=None))]
fn run_preset<'py>(py: Python<'py>, name: &str, seed: u64, policy: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    results(py, harness::preset(name, seed).map_err(harness_err)?, policy)
}

/// Runs a scenario given as YAML text.
#[pyfunction]
#[pyo3(signature = (scenario_yaml, policy=None))]
fn run_scenario<'py>(py: Python<'py>, scenario_yaml: &str, policy: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let s = Scenario::from_yaml(scenario_yaml).map_err(harness_err)?;
    results(py, vec![s], policy)
}

#[pymodule]
fn oaas_mini(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Platform>()?;
    m.add_function(wrap_pyfunction!(load_classes, m)?)?;
    m.add_function(wrap_pyfunction!(required_replicas, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
