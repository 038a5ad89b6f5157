//! Python bindings. Structured values cross the boundary as plain Python
//! objects (dicts, lists, numbers) by way of JSON.

use std::path::PathBuf;

use dfp_core::app_acc::{self, AccApp, AccConfig, AccError, AccSection, Scenario};
use dfp_core::envmodel::{EnvRecord, EnvStore as CoreStore, OddQuery, RecordClass};
use dfp_core::middleware::arena::DEFAULT_SLOT_SIZE;
use dfp_core::middleware::bench::run_bench;
use dfp_core::modemgr::{Coordinator as CoreCoordinator, FsmDefinition, RecordingHook};
use dfp_core::platform::{Runtime, SystemConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(
    dfp,
    DfpError,
    PyException,
    "Base class of errors raised by dfp."
);
create_exception!(
    dfp,
    ConfigError,
    DfpError,
    "The system configuration is invalid."
);
create_exception!(
    dfp,
    EnvError,
    DfpError,
    "Environment-model operation failed."
);
create_exception!(dfp, ModeError, DfpError, "Mode-manager operation failed.");
create_exception!(
    dfp,
    CollisionError,
    DfpError,
    "The ACC run ended in a collision."
);

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| DfpError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn acc_config(config: Option<&Bound<'_, PyAny>>) -> PyResult<AccConfig> {
    let cfg: AccConfig = config.map(from_py).transpose()?.unwrap_or_default();
    cfg.validate()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(cfg)
}

fn env_err(e: dfp_core::envmodel::EnvError) -> PyErr {
    EnvError::new_err(e.to_string())
}

/// Desired following distance at `ego_speed` (m/s).
#[pyfunction]
#[pyo3(signature = (ego_speed, config=None))]
fn desired_gap(ego_speed: f64, config: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
    Ok(app_acc::desired_gap(&acc_config(config)?, ego_speed))
}

/// Saturated acceleration command for the given gap and speeds.
#[pyfunction]
#[pyo3(signature = (gap, v_ego, v_lead, config=None))]
fn acc_command(
    gap: f64,
    v_ego: f64,
    v_lead: f64,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<f64> {
    Ok(app_acc::acc_command(
        &acc_config(config)?,
        gap,
        v_ego,
        v_lead,
    ))
}

/// The lead-braking scenario (25 → 15 m/s at t = 10 s) as a dict.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn lead_brake_step<'py>(
    py: Python<'py>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &Scenario::lead_brake_step(&acc_config(config)?))
}

/// Runs a scenario through the full stack and returns the trajectory as a
/// list of dicts. Raises `CollisionError` if the gap closes.
#[pyfunction]
#[pyo3(signature = (scenario=None, config=None))]
fn simulate<'py>(
    py: Python<'py>,
    scenario: Option<&Bound<'py, PyAny>>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = acc_config(config)?;
    let sc: Scenario = match scenario {
        Some(s) => from_py(s)?,
        None => Scenario::lead_brake_step(&cfg),
    };
    match py.detach(|| app_acc::simulate(&sc, &cfg)) {
        Ok(tr) => to_py(py, &tr.points),
        Err(AccError::Collision { t, gap, .. }) => Err(CollisionError::new_err(format!(
            "collision at t = {t:.2} s (gap {gap:.3} m)"
        ))),
        Err(e @ (AccError::InvalidScenario(_) | AccError::InvalidConfig(_))) => {
            Err(PyValueError::new_err(e.to_string()))
        }
        Err(e) => Err(DfpError::new_err(e.to_string())),
    }
}

/// Loads, validates and runs a system config; returns the metrics report.
/// Runtime faults are reported in the report's `fault` field.
#[pyfunction]
#[pyo3(signature = (path, seed=None, duration=None))]
fn run_config<'py>(
    py: Python<'py>,
    path: PathBuf,
    seed: Option<u64>,
    duration: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| -> Result<_, String> {
        let cfg = SystemConfig::load(&path).map_err(|e| e.to_string())?;
        let section = AccSection::from_config(&cfg).map_err(|e| e.to_string())?;
        let mut rt = Runtime::new(cfg, seed, &[&AccApp]).map_err(|e| e.to_string())?;
        let (acc, fault) = match section {
            Some(sec) => match app_acc::run(&mut rt, duration) {
                Ok(tr) => (Some(tr.summary(&sec.config, None)), None),
                Err(AccError::Collision { t, trajectory, .. }) => (
                    Some(trajectory.summary(&sec.config, Some(t))),
                    Some(format!("collision at t = {t:.2} s")),
                ),
                Err(e) => (None, Some(e.to_string())),
            },
            None => (
                None,
                rt.run_for(duration.unwrap_or(10.0))
                    .err()
                    .map(|e| e.to_string()),
            ),
        };
        let acc = acc.map(|s| serde_json::to_value(s).expect("summary serializes"));
        Ok(rt.report(acc, fault))
    });
    to_py(py, &report.map_err(ConfigError::new_err)?)
}

/// Zero-copy versus copying latency for each payload size.
#[pyfunction(name = "bench")]
#[pyo3(signature = (sizes, samples=1000))]
fn latency_bench<'py>(
    py: Python<'py>,
    sizes: Vec<usize>,
    samples: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| run_bench(&sizes, samples, DEFAULT_SLOT_SIZE))
        .map_err(|e| DfpError::new_err(e.to_string()))?;
    to_py(py, &report)
}

/// In-memory environment store, optionally backed by a JSON-lines log.
#[pyclass(module = "dfp")]
struct EnvStore {
    inner: CoreStore,
}

#[pymethods]
impl EnvStore {
    /// Opens (creating if needed) the log at `path`, or an in-memory store.
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => CoreStore::open(p).map_err(env_err)?,
            None => CoreStore::new(),
        };
        Ok(Self { inner })
    }

    /// Loads an existing log.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreStore::load(path).map_err(env_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Inserts a record dict with a caller-chosen `record_id`.
    fn create(&self, record: &Bound<'_, PyAny>) -> PyResult<u64> {
        self.inner.create(from_py(record)?).map_err(env_err)
    }

    /// Inserts a record dict, assigning the next free id.
    fn insert(&self, record: &Bound<'_, PyAny>) -> PyResult<u64> {
        let mut value: serde_json::Value = from_py(record)?;
        if let Some(obj) = value.as_object_mut() {
            obj.entry("record_id").or_insert(0.into());
        }
        let rec: EnvRecord =
            serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.insert(rec).map_err(env_err)
    }

    fn read<'py>(&self, py: Python<'py>, record_id: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.read(record_id).map_err(env_err)?)
    }

    /// Applies a partial update (same keys as a record, all optional).
    fn update<'py>(
        &self,
        py: Python<'py>,
        record_id: u64,
        patch: &Bound<'py, PyAny>,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(
            py,
            &self
                .inner
                .update(record_id, from_py(patch)?)
                .map_err(env_err)?,
        )
    }

    fn delete<'py>(&self, py: Python<'py>, record_id: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.delete(record_id).map_err(env_err)?)
    }

    /// Fuzzy token query; newest records first.
    #[pyo3(signature = (tokens, record_class=None, time_range=None))]
    fn query<'py>(
        &self,
        py: Python<'py>,
        tokens: Vec<String>,
        record_class: Option<&Bound<'py, PyAny>>,
        time_range: Option<(u64, u64)>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let class_filter: Option<RecordClass> = record_class.map(from_py).transpose()?;
        let q = OddQuery {
            tokens,
            class_filter,
            time_range,
        };
        to_py(py, &self.inner.query(&q).map_err(env_err)?)
    }

    fn save_odd(&self, name: &str, tokens: Vec<String>) -> PyResult<()> {
        self.inner
            .save_odd(name, OddQuery::tokens(&tokens))
            .map_err(env_err)
    }

    fn run_odd<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.run_odd(name).map_err(env_err)?)
    }
}

/// Coordinates a set of FSMs; group actions are recorded, not executed.
#[pyclass(module = "dfp")]
struct Coordinator {
    inner: CoreCoordinator,
    hook: RecordingHook,
}

#[pymethods]
impl Coordinator {
    /// `fsms` is a list of FSM definition dicts; `groups` names the groups
    /// that actions may start or stop.
    #[new]
    #[pyo3(signature = (fsms, groups=Vec::new()))]
    fn new(fsms: &Bound<'_, PyAny>, groups: Vec<String>) -> PyResult<Self> {
        let defs: Vec<FsmDefinition> = from_py(fsms)?;
        let hook = RecordingHook::new(&groups);
        let inner = CoreCoordinator::with_hook(Box::new(hook.clone()));
        inner
            .load(defs)
            .map_err(|e| ModeError::new_err(e.to_string()))?;
        Ok(Self { inner, hook })
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &*self.inner.snapshot())
    }

    /// Dispatches one event and returns the resulting mode.
    fn dispatch<'py>(
        &self,
        py: Python<'py>,
        fsm: &str,
        event: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let out = self
            .inner
            .dispatch(fsm, event)
            .map_err(|e| ModeError::new_err(e.to_string()))?;
        to_py(py, &out.mode)
    }

    /// Group actions handed to the pipeline so far.
    fn group_actions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &*self.hook.log.lock().unwrap())
    }

    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.trace())
    }
}

#[pymodule]
fn dfp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("DfpError", py.get_type::<DfpError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("EnvError", py.get_type::<EnvError>())?;
    m.add("ModeError", py.get_type::<ModeError>())?;
    m.add("CollisionError", py.get_type::<CollisionError>())?;
    m.add_class::<EnvStore>()?;
    m.add_class::<Coordinator>()?;
    m.add_function(wrap_pyfunction!(desired_gap, m)?)?;
    m.add_function(wrap_pyfunction!(acc_command, m)?)?;
    m.add_function(wrap_pyfunction!(lead_brake_step, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(latency_bench, m)?)?;
    Ok(())
}
