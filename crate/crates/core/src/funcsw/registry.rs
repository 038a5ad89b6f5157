//! Algorithm registry: descriptors keyed by exact (name, version) plus a
//! loader table mapping entry identifiers to step-function factories.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use semver::Version;
use serde::{Deserialize, Serialize};

use super::{ConfigMap, FuncswError, Payload};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSchema {
    pub name: String,
    pub type_name: String,
}

impl PortSchema {
    pub fn new(name: impl Into<String>, type_name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            type_name: type_name.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmDescriptor {
    pub name: String,
    pub version: String,
    pub entry: String,
    #[serde(default)]
    pub required_inputs: Vec<PortSchema>,
    #[serde(default)]
    pub outputs: Vec<PortSchema>,
    #[serde(default)]
    pub binding_requirement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmRef {
    pub name: String,
    pub version: String,
}

impl AlgorithmRef {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
        }
    }
}

/// A node body failed; the node transitions to `Failed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeFault(pub String);

impl fmt::Display for NodeFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub struct StepContext<'a> {
    pub node_id: &'a str,
    pub round: u64,
    /// One fresh datum per input port, in port order.
    pub inputs: &'a [Payload],
    pub config: &'a ConfigMap,
}

impl StepContext<'_> {
    pub fn config_f64(&self, key: &str) -> Option<f64> {
        self.config.get(key).and_then(|v| v.as_f64())
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepOutput {
    /// One entry per output port; `None` emits nothing on that port.
    pub outputs: Vec<Option<Payload>>,
    /// Simulated execution time, checked against the watchdog.
    pub elapsed_us: u64,
}

impl StepOutput {
    pub fn emit(outputs: Vec<Option<Payload>>, elapsed_us: u64) -> Self {
        Self {
            outputs,
            elapsed_us,
        }
    }
}

pub trait NodeBody: Send {
    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput, NodeFault>;
}

impl<F> NodeBody for F
where
    F: FnMut(&StepContext<'_>) -> Result<StepOutput, NodeFault> + Send,
{
    fn step(&mut self, ctx: &StepContext<'_>) -> Result<StepOutput, NodeFault> {
        self(ctx)
    }
}

/// Builds a fresh node body from the node's initial configuration.
pub type Factory = Arc<dyn Fn(&ConfigMap) -> Box<dyn NodeBody> + Send + Sync>;

#[derive(Clone, Default)]
pub struct AlgorithmRegistry {
    loaders: BTreeMap<String, Factory>,
    algorithms: BTreeMap<(String, Version), AlgorithmDescriptor>,
}

impl fmt::Debug for AlgorithmRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlgorithmRegistry")
            .field("loaders", &self.loaders.keys().collect::<Vec<_>>())
            .field("algorithms", &self.algorithms.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn parse_version(v: &str) -> Result<Version, FuncswError> {
    Version::parse(v).map_err(|_| FuncswError::InvalidVersion(v.to_string()))
}

impl AlgorithmRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes `entry` loadable. Re-registering an entry replaces its factory.
    pub fn register_loader<F>(&mut self, entry: impl Into<String>, factory: F)
    where
        F: Fn(&ConfigMap) -> Box<dyn NodeBody> + Send + Sync + 'static,
    {
        self.loaders.insert(entry.into(), Arc::new(factory));
    }

    pub fn has_loader(&self, entry: &str) -> bool {
        self.loaders.contains_key(entry)
    }

    pub fn register_algorithm(&mut self, d: AlgorithmDescriptor) -> Result<(), FuncswError> {
        let version = parse_version(&d.version)?;
        if !self.loaders.contains_key(&d.entry) {
            return Err(FuncswError::UnknownEntry(d.entry));
        }
        let key = (d.name.clone(), version);
        if self.algorithms.contains_key(&key) {
            return Err(FuncswError::DuplicateAlgorithm {
                name: d.name,
                version: d.version,
            });
        }
        self.algorithms.insert(key, d);
        Ok(())
    }

    pub fn descriptor(
        &self,
        name: &str,
        version: &str,
    ) -> Result<&AlgorithmDescriptor, FuncswError> {
        let not_found = || FuncswError::AlgorithmNotFound {
            name: name.to_string(),
            version: version.to_string(),
        };
        let v = Version::parse(version).map_err(|_| not_found())?;
        self.algorithms
            .get(&(name.to_string(), v))
            .ok_or_else(not_found)
    }

    /// Factory for an exact (name, version) match.
    pub fn resolve(&self, name: &str, version: &str) -> Result<Factory, FuncswError> {
        let d = self.descriptor(name, version)?;
        self.loaders
            .get(&d.entry)
            .cloned()
            .ok_or_else(|| FuncswError::UnknownEntry(d.entry.clone()))
    }

    pub fn algorithms(&self) -> impl Iterator<Item = &AlgorithmDescriptor> {
        self.algorithms.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> AlgorithmRegistry {
        let mut r = AlgorithmRegistry::new();
        r.register_loader("noop", |_: &ConfigMap| -> Box<dyn NodeBody> {
            Box::new(|_: &StepContext<'_>| Ok(StepOutput::default()))
        });
        r
    }

    fn desc(version: &str) -> AlgorithmDescriptor {
        AlgorithmDescriptor {
            name: "gap_planner".into(),
            version: version.into(),
            entry: "noop".into(),
            required_inputs: vec![],
            outputs: vec![],
            binding_requirement: None,
        }
    }

    #[test]
    fn register_and_resolve() {
        let mut r = registry();
        r.register_algorithm(desc("1.0.0")).unwrap();
        assert!(r.resolve("gap_planner", "1.0.0").is_ok());
        assert!(matches!(
            r.resolve("gap_planner", "2.0.0"),
            Err(FuncswError::AlgorithmNotFound { .. })
        ));
        assert!(matches!(
            r.register_algorithm(desc("1.0.0")),
            Err(FuncswError::DuplicateAlgorithm { .. })
        ));
    }

    #[test]
    fn rejects_bad_version_and_entry() {
        let mut r = registry();
        assert!(matches!(
            r.register_algorithm(desc("1.0")),
            Err(FuncswError::InvalidVersion(_))
        ));
        let mut d = desc("1.0.0");
        d.entry = "missing".into();
        assert!(matches!(
            r.register_algorithm(d),
            Err(FuncswError::UnknownEntry(_))
        ));
    }
}
