//! Name → constructor table for synchronization paradigms.
//!
//! The built-in paradigms are registered under `bsp`, `asp`, `ssp` and
//! `dssp`. Callers (tests, fault injection) may register additional
//! policies on their own registry instance.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use crate::config::{ExperimentConfig, Paradigm};

use super::{Asp, Bsp, Dssp, Ssp, SyncPolicy};

pub type PolicyFactory = fn(&ExperimentConfig) -> Box<dyn SyncPolicy>;

#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<&'static str, PolicyFactory>,
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// Registry holding the four built-in paradigms.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("bsp", |c| Box::new(Bsp::new(c.worker_count)));
        r.register("asp", |c| Box::new(Asp::new(c.worker_count)));
        r.register("ssp", |c| Box::new(Ssp::new(c.worker_count, c.staleness.s_lower)));
        r.register("dssp", |c| Box::new(Dssp::new(c.worker_count, c.staleness)));
        r
    }

    /// Adds or replaces a factory.
    pub fn register(&mut self, name: &'static str, factory: PolicyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn create(&self, name: &str, config: &ExperimentConfig) -> Option<Box<dyn SyncPolicy>> {
        self.factories.get(name).map(|f| f(config))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }
}

static BUILTIN: LazyLock<PolicyRegistry> = LazyLock::new(PolicyRegistry::builtin);

/// Builds the policy selected by `config.paradigm`.
pub fn build_policy(config: &ExperimentConfig) -> Box<dyn SyncPolicy> {
    let name = config.paradigm.name();
    BUILTIN
        .create(name, config)
        .unwrap_or_else(|| panic!("built-in paradigm '{name}' missing from registry"))
}

/// Every paradigm enum value has a built-in registration.
pub fn builtin_names() -> Vec<&'static str> {
    Paradigm::ALL.iter().map(|p| p.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{StalenessRange, WorkerId};
    use crate::policy::{IterationClockTable, PolicyError, SyncDecision};

    #[test]
    fn builtin_names_resolve() {
        let reg = PolicyRegistry::builtin();
        for name in builtin_names() {
            let cfg = ExperimentConfig { paradigm: name.parse().unwrap(), ..Default::default() };
            let policy = reg.create(name, &cfg).unwrap();
            assert_eq!(policy.name(), name);
        }
        assert!(reg.create("gossip", &ExperimentConfig::default()).is_none());
    }

    #[test]
    fn build_policy_uses_config_staleness() {
        let cfg = ExperimentConfig {
            paradigm: Paradigm::Ssp,
            worker_count: 2,
            staleness: StalenessRange { s_lower: 0, r_max: 0 },
            ..Default::default()
        };
        let mut p = build_policy(&cfg);
        assert!(!p.on_push(WorkerId(0), 0.0).unwrap().is_grant());
    }

    struct Stub(IterationClockTable);

    impl SyncPolicy for Stub {
        fn name(&self) -> &'static str {
            "stub"
        }
        fn on_push(&mut self, _p: WorkerId, _now: f64) -> Result<SyncDecision, PolicyError> {
            unimplemented!()
        }
        fn retire(&mut self, _p: WorkerId) -> Vec<WorkerId> {
            Vec::new()
        }
        fn clocks(&self) -> &IterationClockTable {
            &self.0
        }
        fn is_deferred(&self, _p: WorkerId) -> bool {
            false
        }
        fn deferred(&self) -> Vec<WorkerId> {
            Vec::new()
        }
    }

    #[test]
    fn custom_registration() {
        let mut reg = PolicyRegistry::builtin();
        reg.register("stub", |c| Box::new(Stub(IterationClockTable::new(c.worker_count))));
        assert!(reg.contains("stub"));
        assert_eq!(reg.names().count(), 5);
        assert_eq!(reg.create("stub", &ExperimentConfig::default()).unwrap().name(), "stub");
    }
}
