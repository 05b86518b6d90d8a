//! Named registries of interchangeable strategies.
//!
//! Local matchers, robust estimators and epipolar error metrics are looked up by name at
//! runtime so a configuration file (or the command line) can swap them.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{EpipolarMetric, Ransac, RobustEstimator, Sampson, SymmetricEpipolar};
use crate::matching::{DirectIndexMatcher, ExhaustiveMatcher, LocalMatcher};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown {kind} {name:?} (available: {})", available.join(", "))]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: Vec<String>,
}

type Factory<T> = Arc<dyn Fn() -> Arc<T> + Send + Sync>;

struct Family<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Family<T> {
    fn new(kind: &'static str) -> Self {
        Family {
            kind,
            entries: BTreeMap::new(),
        }
    }

    fn register(&mut self, name: &str, factory: Factory<T>) {
        self.entries.insert(name.to_string(), factory);
    }

    fn get(&self, name: &str) -> Result<Arc<T>, UnknownStrategy> {
        self.entries
            .get(name)
            .map(|f| f())
            .ok_or_else(|| UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names(),
            })
    }

    fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

pub struct StrategyRegistry {
    matchers: Family<dyn LocalMatcher>,
    estimators: Family<dyn RobustEstimator>,
    metrics: Family<dyn EpipolarMetric>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry {
            matchers: Family::new("local matcher"),
            estimators: Family::new("robust estimator"),
            metrics: Family::new("epipolar metric"),
        }
    }

    /// Registry with every strategy shipped in this crate.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register_matcher("exhaustive", || Arc::new(ExhaustiveMatcher));
        r.register_matcher("direct-index", || Arc::new(DirectIndexMatcher));
        r.register_estimator("ransac", || Arc::new(Ransac));
        r.register_metric("symmetric", || Arc::new(SymmetricEpipolar));
        r.register_metric("sampson", || Arc::new(Sampson));
        r
    }

    pub fn register_matcher<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Arc<dyn LocalMatcher> + Send + Sync + 'static,
    {
        self.matchers.register(name, Arc::new(factory));
    }

    pub fn register_estimator<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Arc<dyn RobustEstimator> + Send + Sync + 'static,
    {
        self.estimators.register(name, Arc::new(factory));
    }

    pub fn register_metric<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Arc<dyn EpipolarMetric> + Send + Sync + 'static,
    {
        self.metrics.register(name, Arc::new(factory));
    }

    pub fn matcher(&self, name: &str) -> Result<Arc<dyn LocalMatcher>, UnknownStrategy> {
        self.matchers.get(name)
    }

    pub fn estimator(&self, name: &str) -> Result<Arc<dyn RobustEstimator>, UnknownStrategy> {
        self.estimators.get(name)
    }

    pub fn metric(&self, name: &str) -> Result<Arc<dyn EpipolarMetric>, UnknownStrategy> {
        self.metrics.get(name)
    }

    pub fn matcher_names(&self) -> Vec<String> {
        self.matchers.names()
    }

    pub fn estimator_names(&self) -> Vec<String> {
        self.estimators.names()
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.metrics.names()
    }

    pub fn resolve(&self, names: &StrategyNames) -> Result<Strategies, UnknownStrategy> {
        Ok(Strategies {
            matcher: self.matcher(&names.matcher)?,
            estimator: self.estimator(&names.estimator)?,
            metric: self.metric(&names.metric)?,
        })
    }
}

/// Strategy selection as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyNames {
    pub matcher: String,
    pub estimator: String,
    pub metric: String,
}

impl Default for StrategyNames {
    fn default() -> Self {
        StrategyNames {
            matcher: "direct-index".into(),
            estimator: "ransac".into(),
            metric: "symmetric".into(),
        }
    }
}

/// Resolved strategy instances used by a peer.
#[derive(Clone)]
pub struct Strategies {
    pub matcher: Arc<dyn LocalMatcher>,
    pub estimator: Arc<dyn RobustEstimator>,
    pub metric: Arc<dyn EpipolarMetric>,
}

impl Default for Strategies {
    fn default() -> Self {
        StrategyRegistry::builtin()
            .resolve(&StrategyNames::default())
            .expect("default strategies are registered")
    }
}

impl std::fmt::Debug for Strategies {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Strategies")
            .field("matcher", &self.matcher.name())
            .field("estimator", &self.estimator.name())
            .field("metric", &self.metric.name())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve_by_name() {
        let r = StrategyRegistry::builtin();
        assert_eq!(r.matcher("exhaustive").unwrap().name(), "exhaustive");
        assert_eq!(r.matcher("direct-index").unwrap().name(), "direct-index");
        assert_eq!(r.estimator("ransac").unwrap().name(), "ransac");
        assert_eq!(r.metric("sampson").unwrap().name(), "sampson");
        let s = Strategies::default();
        assert_eq!(s.matcher.name(), "direct-index");
    }

    #[test]
    fn unknown_name_lists_alternatives() {
        let Err(err) = StrategyRegistry::builtin().estimator("magsac") else {
            panic!("magsac should not be registered");
        };
        assert_eq!(err.kind, "robust estimator");
        assert_eq!(err.available, vec!["ransac".to_string()]);
        assert!(err.to_string().contains("magsac"));
    }

    #[test]
    fn custom_registration() {
        let mut r = StrategyRegistry::empty();
        assert!(r.matcher("exhaustive").is_err());
        r.register_matcher("brute", || Arc::new(ExhaustiveMatcher));
        assert_eq!(r.matcher_names(), vec!["brute".to_string()]);
    }
}
