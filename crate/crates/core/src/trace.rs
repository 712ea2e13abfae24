//! Per-iteration records of a run, kept alongside the configuration that produced them.

use std::time::Duration;

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub metrics: Vec<(String, f64)>,
}

impl TraceRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

/// A run's identity, configuration echo and metric history.
///
/// Wall time is informational only and is ignored by `==`, so two runs with
/// the same configuration compare equal.
#[derive(Debug, Clone, Serialize)]
pub struct RunTrace {
    pub run_id: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for RunTrace {
    fn eq(&self, other: &Self) -> bool {
        self.run_id == other.run_id
            && self.seed == other.seed
            && self.config == other.config
            && self.records == other.records
    }
}

impl RunTrace {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        RunTrace {
            run_id: run_id.into(),
            seed,
            config: Vec::new(),
            records: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub fn echo(&mut self, key: impl Into<String>, value: impl ToString) {
        self.config.push((key.into(), value.to_string()));
    }

    /// Appends a record. Iteration indices must strictly increase.
    pub fn push(&mut self, iteration: usize, metrics: Vec<(String, f64)>) -> Result<()> {
        if let Some(last) = self.records.last() {
            if iteration <= last.iteration {
                return Err(Error::invalid(format!(
                    "iteration {iteration} does not follow {}",
                    last.iteration
                )));
            }
        }
        self.records.push(TraceRecord { iteration, metrics });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Metric names in the order of the first record.
    pub fn metric_names(&self) -> Vec<&str> {
        self.records
            .first()
            .map(|r| r.metrics.iter().map(|(k, _)| k.as_str()).collect())
            .unwrap_or_default()
    }

    /// One metric across all records; records lacking it are skipped.
    pub fn column(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.metric(name)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: f64) -> Vec<(String, f64)> {
        vec![("loss".into(), v), ("kl".into(), 2.0 * v)]
    }

    #[test]
    fn rejects_non_increasing_iterations() {
        let mut t = RunTrace::new("r", 1);
        t.push(1, m(1.0)).unwrap();
        t.push(3, m(0.5)).unwrap();
        assert!(t.push(3, m(0.1)).is_err());
        assert!(t.push(2, m(0.1)).is_err());
        assert_eq!(t.column("kl"), vec![2.0, 1.0]);
        assert_eq!(t.metric_names(), vec!["loss", "kl"]);
    }

    #[test]
    fn equality_ignores_wall_time() {
        let mut a = RunTrace::new("r", 7);
        a.echo("epochs", 3);
        a.push(1, m(1.0)).unwrap();
        let mut b = a.clone();
        b.wall_time = Duration::from_secs(5);
        assert_eq!(a, b);
        b.seed = 8;
        assert_ne!(a, b);
    }
}
