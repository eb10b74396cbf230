use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{HarnessError, OverloadStats, SummaryStats};

/// What is needed to rerun an experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub crate_version: String,
    /// Configuration as the run saw it.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Self {
        Manifest {
            command: command.to_string(),
            seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        }
    }

    fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

const PROXY_NOTE: &str = "note: the limit results carry no convergence rate; finite-n thresholds are desk-scale proxies.";

pub fn summary_text(summary: &SummaryStats) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "policy {}  window [{}, {}]  replications {}  seed {}",
        summary.policy, summary.epsilon, summary.horizon, summary.replications, summary.seed
    );
    let _ = writeln!(s, "{:>6} {:>8} {:>19} {:>9} {:>9} {:>9} {:>10} {:>10}", "n", "p_hat", "95% CI", "max_q", "max_xhat", "fallback", "full_rate", "residual");
    for row in &summary.per_n {
        let residual = row.representation_residual.map_or("-".to_string(), |r| format!("{r:.2e}"));
        let _ = writeln!(
            s,
            "{:>6} {:>8.4} [{:>7.4}, {:>7.4}] {:>9} {:>9.3} {:>9} {:>10.2e} {:>10}",
            row.n, row.p_hat, row.ci.0, row.ci.1, row.max_queue, row.max_xhat, row.fallbacks, row.full_station_rate, residual
        );
        if let Some((k, p, (lo, hi))) = row.from_zero {
            let _ = writeln!(s, "{:>6} from t = 0: {k} successes, p_hat {p:.4} [{lo:.4}, {hi:.4}]", "");
        }
    }
    let _ = writeln!(s, "{PROXY_NOTE}");
    s
}

/// Writes one CSV of replication rows per `n`, `summary.txt` and
/// `manifest.json`; returns the CSV paths.
pub fn write_summary(dir: &Path, summary: &SummaryStats, manifest: &Manifest) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for row in &summary.per_n {
        let path = dir.join(format!("{}_n{}.csv", summary.policy, row.n));
        let mut w = csv::Writer::from_path(&path)?;
        for rep in &row.replicates {
            w.serialize(rep)?;
        }
        w.flush()?;
        paths.push(path);
    }
    fs::write(dir.join("summary.txt"), summary_text(summary))?;
    manifest.write(dir)?;
    Ok(paths)
}

pub fn overload_text(stats: &OverloadStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "n {}", stats.n);
    let _ = writeln!(s, "{:>8} {:>12} {:>12} {:>12}", "t", "P(eY > 0)", "median eY/n", "min eY/n");
    for k in 0..stats.times.len() {
        let _ = writeln!(
            s,
            "{:>8} {:>12.4} {:>12.5} {:>12.5}",
            stats.times[k], stats.positive_fraction[k], stats.medians[k], stats.lower_envelope[k]
        );
    }
    let _ = writeln!(s, "lower envelope fit: {:.5} + {:.5} t", stats.envelope_intercept, stats.envelope_slope);
    let _ = writeln!(s, "replications with positive slope: {:.4}", stats.positive_slope_fraction);
    s
}

/// Writes `overload.csv` (one row per replication and time), `summary.txt`
/// and `manifest.json`.
pub fn write_overload(dir: &Path, stats: &OverloadStats, manifest: &Manifest) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join("overload.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["replication", "t", "eY_over_n"])?;
    for (k, t) in stats.times.iter().enumerate() {
        for (r, v) in stats.samples[k].iter().enumerate() {
            w.write_record([r.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    fs::write(dir.join("summary.txt"), overload_text(stats))?;
    manifest.write(dir)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{NSummary, ReplicationResult};

    fn summary() -> SummaryStats {
        let rep = ReplicationResult {
            replication: 0,
            null_window: true,
            null_from_zero: false,
            max_queue: 3,
            max_xhat: 1.5,
            fallbacks: 0,
            full_station_events: 0,
            events: 10,
            representation_residual: None,
        };
        SummaryStats {
            policy: "preemptive".into(),
            epsilon: 0.5,
            horizon: 5.0,
            replications: 1,
            seed: 7,
            per_n: vec![NSummary {
                n: 50,
                successes: 1,
                p_hat: 1.0,
                ci: (0.2, 1.0),
                from_zero: None,
                max_queue: 3,
                max_xhat: 1.5,
                fallbacks: 0,
                full_station_rate: 0.0,
                full_station_fraction: 0.0,
                representation_residual: None,
                replicates: vec![rep],
            }],
        }
    }

    #[test]
    fn writes_csv_summary_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = summary();
        let paths = write_summary(dir.path(), &s, &Manifest::new("sweep", 7, &s.seed)).unwrap();
        assert_eq!(paths.len(), 1);
        let csv = fs::read_to_string(&paths[0]).unwrap();
        assert!(csv.starts_with("replication,null_window"));
        assert_eq!(csv.lines().count(), 2);
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 7);
        assert!(fs::read_to_string(dir.path().join("summary.txt")).unwrap().contains("proxies"));
    }
}
