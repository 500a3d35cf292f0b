//! Run manifests and the cross-run report.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::config::ScenarioConfig;
use super::io::ArtifactWriter;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A named pass/fail check evaluated during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    /// SHA-256 of the effective configuration, serialised canonically.
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    /// `None` when the scenario has no iterative solver.
    pub converged: Option<bool>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Hash of the canonical TOML form, so formatting and key order in the
/// source file do not matter. The output directory is excluded.
pub fn config_hash(cfg: &ScenarioConfig) -> Result<String> {
    let mut canonical = cfg.clone();
    canonical.output_dir = None;
    let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub passed: bool,
    pub checks_passed: usize,
    pub checks_failed: usize,
    pub converged: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: usize,
    pub passed: usize,
    pub failed: usize,
    pub rows: Vec<ReportRow>,
    /// Per-run metrics keyed by `scenario[#k]`.
    pub metrics: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Aggregates manifests into a summary. A run passes when all its checks do.
pub fn summarize(manifests: &[RunManifest]) -> Result<ReportSummary> {
    if manifests.is_empty() {
        return Err(Error::invalid("manifests", "need at least one"));
    }
    let rows: Vec<ReportRow> = manifests
        .iter()
        .map(|m| {
            let ok = m.checks.iter().filter(|c| c.passed).count();
            ReportRow {
                scenario: m.scenario.clone(),
                passed: m.passed(),
                checks_passed: ok,
                checks_failed: m.checks.len() - ok,
                converged: m.converged,
            }
        })
        .collect();
    let mut metrics = BTreeMap::new();
    for m in manifests {
        let mut key = m.scenario.clone();
        let mut k = 2;
        while metrics.contains_key(&key) {
            key = format!("{}#{k}", m.scenario);
            k += 1;
        }
        if !m.metrics.is_empty() {
            metrics.insert(key, m.metrics.clone());
        }
    }
    let passed = rows.iter().filter(|r| r.passed).count();
    Ok(ReportSummary {
        runs: rows.len(),
        passed,
        failed: rows.len() - passed,
        rows,
        metrics,
    })
}

pub fn render_table(summary: &ReportSummary) -> String {
    let width = summary.rows.iter().map(|r| r.scenario.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:<width$}  status  checks  converged\n", "scenario");
    for r in &summary.rows {
        let conv = match r.converged {
            Some(true) => "yes",
            Some(false) => "no",
            None => "-",
        };
        out.push_str(&format!(
            "{:<width$}  {:<6}  {:>2}/{:<3}  {}\n",
            r.scenario,
            if r.passed { "PASS" } else { "FAIL" },
            r.checks_passed,
            r.checks_passed + r.checks_failed,
            conv
        ));
    }
    out.push_str(&format!("{} run(s): {} passed, {} failed\n", summary.runs, summary.passed, summary.failed));
    out
}

/// Writes `summary.json` and `summary.txt` into `out_dir`.
pub fn emit_report(manifests: &[RunManifest], out_dir: &Path) -> Result<ReportSummary> {
    let summary = summarize(manifests)?;
    let mut writer = ArtifactWriter::create(out_dir)?;
    writer.json("summary.json", &summary)?;
    let path = out_dir.join("summary.txt");
    std::fs::write(&path, render_table(&summary)).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Every manifest below `dir`, in path order.
pub fn collect_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut paths: Vec<_> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == MANIFEST_FILE)
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths.iter().map(|p| RunManifest::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(name: &str, results: &[bool], metrics: &[(&str, f64)]) -> RunManifest {
        RunManifest {
            scenario: name.to_string(),
            config_hash: String::new(),
            tool_version: "0".into(),
            seed: 0,
            wall_clock_seconds: 0.0,
            files: vec![],
            checks: results.iter().enumerate().map(|(i, p)| Check::new(&format!("c{i}"), *p, "")).collect(),
            converged: None,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn single_pass() {
        let s = summarize(&[manifest("a", &[true], &[("x", 1.0)])]).unwrap();
        assert_eq!((s.runs, s.passed, s.failed), (1, 1, 0));
    }

    #[test]
    fn mixed_counts() {
        let ms = [manifest("a", &[true, true], &[]), manifest("b", &[true, false], &[]), manifest("a", &[false], &[])];
        let s = summarize(&ms).unwrap();
        assert_eq!((s.runs, s.passed, s.failed), (3, 1, 2));
        assert_eq!(s.rows[1].checks_failed, 1);
        assert!(render_table(&s).contains("3 run(s): 1 passed, 2 failed"));
    }

    #[test]
    fn empty_metrics_stay_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let s = emit_report(&[manifest("a", &[], &[])], dir.path()).unwrap();
        assert!(s.metrics.is_empty());
        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let back: ReportSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(summarize(&[]).is_err());
    }
}
