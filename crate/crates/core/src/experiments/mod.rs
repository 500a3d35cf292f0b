//! Config-driven scenarios with CSV/JSON output.
//!
//! [`run_scenario`] validates a [`ScenarioConfig`], runs the named preset on
//! a thread pool of the configured size and writes its artifacts plus a
//! [`RunManifest`] into the output directory. [`emit_report`] folds any
//! number of manifests into one summary.

pub mod config;
pub mod io;
pub mod manifest;
pub mod scenarios;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ScenarioConfig, ScenarioKind};
pub use manifest::{collect_manifests, emit_report, Check, ReportSummary, RunManifest, MANIFEST_FILE};

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "MFFLSIM_OUT";
const DEFAULT_OUTPUT_ROOT: &str = "mfflsim-out";

/// Output directory precedence: explicit flag, then the config's
/// `output_dir`, then `$MFFLSIM_OUT/<scenario>`, then
/// `mfflsim-out/<scenario>`.
pub fn resolve_output_dir(flag: Option<&Path>, cfg: &ScenarioConfig, env: Option<OsString>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let root = env.filter(|v| !v.is_empty()).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    root.join(cfg.scenario.name())
}

/// Runs one scenario and writes its artifacts and manifest into `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config {
            key: "threads".into(),
            reason: e.to_string(),
        })?;
    log::info!("running {} into {}", cfg.scenario, out_dir.display());
    let mut writer = io::ArtifactWriter::create(out_dir)?;
    let outcome = pool.install(|| scenarios::run(cfg, &mut writer))?;

    #[derive(serde::Serialize)]
    struct Summary<'a> {
        scenario: &'a str,
        metrics: &'a std::collections::BTreeMap<String, f64>,
        checks: &'a [Check],
    }
    writer.json(
        "summary.json",
        &Summary {
            scenario: cfg.scenario.name(),
            metrics: &outcome.metrics,
            checks: &outcome.checks,
        },
    )?;
    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml_string()?).map_err(|e| Error::io(&config_path, e))?;

    let mut files = writer.files().to_vec();
    files.push("config.toml".into());
    files.push(MANIFEST_FILE.into());
    let manifest = RunManifest {
        scenario: cfg.scenario.name().to_string(),
        config_hash: manifest::config_hash(cfg)?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files,
        checks: outcome.checks,
        converged: outcome.converged,
        metrics: outcome.metrics,
    };
    writer.json(MANIFEST_FILE, &manifest)?;
    for c in &manifest.checks {
        log::info!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(manifest)
}

/// A finished run of a config file.
#[derive(Debug)]
pub struct FileRun {
    pub config: ScenarioConfig,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl FileRun {
    /// Non-convergence that the config declared fatal.
    pub fn convergence_failed(&self) -> bool {
        self.config.require_convergence && self.manifest.converged == Some(false)
    }
}

/// Loads, applies overrides to, and runs the config at `path`.
pub fn run_config_file(path: &Path, seed: Option<u64>, threads: Option<usize>, out: Option<&Path>) -> Result<FileRun> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    let dir = resolve_output_dir(out, &cfg, std::env::var_os(OUTPUT_ENV));
    let manifest = run_scenario(&cfg, &dir)?;
    Ok(FileRun {
        config: cfg,
        dir,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dir_precedence() {
        let mut cfg = ScenarioConfig::new(ScenarioKind::GcDiagnostic);
        let env = Some(OsString::from("/env"));
        assert_eq!(resolve_output_dir(None, &cfg, None), PathBuf::from("mfflsim-out/gc-diagnostic"));
        assert_eq!(resolve_output_dir(None, &cfg, env.clone()), PathBuf::from("/env/gc-diagnostic"));
        cfg.output_dir = Some("/cfg".into());
        assert_eq!(resolve_output_dir(None, &cfg, env.clone()), PathBuf::from("/cfg"));
        assert_eq!(resolve_output_dir(Some(Path::new("/flag")), &cfg, env), PathBuf::from("/flag"));
    }
}
