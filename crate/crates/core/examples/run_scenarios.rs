//! Runs preset scenarios programmatically and folds their manifests into a
//! report, as `mfflsim run` and `mfflsim report` do.
//!
//! `cargo run --release --example run_scenarios -- [output dir]`

use std::path::PathBuf;

use mfflsim::experiments::{emit_report, manifest::render_table, run_scenario, ScenarioConfig, ScenarioKind};

fn main() -> mfflsim::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mfflsim-example"));
    let mut manifests = Vec::new();
    for kind in [ScenarioKind::FedsgdEquivalence, ScenarioKind::GcDiagnostic, ScenarioKind::PicardEquilibrium] {
        let mut cfg = ScenarioConfig::new(kind);
        cfg.seed = 42;
        let manifest = run_scenario(&cfg, &root.join(kind.name()))?;
        println!("{kind}: {} files, config hash {}", manifest.files.len(), &manifest.config_hash[..12]);
        manifests.push(manifest);
    }
    print!("{}", render_table(&emit_report(&manifests, &root)?));
    Ok(())
}
