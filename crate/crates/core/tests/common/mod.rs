#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mfflsim::experiments::{ScenarioConfig, ScenarioKind};

pub fn preset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn preset(kind: ScenarioKind) -> ScenarioConfig {
    ScenarioConfig::load(&preset_dir().join(format!("{}.toml", kind.name()))).unwrap()
}

/// Desk-scale variant of every scenario for quick end-to-end runs.
pub fn small_config(kind: ScenarioKind) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(kind);
    cfg.seed = 99;
    cfg.fed.rounds = 15;
    cfg.fed.client_fraction = 0.5;
    cfg.clients.count = 8;
    cfg.sde.steps = 200;
    cfg.sde.t_end = 2.0;
    cfg.picard.paths = 200;
    cfg.picard.steps = 50;
    cfg.picard.tol = 1e-2;
    cfg.picard.max_iters = 8;
    cfg.grid.dx = 0.1;
    cfg.grid.output_slices = 11;
    cfg.controls.lo = -4.0;
    cfg.controls.hi = 4.0;
    cfg.controls.count = 81;
    cfg.nash.paths = 200;
    cfg.nash.steps = 50;
    cfg.nash.perturbations = 3;
    cfg.gc.reference_size = 2000;
    cfg.gc.p_values = vec![10, 100];
    cfg.gc.replicates = 5;
    cfg
}

/// Contents of every CSV file in `dir`, keyed by file name.
pub fn csv_payloads(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    out
}
