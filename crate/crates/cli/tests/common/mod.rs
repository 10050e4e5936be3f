#![allow(dead_code)]

use std::path::{Path, PathBuf};

use longic::synth::{default_spec, GeneratorSpec};

pub fn small_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n1: 300,
        event_rate: 0.1,
        ..default_spec()
    }
}

/// Writes a small generator spec and a run config that points at it.
pub fn small_run_config(dir: &Path, seed: u64) -> PathBuf {
    std::fs::write(dir.join("gen.toml"), small_spec(seed).to_toml().unwrap()).unwrap();
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("seed = {seed}\ngenerator = \"gen.toml\"\nbudgets = [0.0, 1.0]\n")).unwrap();
    path
}
