#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use dcepk_core::phantom::PhantomConfig;
use dcepk_nn::training::{TrainConfig, TrainMode};

pub fn dcepk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcepk")).args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn summary(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not one JSON line ({e}): {}", stderr(out)))
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// 32×32 tumour-like phantom with 10 frames.
pub fn small_phantom(seed: u64) -> PhantomConfig {
    let mut c = PhantomConfig::tumor_like(seed);
    c.width = 32;
    c.height = 32;
    c.acq = c.acq.with_n_frames(10).unwrap();
    c.aif_jitter = 0.1;
    c
}

pub fn tiny_train_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        batch_size: 2,
        patch: 24,
        epochs: 2,
        steps_per_epoch: 2,
        lr: 1e-3,
        base_channels: 4,
        seed: 11,
        ..TrainConfig::default()
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Runs `simulate` for a small phantom into `dir`.
pub fn simulate_small(root: &Path, name: &str, seed: u64) -> std::path::PathBuf {
    let cfg_path = root.join(format!("{name}.json"));
    write_json(&cfg_path, &small_phantom(seed));
    let out = root.join(name);
    let o = dcepk(&["simulate", "--config", p(&cfg_path), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}
