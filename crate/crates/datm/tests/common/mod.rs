#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TOY: &str = r#"
[dataset]
source = "blobs"
num_classes = 2
train_per_class = 20
test_per_class = 20
noise = 0.5
hard_fraction = 0.0
seed = 3

[arch]
family = "mlp-8"

[experts]
count = 2
epochs = 4
batch_size = 20

[distill]
iterations = 6
ipc = 1
lr_images = 1.0
log_every = 2
label_epoch = 4

[distill.window]
t_lower = 0
t_init = 1
t_upper = 2
ramp_iters = 3
span = 1
steps = 3

[eval]
epochs = 20
trials = 5
"#;

pub fn datm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datm")).args(args).current_dir(cwd).env("DATM_STRICT", "1").output().expect("spawn datm")
}

pub fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = datm(args, cwd);
    assert!(out.status.success(), "datm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Writes the toy config (plus `extra` lines appended at the top level) into `dir`.
pub fn toy_config(dir: &Path, out_dir: &str) -> PathBuf {
    let path = dir.join("toy.toml");
    std::fs::write(&path, format!("out_dir = {out_dir:?}\n{TOY}")).unwrap();
    path
}

pub fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}
