#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout:\n{}\nstderr:\n{}", self.stdout, self.stderr);
        self
    }
}

pub fn sdts(dir: &Path, args: &[&str]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_sdts"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn sdts");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

#[rustfmt::skip]
/// Small network and schedule so CLI training runs take well under a second.
pub const SMALL: &[&str] = &[
    "--set", "channels=8",
    "--set", "blocks=2",
    "--set", "slice_split=4",
    "--set", "mc_channels=6",
    "--set", "batch_size=2",
    "--set", "patch_size=16",
    "--set", "steps_per_epoch=1",
    "--set", "phase1_epochs=1",
    "--set", "phase2_epochs=1",
    "--set", "phase3_epochs=1",
    "--set", "total_epochs=3",
    "--set", "decay_epoch=2",
];

/// `args[0]` is the subcommand; later `--set`s in `args` win over SMALL.
pub fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![args[0]];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(&args[1..]);
    v
}

/// raw/ and deg/ clips in `dir`.
pub fn clips(dir: &Path, frames: usize, dims: &str, shift: &str) {
    let n = frames.to_string();
    sdts(
        dir,
        &[
            "synth", "--frames", &n, "--dims", dims, "--shift", shift, "--seed", "1", "--output", "raw",
        ],
    )
    .ok();
    sdts(
        dir,
        &["degrade", "--input", "raw", "--output", "deg", "--preset", "q37"],
    )
    .ok();
}

pub fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}
