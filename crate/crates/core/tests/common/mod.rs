#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rgbd_vo::synthetic::{mini_sequence, write_tum_sequence};

pub const WIDTH: usize = 640;
pub const HEIGHT: usize = 480;

/// Writes the standard synthetic sequence with `frames` frames into `dir`.
pub fn write_fixture(dir: &Path, frames: usize) {
    let (frames, gt) = mini_sequence(frames, WIDTH, HEIGHT);
    write_tum_sequence(dir, &frames, Some(&gt)).unwrap();
}

pub fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_rgbd-vo"))
}

pub fn rgbd_vo<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(binary()).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
