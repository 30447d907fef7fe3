#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use structvae::idx::{encode_images, encode_labels};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structvae"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn structvae")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ten synthetic "digit" classes: class `c` lights a 4-pixel-thick bar whose
/// position depends on `c`, over light deterministic speckle.
pub fn synthetic(n: usize, salt: u32) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    let mut state = 0x9e37_79b9u32 ^ salt;
    for i in 0..n {
        let c = i % 10;
        labels.push(c as u8);
        for r in 0..28 {
            for col in 0..28 {
                state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                let speckle = (state >> 27) as u8;
                let on = if c < 5 {
                    (4 + 4 * c..8 + 4 * c).contains(&r)
                } else {
                    (4 + 4 * (c - 5)..8 + 4 * (c - 5)).contains(&col)
                };
                pixels.push(if on { 230 } else { speckle });
            }
        }
    }
    (pixels, labels)
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (tp, tl) = synthetic(200, 1);
        let (vp, vl) = synthetic(50, 2);
        fs::write(dir.path().join("train-images"), encode_images(200, 28, 28, &tp)).unwrap();
        fs::write(dir.path().join("train-labels"), encode_labels(&tl)).unwrap();
        fs::write(dir.path().join("test-images"), encode_images(50, 28, 28, &vp)).unwrap();
        fs::write(dir.path().join("test-labels"), encode_labels(&vl)).unwrap();
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// A small, fast configuration file over the fixture data.
    pub fn config(&self, out: &str, extra: &str) -> PathBuf {
        let text = format!(
            "images = {}\nlabels = {}\ntest_images = {}\ntest_labels = {}\nout = {}\n\
             labels_per_class = 2\nrate = 0.25\nbatch_size = 20\nepochs = 2\n\
             hidden_width = 16\nstyle_dim = 2\nseed = 5\n{extra}",
            self.path("train-images").display(),
            self.path("train-labels").display(),
            self.path("test-images").display(),
            self.path("test-labels").display(),
            self.path(out).display(),
        );
        let p = self.path(&format!("{out}.cfg"));
        fs::write(&p, text).unwrap();
        p
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
