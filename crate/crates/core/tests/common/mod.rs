#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ner_harness::corpus::Document;
use tempfile::TempDir;

pub struct Workspace {
    dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("temp dir"),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, contents).expect("write fixture");
        path
    }

    pub fn corpus(&self, name: &str, docs: &[Document]) -> PathBuf {
        let body: String = docs.iter().map(|d| serde_json::to_string(d).unwrap() + "\n").collect();
        self.write(name, &body)
    }

    pub fn vocab(&self, name: &str, labels: &[&str]) -> PathBuf {
        self.write(name, &serde_json::to_string(labels).unwrap())
    }

    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    pub fn json(&self, name: &str) -> serde_json::Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

/// Runs the binary with `args`, each converted through `AsRef<OsStr>`.
pub fn harness<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    harness_env(args, &[])
}

pub fn harness_env<I, S>(args: I, env: &[(&str, &str)]) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ner-harness"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run ner-harness")
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}
