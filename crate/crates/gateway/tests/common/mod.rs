#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

pub const BIN: &str = env!("CARGO_BIN_EXE_confetty");

/// A `confetty serve` child process, killed on drop.
pub struct ServeProcess {
    child: Child,
    pub url: String,
    pub dir: tempfile::TempDir,
}

impl ServeProcess {
    pub fn start(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut child = Command::new(BIN)
            .arg("serve")
            .args(["--listen", "127.0.0.1:0"])
            .arg("--ledger-path")
            .arg(dir.path().join("ledger.bin"))
            .arg("--cas-path")
            .arg(dir.path().join("cas"))
            .args(extra)
            .env("CONFETTY_LOG", "warn")
            .env("CONFETTY_AUTHORITY_SECRET", "integration-test-secret")
            .env_remove("CONFETTY_GATEWAY")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("start confetty serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
            .to_owned();
        Self { child, url, dir }
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.dir.path().join("ledger.bin")
    }

    pub fn cas_path(&self) -> PathBuf {
        self.dir.path().join("cas")
    }

    /// Runs the CLI against this gateway.
    pub fn cli(&self, args: &[&str]) -> CliRun {
        cli_with(&self.url, None, args)
    }

    pub fn cli_as(&self, identity: &Path, args: &[&str]) -> CliRun {
        cli_with(&self.url, Some(identity), args)
    }
}

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Debug)]
pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliRun {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", self.stdout))
    }

    pub fn error(&self) -> serde_json::Value {
        let v: serde_json::Value = serde_json::from_str(self.stderr.trim())
            .unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", self.stderr));
        v["error"].clone()
    }

    pub fn ok(self) -> Self {
        assert_eq!(self.code, 0, "stdout: {}\nstderr: {}", self.stdout, self.stderr);
        self
    }
}

pub fn cli_with(url: &str, identity: Option<&Path>, args: &[&str]) -> CliRun {
    let mut cmd = Command::new(BIN);
    cmd.env("CONFETTY_GATEWAY", url).env_remove("CONFETTY_IDENTITY").env_remove("CONFETTY_JSON");
    if let Some(id) = identity {
        cmd.arg("--identity").arg(id);
    }
    let Output { status, stdout, stderr } = cmd.args(args).output().expect("run confetty");
    CliRun {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}
