//! Lifecycle of the Python fork-server process.

use super::ValidatorError;
use serde_json::Value;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

const SCRIPT: &str = include_str!("runner.py");
const STARTUP: Duration = Duration::from_secs(60);
/// Slack on top of the per-request timeout before the server is presumed stuck.
const GRACE: Duration = Duration::from_secs(10);

pub(crate) fn default_python() -> String {
    std::env::var("SUITESMITH_PYTHON").unwrap_or_else(|_| "python3".into())
}

struct Server {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<String>,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A lazily started, self-restarting runner process.
pub struct PythonRunner {
    python: String,
    server: Option<Server>,
    next_id: u64,
    version: Option<String>,
}

impl std::fmt::Debug for PythonRunner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PythonRunner")
            .field("python", &self.python)
            .field("running", &self.server.is_some())
            .finish()
    }
}

impl PythonRunner {
    pub fn new(python: &str) -> Self {
        PythonRunner {
            python: python.to_string(),
            server: None,
            next_id: 0,
            version: None,
        }
    }

    /// Interpreter version reported at startup.
    pub fn version(&mut self) -> Result<String, ValidatorError> {
        self.ensure()?;
        Ok(self.version.clone().unwrap_or_default())
    }

    fn ensure(&mut self) -> Result<&mut Server, ValidatorError> {
        if self.server.is_none() {
            let (server, version) = spawn(&self.python)?;
            self.server = Some(server);
            self.version = Some(version);
        }
        Ok(self.server.as_mut().expect("just started"))
    }

    /// Sends one request and waits at most `timeout` plus a grace period.
    pub fn request(&mut self, mut req: Value, timeout: Duration) -> Result<Value, ValidatorError> {
        self.next_id += 1;
        let id = self.next_id;
        req["id"] = Value::from(id);
        let line = format!("{req}\n");
        let server = self.ensure()?;
        if let Err(e) = server
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| server.stdin.flush())
        {
            self.server = None;
            return Err(infra(format!("runner stdin closed: {e}"), String::new()));
        }
        let wait = timeout + timeout / 4 + GRACE;
        let reply = match server.rx.recv_timeout(wait) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.server = None;
                return Err(infra(
                    format!("runner gave no answer within {wait:?}; restarted"),
                    String::new(),
                ));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.server = None;
                return Err(infra("runner process exited".into(), String::new()));
            }
        };
        let v: Value =
            serde_json::from_str(&reply).map_err(|e| infra(format!("unreadable runner reply: {e}"), reply.clone()))?;
        if v["id"].as_u64() != Some(id) {
            self.server = None;
            return Err(infra("runner reply out of sequence".into(), reply));
        }
        if let Some(msg) = v.get("infra").and_then(Value::as_str) {
            return Err(infra(
                msg.to_string(),
                v["log"].as_str().unwrap_or_default().to_string(),
            ));
        }
        Ok(v)
    }
}

fn infra(message: String, log: String) -> ValidatorError {
    ValidatorError::Infrastructure { message, log }
}

fn spawn(python: &str) -> Result<(Server, String), ValidatorError> {
    let mut child = Command::new(python)
        .arg("-c")
        .arg(SCRIPT)
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| infra(format!("cannot start {python}: {e}"), String::new()))?;
    let stdin = child.stdin.take().expect("piped");
    let stdout = child.stdout.take().expect("piped");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let server = Server { child, stdin, rx };
    let ready = server
        .rx
        .recv_timeout(STARTUP)
        .map_err(|_| infra(format!("{python} runner did not start"), String::new()))?;
    let v: Value =
        serde_json::from_str(&ready).map_err(|e| infra(format!("bad runner greeting: {e}"), ready.clone()))?;
    if v["ready"].as_bool() != Some(true) {
        return Err(infra("bad runner greeting".into(), ready));
    }
    let version = v["python"].as_str().unwrap_or_default().to_string();
    Ok((server, version))
}
