//! Runs the `biaslab serve` binary as a child process and talks to it over
//! plain HTTP/1.1, so crash and shutdown behavior can be tested for real.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use serde_json::{json, Value};

use super::fixture;

pub struct Server {
    pub child: Child,
    pub addr: SocketAddr,
}

impl Server {
    pub fn start(bin: &str, store: &Path) -> Result<Self, String> {
        let mut child = Command::new(bin)
            .args(["serve", "--bind", "127.0.0.1:0", "--expire-every", "3600"])
            .arg("--store")
            .arg(store)
            .env("BIASLAB_TOKEN", fixture::TOKEN)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn failed: {e}"))?;
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .map_err(|e| e.to_string())?;
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .and_then(|a| a.parse().ok())
            .ok_or_else(|| {
                let _ = child.kill();
                format!("unexpected startup line {line:?}")
            })?;
        Ok(Self { child, addr })
    }

    /// SIGKILL: no chance to flush anything.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// SIGTERM and wait for the graceful shutdown to finish.
    pub fn terminate(mut self) -> Result<(), String> {
        let status = Command::new("kill")
            .args(["-TERM", &self.child.id().to_string()])
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err("kill -TERM failed".into());
        }
        let exit = self.child.wait().map_err(|e| e.to_string())?;
        if !exit.success() {
            return Err(format!("server exited with {exit}"));
        }
        Ok(())
    }

    pub fn request(&self, method: &str, path: &str, body: Option<&Value>) -> Result<(u16, Value), String> {
        let mut stream = TcpStream::connect(self.addr).map_err(|e| e.to_string())?;
        stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        let payload = body.map(Value::to_string).unwrap_or_default();
        let head = format!(
            "{method} {path} HTTP/1.1\r\nHost: {}\r\nAuthorization: Bearer {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            self.addr,
            fixture::TOKEN,
            payload.len()
        );
        stream.write_all(head.as_bytes()).map_err(|e| e.to_string())?;
        stream.write_all(payload.as_bytes()).map_err(|e| e.to_string())?;
        let mut raw = Vec::new();
        stream.read_to_end(&mut raw).map_err(|e| e.to_string())?;
        let text = String::from_utf8_lossy(&raw);
        let (head, body) = text.split_once("\r\n\r\n").ok_or("no header terminator")?;
        let status: u16 = head
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or("no status code")?;
        let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
            dechunk(body)
        } else {
            body.to_owned()
        };
        let value = if body.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&body).map_err(|e| format!("bad body {body:?}: {e}"))?
        };
        Ok((status, value))
    }

    fn ok(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Value, String> {
        match self.request(method, path, body)? {
            (s, v) if (200..300).contains(&s) => Ok(v),
            (s, v) => Err(format!("{method} {path} returned {s}: {v}")),
        }
    }
}

fn dechunk(mut body: &str) -> String {
    let mut out = String::new();
    while let Some((size, rest)) = body.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        body = rest[n..].trim_start_matches("\r\n");
    }
    out
}

/// Everything a client can read back, for before/after comparisons.
pub fn observe(server: &Server, session: &str) -> Result<Value, String> {
    Ok(json!({
        "outlets": server.ok("GET", "/outlets", None)?,
        "sentences": server.ok("GET", "/sentences", None)?,
        "annotations": server.ok("GET", "/annotations", None)?,
        "session": server.ok("GET", &format!("/game/sessions/{session}"), None)?,
        "feedback": server.ok("GET", &format!("/game/sessions/{session}/feedback"), None)?,
        "leaderboard": server.ok("GET", "/leaderboard", None)?,
        "models": server.ok("GET", "/models", None)?,
    }))
}

/// Populates a fresh server and plays into the game. Returns the session id.
pub fn populate(server: &Server) -> Result<String, String> {
    for o in fixture::outlets() {
        server.ok("POST", "/outlets", Some(&serde_json::to_value(o).unwrap()))?;
    }
    server.ok("POST", "/sentences", Some(&json!({"kind": "gold", "records": fixture::gold(12)})))?;
    server.ok("POST", "/sentences", Some(&json!({"kind": "unlabeled", "records": fixture::unlabeled(12)})))?;
    for p in fixture::profiles() {
        server.ok("POST", "/profiles", Some(&serde_json::to_value(p).unwrap()))?;
    }
    for r in fixture::gold(12) {
        let label = r.label.unwrap();
        let words: Vec<usize> = if label == biaslab_core::Label::Biased { vec![2] } else { vec![] };
        let body = json!({"sentence_id": r.id, "annotator_id": "expert", "sentence_label": label, "biased_words": words});
        server.ok("POST", "/annotations", Some(&body))?;
    }
    let ckpt = fixture::checkpoint();
    server.ok("POST", "/models", Some(&json!({"id": "m1", "checkpoint": ckpt.to_text()})))?;
    let session = server.ok("POST", "/game/sessions", Some(&json!({"player_id": "p0"})))?;
    let id = session["id"].as_str().ok_or("session without id")?.to_owned();
    play(server, &id, 9)?;
    Ok(id)
}

/// Serves and answers up to `steps` items.
pub fn play(server: &Server, session: &str, steps: usize) -> Result<(), String> {
    for _ in 0..steps {
        let served = server.ok("GET", &format!("/game/sessions/{session}/next"), None)?;
        if served["type"] == "item" {
            let body = json!({"sentence_id": served["sentence_id"], "label": "biased", "biased_words": [0]});
            server.ok("POST", &format!("/game/sessions/{session}/answer"), Some(&body))?;
        } else if served["type"] == "completed" {
            break;
        }
    }
    Ok(())
}

/// Kill -9 after acknowledged writes, restart, and compare everything readable.
pub fn kill_and_restart(bin: &str, store: &Path) -> Result<(), String> {
    let server = Server::start(bin, store)?;
    let session = populate(&server)?;
    let before = observe(&server, &session)?;
    server.kill();

    let server = Server::start(bin, store)?;
    let after = observe(&server, &session)?;
    if before != after {
        server.kill();
        return Err("state after kill -9 differs from acknowledged state".into());
    }
    // The interrupted session is still playable.
    let result = play(&server, &session, 3);
    server.kill();
    result
}

/// Graceful shutdown mid-session writes a snapshot; the session resumes afterwards.
pub fn terminate_and_resume(bin: &str, store: &Path) -> Result<(), String> {
    let server = Server::start(bin, store)?;
    let session = populate(&server)?;
    let before = observe(&server, &session)?;
    server.terminate()?;
    if !store.join("snapshot.json").exists() {
        return Err("graceful shutdown wrote no snapshot".into());
    }
    let server = Server::start(bin, store)?;
    let after = observe(&server, &session)?;
    let resumed = play(&server, &session, 3);
    server.kill();
    if before != after {
        return Err("state after graceful shutdown differs".into());
    }
    if before["session"]["state"] != "active" {
        return Err("fixture session was not active at shutdown".into());
    }
    resumed
}

/// A corrupt snapshot makes `serve` exit non-zero with a diagnostic.
pub fn corrupt_store_refuses_to_start(bin: &str, store: &Path) -> Result<(), String> {
    std::fs::create_dir_all(store).map_err(|e| e.to_string())?;
    std::fs::write(store.join("snapshot.json"), "{ corrupted").map_err(|e| e.to_string())?;
    let out = Command::new(bin)
        .args(["serve", "--bind", "127.0.0.1:0"])
        .arg("--store")
        .arg(store)
        .env("BIASLAB_TOKEN", fixture::TOKEN)
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    if out.status.code() != Some(2) || !stderr.contains("corrupt") {
        return Err(format!("expected exit 2 with a diagnostic, got {:?}: {stderr}", out.status.code()));
    }
    Ok(())
}
