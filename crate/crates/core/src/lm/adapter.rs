//! Line-delimited JSON bridge to an external model process.
//!
//! Each request is one JSON object on stdin carrying a monotonically
//! increasing `id`; the process answers with one JSON object per line
//! echoing that `id`. Replies with an older id are skipped.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{LmEvent, LmEventKind, LmProposal, ProposeContext};
use crate::error::{AdkoError, Result};
use crate::space::{DesignPoint, DesignSpace, Dimension};
use crate::token::Signal;

pub const ADAPTER_TIMEOUT: Duration = Duration::from_secs(10);
pub const INSIGHT_MAX_BYTES: usize = 512;
pub const COMMAND_ENV: &str = "ADKO_LM_COMMAND";

#[derive(Debug)]
pub struct AdapterReply<T> {
    pub value: T,
    pub events: Vec<LmEvent>,
}

pub struct ExternalLm {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    next_id: u64,
    timeout: Duration,
}

impl ExternalLm {
    /// Run `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| AdkoError::Adapter("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| AdkoError::Adapter("no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalLm { child, stdin, lines: rx, next_id: 0, timeout: ADAPTER_TIMEOUT })
    }

    pub fn from_env() -> Option<Result<Self>> {
        let cmd = std::env::var(COMMAND_ENV).ok()?;
        let cmd = cmd.trim();
        if cmd.is_empty() {
            return None;
        }
        Some(Self::spawn(cmd))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn call(&mut self, mut request: Value) -> Result<Value> {
        self.next_id += 1;
        let id = self.next_id;
        request["id"] = json!(id);
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| AdkoError::Adapter(format!("write failed: {e}")))?;
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let raw = match self.lines.recv_timeout(left) {
                Ok(raw) => raw,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(AdkoError::Adapter(format!("no reply to request {id} within {:?}", self.timeout)))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(AdkoError::Adapter("process closed stdout".into())),
            };
            let v: Value =
                serde_json::from_str(&raw).map_err(|e| AdkoError::Adapter(format!("malformed reply: {e}")))?;
            match v.get("id").and_then(Value::as_u64) {
                Some(got) if got == id => return Ok(v),
                Some(got) if got < id => continue,
                _ => return Err(AdkoError::Adapter(format!("reply id mismatch for request {id}"))),
            }
        }
    }

    pub fn propose(&mut self, ctx: &ProposeContext<'_>) -> Result<AdapterReply<LmProposal>> {
        let history: Vec<Value> = ctx
            .history
            .points()
            .iter()
            .zip(ctx.history.values())
            .map(|(p, y)| json!({ "theta": ctx.space.describe(*p), "y": y }))
            .collect();
        let tokens: Vec<Value> =
            ctx.memory.tokens().map(|t| serde_json::to_value(t).map_err(AdkoError::from)).collect::<Result<_>>()?;
        let request = json!({
            "kind": "propose",
            "agent": ctx.agent,
            "round": ctx.round,
            "m": ctx.m,
            "space": { "dims": ctx.space.dims(), "fixed": fixed_levels(ctx.space, ctx.available) },
            "history": history,
            "tokens": tokens,
        });
        let reply = self.call(request)?;
        let raw = reply
            .get("candidates")
            .and_then(Value::as_array)
            .ok_or_else(|| AdkoError::Adapter("reply lacks `candidates`".into()))?;
        let mut events = Vec::new();
        let mut out: Vec<DesignPoint> = Vec::new();
        let mut rationales: Vec<String> = Vec::new();
        let given: Vec<String> = reply
            .get("rationales")
            .and_then(Value::as_array)
            .map(|a| a.iter().map(|r| r.as_str().unwrap_or_default().to_string()).collect())
            .unwrap_or_default();
        for (i, cand) in raw.iter().enumerate() {
            let event = |kind, detail: String| LmEvent { agent: ctx.agent, round: ctx.round, kind, detail };
            let Some(p) = parse_candidate(ctx.space, cand) else {
                events.push(event(LmEventKind::Dropped, format!("candidate {i} unparseable: {cand}")));
                continue;
            };
            let p = if ctx.available.binary_search(&p).is_ok() {
                p
            } else {
                let q = nearest_available(ctx.space, ctx.available, p)?;
                events.push(event(LmEventKind::Snapped, format!("candidate {i} moved from {} to {}", p.0, q.0)));
                q
            };
            if out.contains(&p) {
                continue;
            }
            out.push(p);
            rationales.push(given.get(i).cloned().unwrap_or_default());
            if out.len() == ctx.m {
                break;
            }
        }
        let rationales = if given.is_empty() { None } else { Some(rationales) };
        Ok(AdapterReply { value: LmProposal { candidates: out, rationales }, events })
    }

    pub fn encode(
        &mut self,
        space: &DesignSpace,
        theta: DesignPoint,
        signal: Signal,
        advantage: f64,
        agent: usize,
        round: usize,
    ) -> Result<String> {
        let reply = self.call(json!({
            "kind": "encode",
            "agent": agent,
            "round": round,
            "theta": space.describe(theta),
            "signal": signal,
            "advantage": advantage,
        }))?;
        let text = reply
            .get("insight")
            .and_then(Value::as_str)
            .ok_or_else(|| AdkoError::Adapter("reply lacks `insight`".into()))?;
        Ok(truncate_utf8(text, INSIGHT_MAX_BYTES).to_string())
    }
}

impl Drop for ExternalLm {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub(crate) fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Dimensions on which every available point shares one level.
fn fixed_levels(space: &DesignSpace, available: &[DesignPoint]) -> serde_json::Map<String, Value> {
    let mut out = serde_json::Map::new();
    let Some(first) = available.first() else { return out };
    let c0 = space.coords(*first);
    let desc = space.describe(*first);
    for (k, d) in space.dims().iter().enumerate() {
        if d.len() > 1 && available.iter().all(|p| space.coords(*p)[k] == c0[k]) {
            out.insert(d.name().to_string(), json!(desc[k]));
        }
    }
    out
}

fn parse_candidate(space: &DesignSpace, v: &Value) -> Option<DesignPoint> {
    let vals = v.as_array()?;
    if vals.len() != space.ndim() {
        return None;
    }
    let mut coords = Vec::with_capacity(vals.len());
    for (val, d) in vals.iter().zip(space.dims()) {
        let k = d.len();
        let c = match d {
            Dimension::Continuous { lo, hi, steps, .. } => {
                let x = match val {
                    Value::Number(n) => n.as_f64()?,
                    Value::String(s) => s.trim().parse::<f64>().ok()?,
                    _ => return None,
                };
                if !x.is_finite() {
                    return None;
                }
                if *steps <= 1 || hi == lo {
                    0
                } else {
                    (((x - lo) / (hi - lo)).clamp(0.0, 1.0) * (*steps - 1) as f64).round() as usize
                }
            }
            Dimension::Categorical { levels, .. } => match val {
                Value::String(s) => levels.iter().position(|l| l == s)?,
                Value::Number(n) => {
                    let x = n.as_f64()?;
                    if !x.is_finite() {
                        return None;
                    }
                    (x.round().max(0.0) as usize).min(k - 1)
                }
                _ => return None,
            },
        };
        coords.push(c);
    }
    space.from_coords(&coords).ok()
}

fn nearest_available(space: &DesignSpace, available: &[DesignPoint], p: DesignPoint) -> Result<DesignPoint> {
    let x = space.embed(p);
    let mut best: Option<(f64, DesignPoint)> = None;
    for &q in available {
        let d: f64 = space.embed(q).iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, q));
        }
    }
    best.map(|(_, q)| q).ok_or(AdkoError::EmptyCandidates)
}
