//! Line-delimited JSON protocol for environments living in another process.
//!
//! engine → env: `{"type":"reset","seed":7,"task":"go_to"}`,
//! `{"type":"step","action":"turn left"}`.
//! env → engine: `{"type":"obs","goal":"...","text":"...","reward":0.0,"done":false}`
//! (`goal` is required in the reply to a reset).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{EnvReset, EnvStepOutcome, Environment, GridWorld};
use crate::error::{Error, Result};
use crate::types::Goal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Reset { seed: u64, task: String },
    Step { action: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reply {
    Obs {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        goal: Option<String>,
        text: String,
        reward: f64,
        done: bool,
    },
}

/// Environment driven over the child's stdin/stdout.
pub struct ExternalEnv {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ExternalEnv {
    /// Spawns `program args...` with piped stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| Error::EnvProtocol("child stdin unavailable".into()))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| Error::EnvProtocol("child stdout unavailable".into()))?);
        Ok(ExternalEnv { child, stdin, stdout })
    }

    fn call(&mut self, req: &Request) -> Result<(Option<String>, EnvStepOutcome)> {
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()).map_err(|e| Error::EnvProtocol(format!("write failed: {e}")))?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(Error::EnvProtocol("environment closed its output".into()));
        }
        let Reply::Obs { goal, text, reward, done } =
            serde_json::from_str(reply.trim_end()).map_err(|e| Error::EnvProtocol(format!("bad reply {:?}: {e}", reply.trim_end())))?;
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::EnvProtocol(format!("reward {reward} outside [0, 1]")));
        }
        Ok((goal, EnvStepOutcome { observation_text: text, reward, done }))
    }
}

impl Environment for ExternalEnv {
    fn reset(&mut self, seed: u64, task: &str) -> Result<EnvReset> {
        let (goal, out) = self.call(&Request::Reset { seed, task: task.to_string() })?;
        let goal = goal.ok_or_else(|| Error::EnvProtocol("reset reply carries no goal".into()))?;
        Ok(EnvReset { goal: Goal::new(goal).map_err(|e| Error::EnvProtocol(e.to_string()))?, observation: out.observation_text })
    }

    fn step(&mut self, action: &str) -> Result<EnvStepOutcome> {
        Ok(self.call(&Request::Step { action: action.to_string() })?.1)
    }
}

impl Drop for ExternalEnv {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Serves the built-in gridworld over the protocol until `input` closes.
/// Malformed requests get an `{"type":"error",...}` line.
pub fn serve(input: impl BufRead, mut output: impl Write) -> Result<()> {
    let mut env = GridWorld::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Reset { seed, task }) => env.reset(seed, &task).map(|r| Reply::Obs { goal: Some(r.goal.to_string()), text: r.observation, reward: 0.0, done: false }),
            Ok(Request::Step { action }) => env.step(&action).map(|o| Reply::Obs { goal: None, text: o.observation_text, reward: o.reward, done: o.done }),
            Err(e) => Err(Error::EnvProtocol(e.to_string())),
        };
        let text = match reply {
            Ok(r) => serde_json::to_string(&r)?,
            Err(e) => serde_json::json!({"type": "error", "message": e.to_string()}).to_string(),
        };
        writeln!(output, "{text}")?;
        output.flush()?;
    }
    Ok(())
}
