//! Out-of-process controllers.
//!
//! The command is started with `sh -c` once per testcase. The harness
//! writes one JSON request per line to its stdin and reads one JSON reply
//! per line from its stdout:
//!
//! ```text
//! → {"hook":"setup","testcase":{…public testcase…}}
//! ← {"ok":true}
//! → {"hook":"target_generator","t":0.0,"measurement":[x,y,θ,ψ]}
//! ← {"output":[8 numbers]}
//! → {"hook":"state_estimator","t":0.0,"measurement":[…],"reference":[…]}
//! ← {"output":[8 numbers]}
//! → {"hook":"mp_controller","t":0.0,"estimate":[…],"reference":[…]}
//! ← {"output":[ux,uy]}
//! ```
//!
//! Any hook may instead answer `{"error":"message"}`. Non-finite numbers
//! may be sent as `null`. The process is killed when the testcase ends.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use cranebench::harness::{downcast_state, ControllerHooks, ControllerState, HookResult};
use cranebench::testcases::PublicTestcase;

#[derive(Debug, Serialize)]
#[serde(tag = "hook", rename_all = "snake_case")]
enum Request<'a> {
    Setup { testcase: &'a PublicTestcase },
    TargetGenerator { t: f64, measurement: &'a [f64] },
    StateEstimator { t: f64, measurement: &'a [f64], reference: &'a [f64] },
    MpController { t: f64, estimate: &'a [f64], reference: &'a [f64] },
}

#[derive(Debug, Deserialize)]
struct Reply {
    #[serde(default)]
    output: Option<Vec<Option<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Process {
    fn call(&mut self, request: &Request<'_>) -> HookResult<Reply> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err("plug-in closed its output".into());
        }
        let reply: Reply = serde_json::from_str(reply.trim()).map_err(|e| format!("malformed plug-in reply: {e}"))?;
        match reply.error {
            Some(msg) => Err(msg.into()),
            None => Ok(reply),
        }
    }

    fn output(&mut self, request: &Request<'_>) -> HookResult<Vec<f64>> {
        let reply = self.call(request)?;
        let out = reply.output.ok_or("plug-in reply has no output")?;
        Ok(out.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Hooks backed by a plug-in process.
#[derive(Debug, Clone)]
pub struct ExecController {
    pub command: String,
}

impl ExecController {
    pub fn new(command: String) -> Self {
        Self { command }
    }
}

impl ControllerHooks for ExecController {
    fn setup(&self, tc: &PublicTestcase) -> HookResult<ControllerState> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("cannot start plug-in {:?}: {e}", self.command))?;
        let stdin = child.stdin.take().ok_or("plug-in stdin unavailable")?;
        let stdout = BufReader::new(child.stdout.take().ok_or("plug-in stdout unavailable")?);
        let mut process = Process { child, stdin, stdout };
        process.call(&Request::Setup { testcase: tc })?;
        Ok(Box::new(process))
    }

    fn target_generator(&self, t: f64, measurement: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        downcast_state::<Process>(state)?.output(&Request::TargetGenerator { t, measurement })
    }

    fn state_estimator(&self, t: f64, measurement: &[f64], reference: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        downcast_state::<Process>(state)?.output(&Request::StateEstimator { t, measurement, reference })
    }

    fn mp_controller(&self, t: f64, estimate: &[f64], reference: &[f64], state: &mut ControllerState) -> HookResult<Vec<f64>> {
        downcast_state::<Process>(state)?.output(&Request::MpController { t, estimate, reference })
    }
}
