//! External objectives: one subprocess per evaluation, comma-separated
//! coordinates on stdin, one real number expected on stdout.

use std::io::Write;
use std::process::{Command, Stdio};

use mibo::driver::{Objective, ObjectiveError};
use mibo::space::Point;

pub struct ExternalObjective {
    command: Vec<String>,
}

impl ExternalObjective {
    pub fn new(command: Vec<String>) -> Self {
        assert!(!command.is_empty(), "external command must not be empty");
        ExternalObjective { command }
    }
}

impl Objective for ExternalObjective {
    fn evaluate(&mut self, x: &Point) -> Result<f64, ObjectiveError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                ObjectiveError::new(format!("failed to spawn `{}`: {e}", self.command[0]))
            })?;
        let line = x
            .coords()
            .iter()
            .map(|c| format!("{c}"))
            .collect::<Vec<_>>()
            .join(",")
            + "\n";
        let mut stdin = child.stdin.take().expect("stdin was piped");
        // Evaluators that ignore stdin (constant commands) close the pipe
        // early; that is their prerogative, not a failure.
        if let Err(e) = stdin.write_all(line.as_bytes()) {
            if e.kind() != std::io::ErrorKind::BrokenPipe {
                return Err(ObjectiveError::new(format!(
                    "failed to write point to evaluator: {e}"
                )));
            }
        }
        drop(stdin);
        let output = child
            .wait_with_output()
            .map_err(|e| ObjectiveError::new(format!("failed to read evaluator output: {e}")))?;
        if !output.status.success() {
            return Err(ObjectiveError::new(format!(
                "evaluator exited with {}",
                output.status
            )));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let trimmed = text.trim();
        trimmed.parse::<f64>().map_err(|_| {
            ObjectiveError::new(format!("evaluator output `{trimmed}` is not a number"))
        })
    }
}
