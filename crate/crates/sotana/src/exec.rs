//! Runs generated code against its tests in a child process.
//!
//! Each run gets a fresh temp dir as working directory and its own process
//! group, so a timeout kills everything the program spawned.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sotana_core::corpus::CodegenTask;
use wait_timeout::ChildExt;

pub const FILE_PLACEHOLDER: &str = "{file}";
pub const DEFAULT_WALL: Duration = Duration::from_secs(10);
pub const DEFAULT_OUTPUT_CAP: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    TestFailure,
    Timeout,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub task_id: String,
    pub passed: bool,
    pub status: ExecStatus,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecLimits {
    pub wall: Duration,
    /// Combined stdout and stderr bytes before the run is killed.
    pub output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self { wall: DEFAULT_WALL, output_bytes: DEFAULT_OUTPUT_CAP }
    }
}

/// Configuration problems, as opposed to a candidate failing.
#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("runner template {0:?} has no {{file}} placeholder")]
    NoPlaceholder(String),
    #[error("runner program {0:?} not found")]
    RunnerMissing(String),
    #[error("io error while running candidate: {0}")]
    Io(#[from] io::Error),
}

/// A command template such as `python3 {file}`, split on whitespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Runner {
    argv: Vec<String>,
    extension: String,
}

impl Runner {
    pub fn parse(template: &str) -> Result<Self, ExecError> {
        let argv: Vec<String> = template.split_whitespace().map(String::from).collect();
        if !argv.iter().any(|a| a.contains(FILE_PLACEHOLDER)) || argv[0].contains(FILE_PLACEHOLDER) {
            return Err(ExecError::NoPlaceholder(template.to_string()));
        }
        let extension = if argv[0].contains("python") { ".py".into() } else { String::new() };
        Ok(Self { argv, extension })
    }

    fn command(&self, file: &str) -> Command {
        let args: Vec<String> = self.argv.iter().map(|a| a.replace(FILE_PLACEHOLDER, file)).collect();
        let mut cmd = Command::new(&args[0]);
        cmd.args(&args[1..]);
        cmd
    }
}

/// Prompt, completion and tests as one program. When the tests define
/// `check(candidate)` without calling it, a call on the entry point is
/// appended.
pub fn assemble_program(task: &CodegenTask, completion: &str) -> String {
    let mut program = String::with_capacity(task.prompt.len() + completion.len() + task.tests.len() + 64);
    program.push_str(&task.prompt);
    program.push_str(completion);
    program.push_str("\n\n");
    program.push_str(&task.tests);
    program.push('\n');
    if task.tests.contains("def check(") && !task.tests.contains("\ncheck(") {
        program.push_str(&format!("\ncheck({})\n", task.entry_point));
    }
    program
}

pub fn execute_candidate(
    task: &CodegenTask,
    completion: &str,
    limits: ExecLimits,
    runner: &Runner,
) -> Result<ExecOutcome, ExecError> {
    let dir = tempfile::tempdir()?;
    let file = dir.path().join(format!("candidate{}", runner.extension));
    std::fs::write(&file, assemble_program(task, completion))?;

    let mut cmd = runner.command(&file.to_string_lossy());
    cmd.current_dir(dir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_default())
        .env("HOME", dir.path())
        .process_group(0);
    let start = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(ExecError::RunnerMissing(runner.argv[0].clone())),
        Err(e) => return Err(e.into()),
    };
    let (over_cap, readers) = drain_output(&mut child, limits.output_bytes);

    let status = match wait_until(&mut child, limits.wall, &over_cap)? {
        Some(s) => s,
        None => {
            kill_group(&child);
            child.wait()?;
            for r in readers {
                let _ = r.join();
            }
            let status = if over_cap.load() { ExecStatus::Crash } else { ExecStatus::Timeout };
            return Ok(outcome(task, status, start));
        }
    };
    // Stray grandchildren may still hold the pipes open.
    kill_group(&child);
    for r in readers {
        let _ = r.join();
    }
    let status = if over_cap.load() {
        ExecStatus::Crash
    } else if status.success() {
        ExecStatus::Ok
    } else if status.signal().is_some() {
        ExecStatus::Crash
    } else {
        ExecStatus::TestFailure
    };
    Ok(outcome(task, status, start))
}

fn outcome(task: &CodegenTask, status: ExecStatus, start: Instant) -> ExecOutcome {
    ExecOutcome {
        task_id: task.task_id.clone(),
        passed: status == ExecStatus::Ok,
        status,
        wall_ms: start.elapsed().as_millis() as u64,
    }
}

#[derive(Clone, Default)]
struct Flag(std::sync::Arc<std::sync::atomic::AtomicBool>);

impl Flag {
    fn set(&self) {
        self.0.store(true, std::sync::atomic::Ordering::SeqCst);
    }

    fn load(&self) -> bool {
        self.0.load(std::sync::atomic::Ordering::SeqCst)
    }
}

/// Reads both pipes on threads, discarding output but counting bytes
/// against a shared cap.
fn drain_output(child: &mut Child, cap: usize) -> (Flag, Vec<thread::JoinHandle<()>>) {
    let flag = Flag::default();
    let used = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let mut handles = Vec::new();
    let pipes: Vec<Box<dyn Read + Send>> = [
        child.stdout.take().map(|p| Box::new(p) as Box<dyn Read + Send>),
        child.stderr.take().map(|p| Box::new(p) as Box<dyn Read + Send>),
    ]
    .into_iter()
    .flatten()
    .collect();
    for mut pipe in pipes {
        let (flag, used) = (flag.clone(), used.clone());
        handles.push(thread::spawn(move || {
            let mut buf = [0u8; 8192];
            loop {
                match pipe.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let total = used.fetch_add(n, std::sync::atomic::Ordering::SeqCst) + n;
                        if total > cap {
                            flag.set();
                        }
                    }
                }
            }
        }));
    }
    (flag, handles)
}

/// Waits for exit, the wall limit, or the output cap, whichever is first.
fn wait_until(child: &mut Child, wall: Duration, over_cap: &Flag) -> io::Result<Option<std::process::ExitStatus>> {
    let deadline = Instant::now() + wall;
    let slice = Duration::from_millis(50);
    loop {
        let now = Instant::now();
        if now >= deadline || over_cap.load() {
            return Ok(None);
        }
        if let Some(s) = child.wait_timeout(slice.min(deadline - now))? {
            return Ok(Some(s));
        }
    }
}

fn kill_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: plain syscall; a negative pid addresses the process group
    // created for this child, which contains nothing of ours.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runner_needs_placeholder() {
        assert!(matches!(Runner::parse("python3"), Err(ExecError::NoPlaceholder(_))));
        assert!(matches!(Runner::parse(""), Err(ExecError::NoPlaceholder(_))));
        assert_eq!(Runner::parse("python3 -I {file}").unwrap().extension, ".py");
    }

    #[test]
    fn check_call_is_appended_once() {
        let task = CodegenTask {
            task_id: "t".into(),
            prompt: "def add(a, b):\n".into(),
            tests: "def check(candidate):\n    assert candidate(1, 2) == 3\n".into(),
            entry_point: "add".into(),
        };
        let p = assemble_program(&task, "    return a + b\n");
        assert!(p.ends_with("check(add)\n"));
        let called = CodegenTask { tests: format!("{}\ncheck(add)\n", task.tests), ..task };
        assert_eq!(assemble_program(&called, "").matches("check(add)").count(), 1);
    }
}
