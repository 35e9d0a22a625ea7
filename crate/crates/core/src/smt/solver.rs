//! External SMT-LIB2 solver driven as a subprocess.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::model::{parse_model, Model};
use super::script::Script;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Sat,
    Unsat,
    Timeout,
    Unknown,
    Error,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Sat => "SAT",
            Status::Unsat => "UNSAT",
            Status::Timeout => "TIMEOUT",
            Status::Unknown => "UNKNOWN",
            Status::Error => "ERROR",
        })
    }
}

impl std::str::FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "SAT" => Status::Sat,
            "UNSAT" => Status::Unsat,
            "TIMEOUT" => Status::Timeout,
            "UNKNOWN" => Status::Unknown,
            "ERROR" => Status::Error,
            _ => return Err(format!("unknown status {s}")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolverVerdict {
    pub status: Status,
    pub model: Option<Model>,
    pub wall_time_s: f64,
    pub raw_output: String,
}

impl SolverVerdict {
    fn error(msg: impl Into<String>, wall_time_s: f64) -> Self {
        SolverVerdict { status: Status::Error, model: None, wall_time_s, raw_output: msg.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    #[default]
    Stdin,
    /// Script written to a temporary file whose path is appended to the
    /// command line.
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Program followed by its arguments.
    pub cmd: Vec<String>,
    pub timeout_s: f64,
    #[serde(default)]
    pub input: InputMode,
    /// When set, every emitted script is written here before solving.
    #[serde(default)]
    pub archive_dir: Option<PathBuf>,
}

pub const DEFAULT_TIMEOUT_S: f64 = 600.0;

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cmd: vec!["z3".into(), "-in".into()],
            timeout_s: DEFAULT_TIMEOUT_S,
            input: InputMode::Stdin,
            archive_dir: None,
        }
    }
}

impl SolverConfig {
    pub fn with_timeout(mut self, timeout_s: f64) -> Self {
        self.timeout_s = timeout_s;
        self
    }

    /// Parses a whitespace-separated command such as `"z3 -in"`.
    pub fn command(mut self, cmd: &str) -> Self {
        self.cmd = cmd.split_whitespace().map(String::from).collect();
        self
    }
}

pub fn run_solver(script: &Script, cfg: &SolverConfig) -> SolverVerdict {
    run_solver_labeled(script, cfg, "query")
}

/// Runs one query. `label` names the archived script, if archiving is on.
pub fn run_solver_labeled(script: &Script, cfg: &SolverConfig, label: &str) -> SolverVerdict {
    let text = match script.emit() {
        Ok(t) => t,
        Err(e) => return SolverVerdict::error(e.to_string(), 0.0),
    };
    if let Some(dir) = &cfg.archive_dir {
        let write = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join(format!("{label}.smt2")), &text));
        if let Err(e) = write {
            log::warn!("could not archive script {label}: {e}");
        }
    }
    let start = Instant::now();
    let (status, output) = match execute(&text, cfg) {
        Ok(r) => r,
        Err(e) => return SolverVerdict::error(e, start.elapsed().as_secs_f64()),
    };
    let wall = start.elapsed().as_secs_f64();
    match status {
        Exit::TimedOut => SolverVerdict {
            status: Status::Timeout,
            model: None,
            wall_time_s: wall,
            raw_output: output,
        },
        Exit::Done => interpret(output, &script.get_values, wall),
    }
}

enum Exit {
    Done,
    TimedOut,
}

fn execute(text: &str, cfg: &SolverConfig) -> Result<(Exit, String), String> {
    let (program, args) = cfg.cmd.split_first().ok_or("empty solver command")?;
    let mut cmd = Command::new(program);
    cmd.args(args).stdout(Stdio::piped()).stderr(Stdio::piped());
    let _tmp = match cfg.input {
        InputMode::Stdin => {
            cmd.stdin(Stdio::piped());
            None
        }
        InputMode::File => {
            let path = std::env::temp_dir().join(format!(
                "nnrepair-{}-{}.smt2",
                std::process::id(),
                unique_suffix()
            ));
            std::fs::write(&path, text).map_err(|e| e.to_string())?;
            cmd.arg(&path).stdin(Stdio::null());
            Some(TempPath(path))
        }
    };
    let mut child = cmd.spawn().map_err(|e| format!("failed to spawn {program}: {e}"))?;

    let writer = child.stdin.take().map(|mut stdin| {
        let text = text.to_owned();
        // A solver killed mid-write closes the pipe; the error is irrelevant.
        thread::spawn(move || {
            let _ = stdin.write_all(text.as_bytes());
        })
    });
    let stdout = drain(child.stdout.take());
    let stderr = drain(child.stderr.take());

    let exit = wait_with_deadline(&mut child, Duration::from_secs_f64(cfg.timeout_s.max(0.0)));
    if let Some(w) = writer {
        let _ = w.join();
    }
    let mut output = stdout.join().unwrap_or_default();
    let err = stderr.join().unwrap_or_default();
    if !err.trim().is_empty() {
        output.push_str(&err);
    }
    Ok((exit.map_err(|e| e.to_string())?, output))
}

fn wait_with_deadline(child: &mut Child, budget: Duration) -> std::io::Result<Exit> {
    let deadline = Instant::now() + budget;
    let mut pause = Duration::from_micros(200);
    loop {
        if child.try_wait()?.is_some() {
            return Ok(Exit::Done);
        }
        let now = Instant::now();
        if now >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(Exit::TimedOut);
        }
        thread::sleep(pause.min(deadline - now));
        pause = (pause * 2).min(Duration::from_millis(20));
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut s = String::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_string(&mut s);
        }
        s
    })
}

fn interpret(output: String, names: &[String], wall: f64) -> SolverVerdict {
    let mut lines = output.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines.next().unwrap_or("");
    let status = match first {
        "sat" => Status::Sat,
        "unsat" => Status::Unsat,
        "unknown" => Status::Unknown,
        "timeout" => Status::Timeout,
        _ => Status::Error,
    };
    // Without a model, the trailing get-value is expected to fail; any
    // other error invalidates the answer.
    if status == Status::Sat && output.contains("(error") {
        return SolverVerdict { status: Status::Error, model: None, wall_time_s: wall, raw_output: output };
    }
    let mut verdict = SolverVerdict { status, model: None, wall_time_s: wall, raw_output: output };
    if status == Status::Sat && !names.is_empty() {
        let rest = verdict.raw_output.trim_start().strip_prefix("sat").unwrap_or("");
        match parse_model(rest, names) {
            Ok(m) => verdict.model = Some(m),
            Err(e) => {
                log::warn!("discarding SAT verdict: {e}");
                verdict.status = Status::Error;
            }
        }
    }
    verdict
}

struct TempPath(PathBuf);

impl Drop for TempPath {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn unique_suffix() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(0);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// True when the configured solver program can be started.
pub fn solver_available(cfg: &SolverConfig) -> bool {
    cfg.cmd
        .first()
        .is_some_and(|p| Command::new(p).arg("--version").stdout(Stdio::null()).stderr(Stdio::null()).status().is_ok())
}
