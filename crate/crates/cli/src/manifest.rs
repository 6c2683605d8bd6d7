//! Replayable record of one command invocation.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::CliError;

const HEADER: &str = "# dsmfuse run manifest";

/// Everything needed to rerun a command: its complete argument list
/// (defaults spelled out), the working directory, seeds and artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub cwd: PathBuf,
    pub threads: usize,
    pub seeds: Vec<(String, u64)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started: f64,
    pub finished: f64,
    pub exit_code: i32,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            HEADER.to_string(),
            "tool=dsmfuse".to_string(),
            format!("version={}", self.version),
            format!("command={}", self.command),
            format!("cwd={}", self.cwd.display()),
            format!("threads={}", self.threads),
        ];
        lines.extend(self.args.iter().map(|a| format!("arg={a}")));
        lines.extend(self.seeds.iter().map(|(k, v)| format!("seed.{k}={v}")));
        lines.extend(self.inputs.iter().map(|p| format!("input={}", p.display())));
        lines.extend(
            self.outputs
                .iter()
                .map(|p| format!("output={}", p.display())),
        );
        lines.push(format!("started_unix={:.6}", self.started));
        lines.push(format!("finished_unix={:.6}", self.finished));
        lines.push(format!("exit_code={}", self.exit_code));
        lines.join("\n") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::Manifest(msg);
        let mut m = RunManifest {
            version: String::new(),
            command: String::new(),
            args: Vec::new(),
            cwd: PathBuf::new(),
            threads: 1,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: 0.0,
            finished: 0.0,
            exit_code: 0,
        };
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {} is not key=value", n + 1)))?;
            let bad_value = || bad(format!("line {}: malformed value `{value}`", n + 1));
            match key {
                "tool" => {}
                "version" => m.version = value.to_string(),
                "command" => m.command = value.to_string(),
                "cwd" => m.cwd = PathBuf::from(value),
                "threads" => m.threads = value.parse().map_err(|_| bad_value())?,
                "arg" => m.args.push(value.to_string()),
                "input" => m.inputs.push(PathBuf::from(value)),
                "output" => m.outputs.push(PathBuf::from(value)),
                "started_unix" => m.started = value.parse().map_err(|_| bad_value())?,
                "finished_unix" => m.finished = value.parse().map_err(|_| bad_value())?,
                "exit_code" => m.exit_code = value.parse().map_err(|_| bad_value())?,
                k if k.starts_with("seed.") => {
                    let seed = value.parse().map_err(|_| bad_value())?;
                    m.seeds.push((k["seed.".len()..].to_string(), seed));
                }
                other => return Err(bad(format!("unknown manifest key `{other}`"))),
            }
        }
        if m.command.is_empty() || m.args.first() != Some(&m.command) {
            return Err(bad("manifest does not record a command".into()));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }
}
