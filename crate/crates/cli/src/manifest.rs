use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Cli, CliError, CliResult, Command};

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub params: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Working directory the paths in `argv` are relative to.
    pub cwd: PathBuf,
    /// Full command line, replayed verbatim by `panosphere replay`.
    pub argv: Vec<String>,
}

impl RunManifest {
    pub fn new(cli: &Cli, argv: Vec<String>, params: serde_json::Value) -> Self {
        let (command, inputs) = match &cli.command {
            Command::SampleRoute(a) => ("sample-route", vec![a.scene.clone()]),
            Command::MakeMask(a) => ("make-mask", vec![a.route.clone()]),
            Command::Plucker(a) => ("plucker", vec![a.route.clone()]),
            Command::DemoForward(a) => {
                let mut v = vec![a.mask.clone(), a.field.clone()];
                v.extend(a.weights.clone());
                ("demo-forward", v)
            }
            Command::EvalPose(a) => ("eval-pose", vec![a.gt.clone(), a.est.clone()]),
            Command::EvalImage(a) => ("eval-image", vec![a.a.clone(), a.b.clone()]),
            Command::Replay(a) => ("replay", vec![a.path.clone()]),
        };
        Self {
            command: command.into(),
            inputs,
            params,
            seed: cli.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            cwd: std::env::current_dir().unwrap_or_default(),
            argv,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if m.argv.is_empty() {
            return Err(CliError::Data(format!("{}: empty argv", path.display())));
        }
        Ok(m)
    }
}
