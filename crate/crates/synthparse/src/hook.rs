//! Trainer hook: an external executable that trains a parser on a dataset.
//!
//! Invocation: `<command> <args>... --train <jsonl> --out <model-ref>`. A
//! non-zero exit status is a failure. The model reference is the first
//! non-empty line the hook prints, or the `--out` path if it prints
//! nothing.

use std::path::{Path, PathBuf};
use std::process::Command;

use synthparse_core::paraphrase::{GrammarFilter, Round, TrainError, Trained, Trainer};
use synthparse_core::Dataset;

use crate::io::write_dataset;

pub struct HookTrainer {
    pub command: PathBuf,
    pub args: Vec<String>,
    /// Where training files and model outputs go.
    pub work_dir: PathBuf,
    /// Used as the filter parser after each round; there is no wire
    /// protocol for querying the trained model.
    pub filter: GrammarFilter,
}

impl HookTrainer {
    fn paths(&self, round: Round) -> (PathBuf, PathBuf) {
        let stem = format!("stage{}-iter{}", round.stage, round.iteration);
        (
            self.work_dir.join(format!("train-{stem}.jsonl")),
            self.work_dir.join(format!("model-{stem}")),
        )
    }
}

pub fn run_hook(command: &Path, args: &[String], train: &Path, out: &Path) -> Result<String, TrainError> {
    let output = Command::new(command)
        .args(args)
        .arg("--train")
        .arg(train)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| TrainError(format!("could not run {}: {e}", command.display())))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(TrainError(format!(
            "{} exited with {}: {}",
            command.display(),
            output.status,
            stderr.trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    Ok(stdout
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map_or_else(|| out.display().to_string(), str::to_string))
}

impl Trainer for HookTrainer {
    fn train(&mut self, data: &Dataset, round: Round) -> Result<Trained, TrainError> {
        let (train, out) = self.paths(round);
        write_dataset(&train, data).map_err(|e| TrainError(e.to_string()))?;
        let model_ref = run_hook(&self.command, &self.args, &train, &out)?;
        Ok(Trained {
            parser: Box::new(self.filter.clone()),
            model_ref: Some(model_ref),
        })
    }
}
