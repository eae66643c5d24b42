//! Training runs that write their artefacts to a directory:
//!
//! - `train_log.jsonl`: one [`TrainLogRecord`] per step (deterministic)
//! - `timing.jsonl`: `{"step", "wall_time"}` per step (varies between runs)
//! - `best.ckpt`, `final.ckpt`: checkpoints
//! - `config.toml`: the resolved configuration

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hilbyte_core::corpus::tmp_sibling;
use serde_json::json;

use crate::train::{train, LabeledInput, TrainConfig, TrainLogRecord, TrainOutcome};
use crate::GanError;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const BEST_FILE: &str = "best.ckpt";
pub const FINAL_FILE: &str = "final.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths { dir: dir.to_path_buf() }
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn timing(&self) -> PathBuf {
        self.dir.join(TIMING_FILE)
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join(BEST_FILE)
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join(FINAL_FILE)
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join(CONFIG_FILE)
    }
}

/// Trains and writes all artefacts under `dir`. The log is streamed, so an
/// aborted run still leaves its diagnostic record behind.
pub fn train_to_dir(
    cfg: &TrainConfig,
    train_split: &[LabeledInput],
    test_split: &[LabeledInput],
    dir: &Path,
) -> Result<TrainOutcome, GanError> {
    fs::create_dir_all(dir)?;
    let paths = RunPaths::new(dir);
    write_atomic(&paths.config(), cfg.to_toml().as_bytes())?;

    let mut log = BufWriter::new(File::create(paths.log())?);
    let mut timing = BufWriter::new(File::create(paths.timing())?);
    let mut io_err: Option<std::io::Error> = None;
    let result = train(cfg, train_split, test_split, |rec: &TrainLogRecord| {
        let line = serde_json::to_string(rec).expect("log record serialises");
        let t = json!({ "step": rec.step, "wall_time": rec.wall_time });
        let r = writeln!(log, "{line}").and_then(|_| writeln!(timing, "{t}"));
        if let (Err(e), None) = (r, &io_err) {
            io_err = Some(e);
        }
    });
    log.flush()?;
    timing.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let outcome = result?;
    outcome.best.save(&paths.best())?;
    outcome.final_checkpoint.save(&paths.final_checkpoint())?;
    Ok(outcome)
}

pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>, GanError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| GanError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GanError> {
    let tmp = tmp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
