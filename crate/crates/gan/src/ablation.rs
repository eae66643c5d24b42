//! Encoding ablation: one model per image encoding on identical data, seeds
//! and hyperparameters, summarised as a table.

use std::fmt::Write as _;
use std::path::Path;

use hilbyte_core::imgcode::{Coloring, Encoding, Layout, Palette};
use hilbyte_core::Split;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_samples, select, RawSample};
use crate::run::{train_to_dir, write_atomic};
use crate::train::{train, TrainConfig};
use crate::GanError;

pub const REPORT_TSV: &str = "report.tsv";
pub const REPORT_JSONL: &str = "report.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub layout: Layout,
    pub coloring: Coloring,
    pub auc: Option<f64>,
    pub balacc: Option<f64>,
    pub threshold: Option<f64>,
    pub steps: u64,
    pub seed: u64,
    pub best_step: Option<u64>,
    pub status: RowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AblationRow {
    pub fn encoding(&self) -> Encoding {
        Encoding { layout: self.layout, coloring: self.coloring }
    }

    /// Directory name for this row's run artefacts.
    pub fn dir_name(encoding: Encoding) -> String {
        format!("{}-{}", encoding.layout, encoding.coloring)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"))
}

impl AblationReport {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Failed)
    }

    pub fn row(&self, encoding: Encoding) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.encoding() == encoding)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("layout\tcoloring\tauc\tbalacc\tthreshold\tsteps\tseed\tstatus\n");
        for r in &self.rows {
            let status = match r.status {
                RowStatus::Ok => "ok",
                RowStatus::Failed => "failed",
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.layout,
                r.coloring,
                opt(r.auc),
                opt(r.balacc),
                opt(r.threshold),
                r.steps,
                r.seed,
                status
            );
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serialises") + "\n")
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), GanError> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(REPORT_TSV), self.to_tsv().as_bytes())?;
        write_atomic(&dir.join(REPORT_JSONL), self.to_jsonl().as_bytes())
    }
}

/// Trains one model per encoding. Every row uses `cfg.seed`, so rows differ
/// only in how the bytes were turned into images. With `out_dir`, each row's
/// run artefacts go to `out_dir/<layout>-<coloring>/` and the report to
/// `out_dir/report.{tsv,jsonl}`. A failing row is recorded and the others
/// still run.
pub fn run_ablation(
    samples: &[RawSample],
    encodings: &[Encoding],
    cfg: &TrainConfig,
    palette: &Palette,
    out_dir: Option<&Path>,
) -> Result<AblationReport, GanError> {
    let train_raw = select(samples, Split::Train);
    let test_raw = select(samples, Split::Test);
    let mut rows = Vec::with_capacity(encodings.len());
    for &encoding in encodings {
        let row_cfg = TrainConfig { layout: encoding.layout, coloring: encoding.coloring, ..cfg.clone() };
        info!("ablation row {encoding}");
        let result = (|| {
            let tr = encode_samples(&train_raw, encoding, palette, row_cfg.resolution)?;
            let te = encode_samples(&test_raw, encoding, palette, row_cfg.resolution)?;
            match out_dir {
                Some(d) => train_to_dir(&row_cfg, &tr, &te, &d.join(AblationRow::dir_name(encoding))),
                None => train(&row_cfg, &tr, &te, |_| {}),
            }
        })();
        let mut row = AblationRow {
            layout: encoding.layout,
            coloring: encoding.coloring,
            auc: None,
            balacc: None,
            threshold: None,
            steps: row_cfg.total_steps,
            seed: row_cfg.seed,
            best_step: None,
            status: RowStatus::Ok,
            error: None,
        };
        match result {
            Ok(outcome) => {
                let m = outcome.best.metrics;
                row.auc = m.map(|m| m.auc);
                row.balacc = m.map(|m| m.balacc);
                row.threshold = m.map(|m| m.threshold);
                row.best_step = Some(outcome.best.step);
            }
            Err(e) => {
                warn!("ablation row {encoding} failed: {e}");
                row.status = RowStatus::Failed;
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    let report = AblationReport { rows };
    if let Some(d) = out_dir {
        report.write(d)?;
    }
    Ok(report)
}
