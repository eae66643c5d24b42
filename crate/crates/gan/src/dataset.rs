//! Raw samples: loading from manifests or the synthetic generator, and
//! encoding them into labelled model inputs.

use std::fs;

use hilbyte_core::corpus::{self, sha256_hex, ManifestEntry, ManifestRecord, SplitRatios};
use hilbyte_core::imgcode::{prepare_model_input, Encoding, Palette};
use hilbyte_core::synth::{generate_file, SynthSpec};
use hilbyte_core::{par, Label, Split};

use crate::train::LabeledInput;
use crate::GanError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSample {
    /// Content digest, used as the sample id.
    pub id: String,
    pub label: Label,
    pub split: Option<Split>,
    pub bytes: Vec<u8>,
}

/// Reads the files of `records` assigned to `split`, checking their digests.
pub fn load_split(records: &[ManifestRecord], split: Split) -> Result<Vec<RawSample>, GanError> {
    let chosen: Vec<&ManifestRecord> = records.iter().filter(|r| r.split == Some(split)).collect();
    par::map(&chosen, |r| -> Result<RawSample, GanError> {
        let bytes = fs::read(&r.path)?;
        if sha256_hex(&bytes) != r.sha256 {
            return Err(GanError::Data(format!("{} changed since it was ingested", r.path.display())));
        }
        Ok(RawSample { id: r.sha256.clone(), label: r.label, split: r.split, bytes })
    })
    .into_iter()
    .collect()
}

/// Generates a synthetic corpus in memory and splits it like a manifest.
pub fn synthetic_samples(spec: &SynthSpec, ratios: SplitRatios, split_seed: u64) -> Result<Vec<RawSample>, GanError> {
    let jobs: Vec<(Label, usize)> = (0..spec.n_benign)
        .map(|i| (Label::Benign, i))
        .chain((0..spec.n_anomalous).map(|i| (Label::Malicious, i)))
        .collect();
    let files = par::map(&jobs, |&(label, i)| generate_file(spec, label, i));
    let entries: Vec<ManifestEntry> = jobs
        .iter()
        .zip(&files)
        .map(|(&(label, i), data)| ManifestEntry {
            path: format!("synthetic/{label}/{i:05}").into(),
            sha256: sha256_hex(data),
            size_bytes: data.len() as u64,
            label,
            family: None,
        })
        .collect();
    let assignments = corpus::split_manifest(&entries, ratios, split_seed)?;
    let mut split_of = vec![None; entries.len()];
    for a in &assignments {
        split_of[a.entry_id] = Some(a.split);
    }
    Ok(entries
        .into_iter()
        .zip(files)
        .zip(split_of)
        .map(|((e, bytes), split)| RawSample { id: e.sha256, label: e.label, split, bytes })
        .collect())
}

pub fn select(samples: &[RawSample], split: Split) -> Vec<RawSample> {
    samples.iter().filter(|s| s.split == Some(split)).cloned().collect()
}

/// Encodes samples for a model of the given resolution, preserving order.
pub fn encode_samples(
    samples: &[RawSample],
    encoding: Encoding,
    palette: &Palette,
    resolution: usize,
) -> Result<Vec<LabeledInput>, GanError> {
    par::map(samples, |s| -> Result<LabeledInput, GanError> {
        let input = prepare_model_input(&s.bytes, encoding, palette, resolution)?;
        Ok(LabeledInput { id: s.id.clone(), label: s.label, input })
    })
    .into_iter()
    .collect()
}
