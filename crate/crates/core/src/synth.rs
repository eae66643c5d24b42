//! Synthetic benign/anomalous file families.
//!
//! Both families are sequences of fixed-size records: a 16-byte header
//! (magic, record index, payload length) followed by a payload. Benign
//! payloads repeat a short motif (period 16..=64 bytes) over a four-byte
//! alphabet whose nibbles all lie in `0..=3`, so they are highly regular and
//! use only the first four palette colours. Anomalous files are
//! built the same way and then have one to three runs of records whose
//! payloads are overwritten with uniform random bytes.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, CorpusError, Label, ManifestEntry, ManifestRecord};
use crate::par;

pub const RECORD_MAGIC: &[u8; 8] = b"HBYTREC\x01";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_benign: usize,
    pub n_anomalous: usize,
    pub seed: u64,
    pub min_records: usize,
    pub max_records: usize,
    pub record_len: usize,
    pub min_period: usize,
    pub max_period: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_benign: 400,
            n_anomalous: 400,
            seed: 7,
            min_records: 64,
            max_records: 128,
            record_len: 256,
            min_period: 16,
            max_period: 64,
        }
    }
}

impl SynthSpec {
    pub fn new(n_benign: usize, n_anomalous: usize, seed: u64) -> Self {
        SynthSpec {
            n_benign,
            n_anomalous,
            seed,
            ..Default::default()
        }
    }
}

// splitmix64 finaliser, used to derive independent per-file seeds
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn file_rng(spec: &SynthSpec, label: Label, index: usize) -> ChaCha8Rng {
    let class = match label {
        Label::Benign => 0x5EED_0000u64,
        Label::Malicious => 0xBAD0_0000u64,
    };
    ChaCha8Rng::seed_from_u64(mix(spec.seed ^ mix(class ^ mix(index as u64))))
}

/// Generates file `index` of the given family. Pure in `(spec, label, index)`.
pub fn generate_file(spec: &SynthSpec, label: Label, index: usize) -> Vec<u8> {
    let mut rng = file_rng(spec, label, index);
    let n_records = rng.gen_range(spec.min_records..=spec.max_records);
    let payload_len = spec.record_len.saturating_sub(HEADER_LEN).max(1);
    let period = rng.gen_range(spec.min_period..=spec.max_period);
    let alphabet: [u8; 4] = std::array::from_fn(|_| (rng.gen_range(0..4u8) << 4) | rng.gen_range(0..4u8));
    let motif: Vec<u8> = (0..period)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
        .collect();

    let mut out = Vec::with_capacity(n_records * (HEADER_LEN + payload_len));
    let mut phase = 0usize;
    for r in 0..n_records {
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(payload_len as u32).to_le_bytes());
        for _ in 0..payload_len {
            out.push(motif[phase % period]);
            phase += 1;
        }
    }

    if label.is_malicious() {
        let fraction = rng.gen_range(0.25..=0.5);
        let segments = rng.gen_range(1..=3usize);
        let per_segment = ((n_records as f64 * fraction) / segments as f64).ceil().max(1.0) as usize;
        for _ in 0..segments {
            let start = rng.gen_range(0..n_records.saturating_sub(per_segment).max(1));
            for r in start..(start + per_segment).min(n_records) {
                let off = r * (HEADER_LEN + payload_len) + HEADER_LEN;
                rng.fill(&mut out[off..off + payload_len]);
            }
        }
    }
    out
}

fn family_name(label: Label) -> &'static str {
    match label {
        Label::Benign => "synthetic-benign",
        Label::Malicious => "synthetic-anomalous",
    }
}

/// Writes the corpus under `out_dir/{benign,anomalous}/` plus
/// `out_dir/manifest.jsonl`, and returns the manifest records.
pub fn write_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ManifestRecord>, CorpusError> {
    let jobs: Vec<(Label, usize)> = (0..spec.n_benign)
        .map(|i| (Label::Benign, i))
        .chain((0..spec.n_anomalous).map(|i| (Label::Malicious, i)))
        .collect();
    for sub in ["benign", "anomalous"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let written = par::map(&jobs, |&(label, i)| -> io::Result<ManifestEntry> {
        let data = generate_file(spec, label, i);
        let path = match label {
            Label::Benign => out_dir.join("benign").join(format!("b_{i:05}.bin")),
            Label::Malicious => out_dir.join("anomalous").join(format!("a_{i:05}.bin")),
        };
        let tmp = corpus::tmp_sibling(&path);
        fs::write(&tmp, &data)?;
        fs::rename(&tmp, &path)?;
        Ok(ManifestEntry {
            path,
            sha256: corpus::sha256_hex(&data),
            size_bytes: data.len() as u64,
            label,
            family: Some(family_name(label).to_owned()),
        })
    });
    let records: Vec<ManifestRecord> = written
        .into_iter()
        .map(|r| r.map(ManifestRecord::from))
        .collect::<Result<_, _>>()?;
    corpus::write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn entropy(data: &[u8]) -> f64 {
        let mut h = [0usize; 256];
        data.iter().for_each(|&b| h[b as usize] += 1);
        let n = data.len() as f64;
        h.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    }

    #[test]
    fn deterministic_per_index() {
        let spec = SynthSpec::default();
        assert_eq!(
            generate_file(&spec, Label::Benign, 3),
            generate_file(&spec, Label::Benign, 3)
        );
        assert_ne!(
            generate_file(&spec, Label::Benign, 3),
            generate_file(&spec, Label::Benign, 4)
        );
        let other = SynthSpec { seed: 8, ..spec.clone() };
        assert_ne!(
            generate_file(&spec, Label::Malicious, 0),
            generate_file(&other, Label::Malicious, 0)
        );
    }

    #[test]
    fn families_share_structure_differ_in_entropy() {
        let spec = SynthSpec::default();
        for i in 0..10 {
            let b = generate_file(&spec, Label::Benign, i);
            let a = generate_file(&spec, Label::Malicious, i);
            for f in [&b, &a] {
                assert_eq!(f.len() % spec.record_len, 0);
                assert!(f.chunks(spec.record_len).all(|r| &r[..8] == RECORD_MAGIC));
                // 16..32 KiB keeps every file on a 256x256 Hilbert grid
                assert!((64 * 256..=128 * 256).contains(&f.len()));
            }
            assert!(entropy(&b) < 2.5, "benign entropy {}", entropy(&b));
            assert!(entropy(&a) > entropy(&b) + 1.0);
        }
    }

    #[test]
    fn corpus_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(5, 4, 7);
        let recs = write_corpus(&spec, dir.path()).unwrap();
        assert_eq!(recs.len(), 9);
        assert_eq!(recs.iter().filter(|r| r.label == Label::Malicious).count(), 4);
        let again = write_corpus(&spec, dir.path()).unwrap();
        let shas = |r: &[ManifestRecord]| r.iter().map(|x| x.sha256.clone()).collect::<HashSet<_>>();
        assert_eq!(shas(&recs), shas(&again));
        assert_eq!(corpus::read_manifest(&dir.path().join("manifest.jsonl")).unwrap(), recs);
        assert!(corpus::verify_manifest(&recs.iter().map(|r| r.entry()).collect::<Vec<_>>()).is_empty());

        let empty = tempfile::tempdir().unwrap();
        assert!(write_corpus(&SynthSpec::new(0, 0, 7), empty.path()).unwrap().is_empty());
    }
}
