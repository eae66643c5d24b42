//! Content-addressed corpus manifests and deterministic one-class splits.
//!
//! A manifest is a JSON-lines file with one record per sample and a fixed
//! field order: `path, sha256, size_bytes, label, family, split`, optionally
//! followed by an `image` sidecar describing an archived byteplot.

use std::collections::HashSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::imgcode::ArchiveMeta;
use crate::par;

pub const MB: u64 = 1024 * 1024;
pub const DEFAULT_MIN_SIZE: u64 = 2 * MB;
pub const DEFAULT_MAX_SIZE: u64 = 50 * MB;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist or is not a directory")]
    RootMissing(PathBuf),
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("train ratio is positive but the manifest has no benign entries")]
    NoBenign,
    #[error("one-class violation: malicious entry {0} assigned to train")]
    OneClassViolation(String),
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        self == Label::Malicious
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "malicious" => Ok(Label::Malicious),
            _ => Err(format!("unknown label `{s}` (expected benign|malicious)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            _ => Err(format!("unknown split `{s}` (expected train|test|validation)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    /// Lower-case hex digest of the file content at ingest time.
    pub sha256: String,
    pub size_bytes: u64,
    pub label: Label,
    pub family: Option<String>,
}

/// One manifest line. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub size_bytes: u64,
    pub label: Label,
    pub family: Option<String>,
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ArchiveMeta>,
}

impl ManifestRecord {
    pub fn entry(&self) -> ManifestEntry {
        ManifestEntry {
            path: self.path.clone(),
            sha256: self.sha256.clone(),
            size_bytes: self.size_bytes,
            label: self.label,
            family: self.family.clone(),
        }
    }
}

impl From<ManifestEntry> for ManifestRecord {
    fn from(e: ManifestEntry) -> Self {
        ManifestRecord {
            path: e.path,
            sha256: e.sha256,
            size_bytes: e.size_bytes,
            label: e.label,
            family: e.family,
            split: None,
            image: None,
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes the manifest atomically (temp file in the same directory, then rename).
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), CorpusError> {
    let tmp = tmp_sibling(path);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// `dir/.name.tmp` next to `path`.
pub fn tmp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Streaming SHA-256 of a file plus its length.
pub fn hash_file(path: &Path) -> io::Result<(String, u64)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let n = io::copy(&mut f, &mut h)?;
    Ok((hex::encode(h.finalize()), n))
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestWarning {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub entries: Vec<ManifestEntry>,
    pub warnings: Vec<IngestWarning>,
    /// Paths dropped because an earlier path had the same digest.
    pub duplicates: Vec<PathBuf>,
}

/// Walks `root` and returns one entry per regular file whose size lies in
/// `[min_size, max_size]`, sorted by path, deduplicated by digest.
pub fn ingest_dir(
    root: &Path,
    label: Label,
    family: Option<&str>,
    min_size: u64,
    max_size: u64,
) -> Result<IngestReport, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::RootMissing(root.to_path_buf()));
    }
    let mut report = IngestReport::default();
    let mut candidates = Vec::new();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = match item {
            Ok(i) => i,
            Err(e) => {
                report.warnings.push(IngestWarning {
                    path: e.path().map(Path::to_path_buf).unwrap_or_default(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        if !item.file_type().is_file() {
            continue;
        }
        match item.metadata() {
            Ok(m) if m.len() > 0 && m.len() >= min_size && m.len() <= max_size => {
                candidates.push(item.into_path())
            }
            Ok(_) => {}
            Err(e) => report.warnings.push(IngestWarning {
                path: item.into_path(),
                message: e.to_string(),
            }),
        }
    }
    candidates.sort();

    let hashed = par::map(&candidates, |p| hash_file(p));
    let mut seen = HashSet::new();
    for (path, res) in candidates.into_iter().zip(hashed) {
        match res {
            Ok((sha256, size_bytes)) => {
                if size_bytes == 0 || size_bytes < min_size || size_bytes > max_size {
                    // changed between stat and read
                    report.warnings.push(IngestWarning {
                        path,
                        message: format!("size changed during ingest ({size_bytes} bytes)"),
                    });
                } else if seen.insert(sha256.clone()) {
                    report.entries.push(ManifestEntry {
                        path,
                        sha256,
                        size_bytes,
                        label,
                        family: family.map(str::to_owned),
                    });
                } else {
                    report.duplicates.push(path);
                }
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.warnings.push(IngestWarning {
                    path,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            test: 0.2,
            validation: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, test: f64, validation: f64) -> Result<Self, CorpusError> {
        let r = SplitRatios {
            train,
            test,
            validation,
        };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let v = [self.train, self.test, self.validation];
        let ok = v.iter().all(|x| x.is_finite() && *x >= 0.0)
            && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::BadRatios(v))
        }
    }
}

impl FromStr for SplitRatios {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c).map_err(|e| e.to_string()),
            _ => Err(format!("expected three comma-separated ratios, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitAssignment {
    pub entry_id: usize,
    pub split: Split,
    pub seed: u64,
}

/// Seeded one-class split.
///
/// Benign entries are shuffled and cut by the ratios (train and test sizes
/// rounded down, validation takes the remainder). Malicious entries never
/// enter train: they are shuffled and halved between test (rounded down)
/// and validation. Entries are put in digest order before shuffling, so the
/// result does not depend on input order. Output is ordered by `entry_id`.
pub fn split_manifest(
    entries: &[ManifestEntry],
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<SplitAssignment>, CorpusError> {
    ratios.validate()?;
    let canonical = |label: Label| {
        let mut ids: Vec<usize> = (0..entries.len())
            .filter(|&i| entries[i].label == label)
            .collect();
        ids.sort_by(|&a, &b| {
            (&entries[a].sha256, &entries[a].path).cmp(&(&entries[b].sha256, &entries[b].path))
        });
        ids
    };
    let mut benign = canonical(Label::Benign);
    let mut malicious = canonical(Label::Malicious);
    if ratios.train > 0.0 && benign.is_empty() {
        return Err(CorpusError::NoBenign);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    benign.shuffle(&mut rng);
    malicious.shuffle(&mut rng);

    let n = benign.len() as f64;
    let n_train = ((n * ratios.train) + 1e-9).floor() as usize;
    let n_test = (((n * ratios.test) + 1e-9).floor() as usize).min(benign.len() - n_train);

    let mut out = Vec::with_capacity(entries.len());
    for (k, &id) in benign.iter().enumerate() {
        let split = if k < n_train {
            Split::Train
        } else if k < n_train + n_test {
            Split::Test
        } else {
            Split::Validation
        };
        out.push(SplitAssignment { entry_id: id, split, seed });
    }
    let half = malicious.len() / 2;
    for (k, &id) in malicious.iter().enumerate() {
        let split = if k < half { Split::Test } else { Split::Validation };
        out.push(SplitAssignment { entry_id: id, split, seed });
    }
    out.sort_by_key(|a| a.entry_id);
    check_one_class(entries, &out)?;
    Ok(out)
}

/// Fails if any malicious entry is assigned to train.
pub fn check_one_class(
    entries: &[ManifestEntry],
    assignments: &[SplitAssignment],
) -> Result<(), CorpusError> {
    for a in assignments {
        let e = &entries[a.entry_id];
        if a.split == Split::Train && e.label.is_malicious() {
            return Err(CorpusError::OneClassViolation(e.path.display().to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    Missing,
    SizeChanged { expected: u64, actual: u64 },
    DigestChanged { actual: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyIssue {
    pub entry_id: usize,
    pub path: PathBuf,
    pub kind: IssueKind,
}

impl fmt::Display for VerifyIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::Missing => write!(f, "{}: missing", self.path.display()),
            IssueKind::SizeChanged { expected, actual } => write!(
                f,
                "{}: size changed ({expected} -> {actual} bytes)",
                self.path.display()
            ),
            IssueKind::DigestChanged { actual } => {
                write!(f, "{}: digest changed (now {actual})", self.path.display())
            }
        }
    }
}

/// Re-hashes every entry; an empty result means the corpus is intact.
pub fn verify_manifest(entries: &[ManifestEntry]) -> Vec<VerifyIssue> {
    let checked = par::map_range(entries.len(), |i| {
        let e = &entries[i];
        let kind = match hash_file(&e.path) {
            Err(err) if err.kind() == io::ErrorKind::NotFound => Some(IssueKind::Missing),
            Err(_) => Some(IssueKind::Missing),
            Ok((_, size)) if size != e.size_bytes => Some(IssueKind::SizeChanged {
                expected: e.size_bytes,
                actual: size,
            }),
            Ok((sha, _)) if sha != e.sha256 => Some(IssueKind::DigestChanged { actual: sha }),
            Ok(_) => None,
        };
        kind.map(|kind| VerifyIssue {
            entry_id: i,
            path: e.path.clone(),
            kind,
        })
    });
    checked.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn write(dir: &Path, name: &str, data: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, data).unwrap();
        p
    }

    fn fake_entries(n_benign: usize, n_mal: usize) -> Vec<ManifestEntry> {
        (0..n_benign + n_mal)
            .map(|i| ManifestEntry {
                path: PathBuf::from(format!("f{i:03}")),
                sha256: sha256_hex(&(i as u64).to_le_bytes()),
                size_bytes: 1,
                label: if i < n_benign {
                    Label::Benign
                } else {
                    Label::Malicious
                },
                family: None,
            })
            .collect()
    }

    fn counts(a: &[SplitAssignment]) -> HashMap<Split, usize> {
        let mut m = HashMap::new();
        for x in a {
            *m.entry(x.split).or_default() += 1;
        }
        m
    }

    #[test]
    fn size_window_filters() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "small", &vec![1u8; 1024]);
        write(dir.path(), "mid", &vec![2u8; 10 * 1024]);
        write(dir.path(), "big", &vec![3u8; 60 * 1024]);
        // scaled-down version of the 2 MB .. 50 MB window
        let r = ingest_dir(dir.path(), Label::Benign, None, 2 * 1024, 50 * 1024).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert!(r.entries[0].path.ends_with("mid"));
        assert_eq!(r.entries[0].size_bytes, 10 * 1024);
        assert_eq!(r.entries[0].sha256, sha256_hex(&vec![2u8; 10 * 1024]));
    }

    #[test]
    fn empty_dir_and_missing_root() {
        let dir = tempfile::tempdir().unwrap();
        let r = ingest_dir(dir.path(), Label::Benign, None, 0, u64::MAX).unwrap();
        assert!(r.entries.is_empty());
        assert!(matches!(
            ingest_dir(&dir.path().join("nope"), Label::Benign, None, 0, 1),
            Err(CorpusError::RootMissing(_))
        ));
    }

    #[test]
    fn duplicates_keep_first_path() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "b", b"same bytes");
        write(dir.path(), "a", b"same bytes");
        fs::create_dir(dir.path().join("sub")).unwrap();
        write(&dir.path().join("sub"), "c", b"other");
        let r = ingest_dir(dir.path(), Label::Malicious, Some("fam"), 0, u64::MAX).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert!(r.entries[0].path.ends_with("a"));
        assert_eq!(r.duplicates.len(), 1);
        assert_eq!(r.entries[0].family.as_deref(), Some("fam"));
    }

    #[test]
    fn ten_benign_six_two_two() {
        let e = fake_entries(10, 0);
        let a = split_manifest(&e, SplitRatios::default(), 42).unwrap();
        let c = counts(&a);
        assert_eq!(c[&Split::Train], 6);
        assert_eq!(c[&Split::Test], 2);
        assert_eq!(c[&Split::Validation], 2);
        assert!(a.iter().all(|x| x.seed == 42));
    }

    #[test]
    fn malicious_halved_never_train() {
        let e = fake_entries(7, 5);
        let a = split_manifest(&e, SplitRatios::default(), 1).unwrap();
        assert_eq!(a.len(), 12);
        let mal: Vec<_> = a.iter().filter(|x| x.entry_id >= 7).collect();
        assert!(mal.iter().all(|x| x.split != Split::Train));
        assert_eq!(mal.iter().filter(|x| x.split == Split::Test).count(), 2);
        assert_eq!(mal.iter().filter(|x| x.split == Split::Validation).count(), 3);
    }

    #[test]
    fn seeds_change_permutation_not_sizes() {
        let e = fake_entries(50, 20);
        let a1 = split_manifest(&e, SplitRatios::default(), 1).unwrap();
        let a2 = split_manifest(&e, SplitRatios::default(), 2).unwrap();
        assert_eq!(counts(&a1), counts(&a2));
        let s1: Vec<_> = a1.iter().map(|x| x.split).collect();
        let s2: Vec<_> = a2.iter().map(|x| x.split).collect();
        assert_ne!(s1, s2);
        let again: Vec<_> = split_manifest(&e, SplitRatios::default(), 1)
            .unwrap()
            .iter()
            .map(|x| x.split)
            .collect();
        assert_eq!(s1, again);
    }

    #[test]
    fn input_order_does_not_matter() {
        let e = fake_entries(30, 10);
        let mut rev = e.clone();
        rev.reverse();
        let a = split_manifest(&e, SplitRatios::default(), 9).unwrap();
        let b = split_manifest(&rev, SplitRatios::default(), 9).unwrap();
        let by_sha = |entries: &[ManifestEntry], asg: &[SplitAssignment]| {
            let mut v: Vec<_> = asg
                .iter()
                .map(|x| (entries[x.entry_id].sha256.clone(), x.split))
                .collect();
            v.sort();
            v
        };
        assert_eq!(by_sha(&e, &a), by_sha(&rev, &b));
    }

    #[test]
    fn ratio_and_class_errors() {
        let e = fake_entries(0, 4);
        assert!(matches!(
            split_manifest(&e, SplitRatios::default(), 0),
            Err(CorpusError::NoBenign)
        ));
        assert!(SplitRatios::new(0.5, 0.2, 0.2).is_err());
        assert!("0.6,0.2,0.2".parse::<SplitRatios>().is_ok());
        let bad = [SplitAssignment {
            entry_id: 0,
            split: Split::Train,
            seed: 0,
        }];
        assert!(matches!(
            check_one_class(&e, &bad),
            Err(CorpusError::OneClassViolation(_))
        ));
    }

    #[test]
    fn verify_reports_changes() {
        let dir = tempfile::tempdir().unwrap();
        for (n, d) in [("a", &b"aaaa"[..]), ("b", b"bbbb"), ("c", b"cccc"), ("d", b"dddd")] {
            write(dir.path(), n, d);
        }
        let r = ingest_dir(dir.path(), Label::Benign, None, 0, u64::MAX).unwrap();
        assert!(verify_manifest(&r.entries).is_empty());

        write(dir.path(), "b", b"bb");
        fs::remove_file(dir.path().join("c")).unwrap();
        write(dir.path(), "d", b"DDDD");
        let issues = verify_manifest(&r.entries);
        assert_eq!(issues.len(), 3);
        assert_eq!(issues[0].kind, IssueKind::SizeChanged { expected: 4, actual: 2 });
        assert_eq!(issues[1].kind, IssueKind::Missing);
        assert!(matches!(issues[2].kind, IssueKind::DigestChanged { .. }));
    }

    #[test]
    fn manifest_roundtrip_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec: ManifestRecord = fake_entries(1, 0).remove(0).into();
        rec.split = Some(Split::Test);
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &[rec.clone()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let keys = ["\"path\"", "\"sha256\"", "\"size_bytes\"", "\"label\"", "\"family\"", "\"split\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(read_manifest(&p).unwrap(), vec![rec]);
    }
}
