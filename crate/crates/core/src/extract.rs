//! Feature extraction: raw bytes → nibble streams, and optionally
//! disassembler mnemonics → nibble streams.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("disassembler unavailable: {0}")]
    DisassemblerUnavailable(String),
    #[error("opcode alphabet maps `{0}` to {1}, outside 0..=15")]
    SymbolOutOfRange(String, u8),
    #[error("adapter template has no command")]
    EmptyTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NibbleOrigin {
    ByteSequence,
    Opcode,
}

/// Sequence of 4-bit symbols, one per hexadecimal character.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NibbleStream {
    pub symbols: Vec<u8>,
    pub origin: NibbleOrigin,
    pub source_id: Option<String>,
}

impl NibbleStream {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Pairs nibbles back into bytes. `None` for odd-length streams.
    pub fn to_bytes(&self) -> Option<Vec<u8>> {
        if self.symbols.len() % 2 != 0 {
            return None;
        }
        Some(
            self.symbols
                .chunks_exact(2)
                .map(|p| (p[0] << 4) | (p[1] & 0xF))
                .collect(),
        )
    }
}

/// High nibble first, as a byte is written in hex.
pub fn bytes_to_nibbles(data: &[u8]) -> NibbleStream {
    let mut symbols = vec![0u8; data.len() * 2];
    for (pair, &b) in symbols.chunks_exact_mut(2).zip(data) {
        pair[0] = b >> 4;
        pair[1] = b & 0x0F;
    }
    NibbleStream {
        symbols,
        origin: NibbleOrigin::ByteSequence,
        source_id: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeStream {
    pub mnemonics: Vec<String>,
    pub source_id: Option<String>,
}

/// External disassembler invocation.
///
/// `command` is an argv template in which `{file}` is replaced by the input
/// path. Each output line is split on tabs and the mnemonic is the first
/// whitespace token of column `mnemonic_column`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisassemblerAdapter {
    pub command: Vec<String>,
    pub mnemonic_column: usize,
}

impl Default for DisassemblerAdapter {
    /// GNU objdump: `address:\tbytes\tmnemonic operands`.
    fn default() -> Self {
        DisassemblerAdapter {
            command: vec!["objdump".into(), "-d".into(), "--no-show-raw-insn".into(), "{file}".into()],
            mnemonic_column: 1,
        }
    }
}

impl DisassemblerAdapter {
    fn argv(&self, path: &Path) -> Result<Vec<String>, ExtractError> {
        if self.command.is_empty() {
            return Err(ExtractError::EmptyTemplate);
        }
        let file = path.to_string_lossy();
        Ok(self
            .command
            .iter()
            .map(|a| a.replace("{file}", &file))
            .collect())
    }

    /// Pulls the mnemonic out of one output line.
    pub fn parse_line<'a>(&self, line: &'a str) -> Option<&'a str> {
        let col = line.split('\t').nth(self.mnemonic_column)?;
        let m = col.split_whitespace().next()?;
        let valid = m
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_');
        valid.then_some(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeExtraction {
    pub stream: OpcodeStream,
    /// Non-blank output lines that carried no mnemonic.
    pub skipped_lines: usize,
}

/// Runs the disassembler on `path` and collects the mnemonic column.
pub fn extract_opcodes(
    path: &Path,
    adapter: &DisassemblerAdapter,
) -> Result<OpcodeExtraction, ExtractError> {
    let argv = adapter.argv(path)?;
    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .output()
        .map_err(|e| ExtractError::DisassemblerUnavailable(format!("{}: {e}", argv[0])))?;
    if !output.status.success() {
        return Err(ExtractError::DisassemblerUnavailable(format!(
            "{} exited with {}: {}",
            argv[0],
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let text = String::from_utf8_lossy(&output.stdout);
    let mut mnemonics = Vec::new();
    let mut skipped_lines = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match adapter.parse_line(line) {
            Some(m) => mnemonics.push(m.to_owned()),
            None => skipped_lines += 1,
        }
    }
    if skipped_lines > 0 {
        log::debug!("{}: {skipped_lines} disassembly lines without a mnemonic", path.display());
    }
    Ok(OpcodeExtraction {
        stream: OpcodeStream {
            mnemonics,
            source_id: Some(path.display().to_string()),
        },
        skipped_lines,
    })
}

/// Symbol for mnemonics the alphabet does not know.
pub const OVERFLOW_SYMBOL: u8 = 15;

/// Mnemonic → nibble table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpcodeAlphabet {
    codes: HashMap<String, u8>,
}

impl OpcodeAlphabet {
    pub fn new(codes: HashMap<String, u8>) -> Result<Self, ExtractError> {
        if let Some((m, &v)) = codes.iter().find(|(_, &v)| v > 15) {
            return Err(ExtractError::SymbolOutOfRange(m.clone(), v));
        }
        Ok(OpcodeAlphabet { codes })
    }

    /// The 15 most frequent mnemonics get codes 0..=14 by descending count
    /// (ties broken lexicographically); everything else falls in bucket 15.
    pub fn from_corpus<'a>(streams: impl IntoIterator<Item = &'a OpcodeStream>) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for s in streams {
            for m in &s.mnemonics {
                *counts.entry(m.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let codes = ranked
            .into_iter()
            .take(OVERFLOW_SYMBOL as usize)
            .enumerate()
            .map(|(i, (m, _))| (m.to_owned(), i as u8))
            .collect();
        OpcodeAlphabet { codes }
    }

    pub fn symbol(&self, mnemonic: &str) -> u8 {
        self.codes.get(mnemonic).copied().unwrap_or(OVERFLOW_SYMBOL)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

pub fn opcodes_to_nibbles(ops: &OpcodeStream, alphabet: &OpcodeAlphabet) -> NibbleStream {
    NibbleStream {
        symbols: ops.mnemonics.iter().map(|m| alphabet.symbol(m)).collect(),
        origin: NibbleOrigin::Opcode,
        source_id: ops.source_id.clone(),
    }
}
