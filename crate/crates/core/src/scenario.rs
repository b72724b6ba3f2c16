//! Line-oriented `key=value` scenario files.
//!
//! ```text
//! # comment
//! seed=7
//! page_count=4096
//! mode=vulnerable
//! bridge_offset=0x150
//! cc_offset=0xe90
//! cc=80000000428b3cb8e8c3d4ffff85c089
//! shellcode=<96 hex chars>
//! duplicate_rate=0.0
//! ```
//!
//! Unknown keys are rejected. `victim` may replace `cc` to give the whole
//! victim blob; when only `cc` is given it replaces the first 16 bytes of the
//! default victim code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::block::{Block, BLOCK_SIZE};
use crate::guest::{
    Shellcode, DEFAULT_BRIDGE_OFFSET, DEFAULT_CC_OFFSET, DEFAULT_PAGES, SHELLCODE_LEN,
    SSHD_AUTH_CODE,
};
use crate::memcrypt::Mode;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("`cc` and `victim` disagree on the first 16 bytes")]
    CcMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub page_count: u64,
    pub mode: Mode,
    pub bridge_offset: u64,
    pub cc_offset: u64,
    pub victim: Vec<u8>,
    pub shellcode: Shellcode,
    pub duplicate_rate: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            page_count: DEFAULT_PAGES,
            mode: Mode::Vulnerable,
            bridge_offset: DEFAULT_BRIDGE_OFFSET,
            cc_offset: DEFAULT_CC_OFFSET,
            victim: SSHD_AUTH_CODE.to_vec(),
            shellcode: Shellcode::default(),
            duplicate_rate: 0.0,
        }
    }
}

fn parse_u64(v: &str) -> Result<u64, String> {
    let v = v.replace('_', "");
    match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => v.parse(),
    }
    .map_err(|e| format!("bad integer `{v}`: {e}"))
}

fn parse_hex(v: &str) -> Result<Vec<u8>, String> {
    let compact: String = v.split_whitespace().collect();
    hex::decode(&compact).map_err(|e| format!("bad hex: {e}"))
}

impl Scenario {
    pub fn cc(&self) -> Block {
        Block::from_slice(&self.victim)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut s = Scenario::default();
        let mut cc: Option<Vec<u8>> = None;
        let mut victim: Option<Vec<u8>> = None;

        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ScenarioError::Parse { line: n + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let value = value.trim();
            match key.trim() {
                "seed" => s.seed = parse_u64(value).map_err(err)?,
                "page_count" => s.page_count = parse_u64(value).map_err(err)?,
                "mode" => s.mode = value.parse().map_err(err)?,
                "bridge_offset" => s.bridge_offset = parse_u64(value).map_err(err)?,
                "cc_offset" => s.cc_offset = parse_u64(value).map_err(err)?,
                "cc" => {
                    let bytes = parse_hex(value).map_err(err)?;
                    if bytes.len() != BLOCK_SIZE {
                        return Err(err(format!("cc must be 16 bytes, got {}", bytes.len())));
                    }
                    cc = Some(bytes);
                }
                "victim" => {
                    let bytes = parse_hex(value).map_err(err)?;
                    if bytes.len() < SHELLCODE_LEN {
                        return Err(err(format!(
                            "victim must be at least {SHELLCODE_LEN} bytes, got {}",
                            bytes.len()
                        )));
                    }
                    victim = Some(bytes);
                }
                "shellcode" => {
                    let bytes = parse_hex(value).map_err(err)?;
                    s.shellcode = Shellcode::from_slice(&bytes).ok_or_else(|| {
                        err(format!(
                            "shellcode must be {SHELLCODE_LEN} bytes, got {}",
                            bytes.len()
                        ))
                    })?;
                }
                "duplicate_rate" => {
                    s.duplicate_rate = value
                        .parse()
                        .map_err(|e| err(format!("bad rate `{value}`: {e}")))?;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }

        match (cc, victim) {
            (Some(cc), Some(v)) if cc[..] != v[..BLOCK_SIZE] => {
                return Err(ScenarioError::CcMismatch)
            }
            (_, Some(v)) => s.victim = v,
            (Some(cc), None) => s.victim[..BLOCK_SIZE].copy_from_slice(&cc),
            (None, None) => {}
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "page_count={}", self.page_count);
        let _ = writeln!(out, "mode={}", self.mode);
        let _ = writeln!(out, "bridge_offset={:#x}", self.bridge_offset);
        let _ = writeln!(out, "cc_offset={:#x}", self.cc_offset);
        let _ = writeln!(out, "victim={}", hex::encode(&self.victim));
        let _ = writeln!(out, "shellcode={}", hex::encode(self.shellcode.0));
        let _ = writeln!(out, "duplicate_rate={}", self.duplicate_rate);
        out
    }
}
