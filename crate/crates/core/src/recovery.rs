//! Recovering the tweak table through the two memory views.
//!
//! The procedure has two steps. First, probing one address with a counter
//! sequence shows that the cipher is deterministic per address and that its
//! output looks random, i.e. an ECB-like construction rather than a stream
//! mode. Second, writing one ciphertext to many addresses and reading the
//! plaintexts back yields equations `mᵢ ⊕ m₀ = T(pᵢ ⊕ p₀)`; Gaussian
//! elimination over F₂ solves them for t₄…t₃₃.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::ops::Range;

use rand::Rng;
use thiserror::Error;

use crate::block::{Block, BLOCK_SIZE};
use crate::gf2::{Coeffs, Gf2Error, Gf2System};
use crate::memcrypt::{DualViewMemory, MemError};
use crate::randomness::{Battery, ALPHA};
use crate::tweak::{PhysAddr, TweakTable, ADDRESS_LIMIT};

/// Minimum probe length for a meaningful randomness verdict.
pub const MIN_PROBE_BLOCKS: usize = 128;
/// Default number of addresses sampled for elimination.
pub const DEFAULT_SAMPLES: usize = 64;
/// Ciphertext written to every sampled address.
pub const PROBE_CIPHERTEXT: Block = Block::ZERO;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("probe of {0} blocks is shorter than the {MIN_PROBE_BLOCKS}-block minimum")]
    ProbeTooShort(usize),
    #[error("sample address {0} is not block aligned")]
    Unaligned(PhysAddr),
    #[error("sample address {0} appears more than once")]
    DuplicateAddress(PhysAddr),
    #[error("no sample addresses given")]
    NoAddresses,
    #[error("need at least 2 samples, have {0}")]
    TooFewSamples(usize),
    #[error("ciphertext at {addr} reads back as {found}, expected {expected}")]
    CipherMismatch {
        addr: PhysAddr,
        expected: Block,
        found: Block,
    },
    #[error("cannot draw {wanted} distinct block addresses from a range of {available}")]
    RangeTooSmall { wanted: usize, available: u64 },
    #[error(transparent)]
    Memory(#[from] MemError),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

/// Writes counter plaintexts `0, 1, …, count−1` at `p` and returns each ciphertext.
pub fn probe_same_address<M: DualViewMemory>(
    mem: &mut M,
    p: PhysAddr,
    count: usize,
) -> Result<Vec<Block>, RecoveryError> {
    if count < MIN_PROBE_BLOCKS {
        return Err(RecoveryError::ProbeTooShort(count));
    }
    (0..count as u128)
        .map(|i| {
            mem.write_plain_block(p, Block::from_counter(i))?;
            Ok(mem.read_cipher_block(p)?)
        })
        .collect()
}

/// Whether rewriting the same plaintext at one address repeats the ciphertext.
pub fn is_deterministic<M: DualViewMemory>(
    mem: &mut M,
    p: PhysAddr,
) -> Result<bool, RecoveryError> {
    let m = Block::splat_word(*b"prob");
    mem.write_plain_block(p, m)?;
    let first = mem.read_cipher_block(p)?;
    mem.write_plain_block(p, m)?;
    Ok(mem.read_cipher_block(p)? == first)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeVerdict {
    /// Deterministic per address with random-looking output.
    EcbLike,
    /// Same plaintext, same address, different ciphertext: a stream/counter mode.
    CounterLike,
    /// Deterministic but the output stream is visibly structured.
    NonRandom,
}

impl fmt::Display for ModeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeVerdict::EcbLike => "ecb-like",
            ModeVerdict::CounterLike => "counter-like",
            ModeVerdict::NonRandom => "non-random",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub address: PhysAddr,
    pub blocks: usize,
    pub deterministic: bool,
    pub battery: Battery,
    pub verdict: ModeVerdict,
}

impl ProbeReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "probe_address={}", self.address);
        let _ = writeln!(s, "probe_blocks={}", self.blocks);
        let _ = writeln!(s, "probe_bits={}", self.battery.bits);
        let _ = writeln!(s, "deterministic={}", self.deterministic);
        for r in &self.battery.results {
            let _ = writeln!(s, "p_{}={:.6}", r.name.replace('-', "_"), r.p_value);
            let _ = writeln!(s, "pass_{}={}", r.name.replace('-', "_"), r.passed(ALPHA));
        }
        let _ = writeln!(s, "mode_verdict={}", self.verdict);
        s
    }
}

/// Probes `p` and classifies the mode of operation.
pub fn probe_mode<M: DualViewMemory>(
    mem: &mut M,
    p: PhysAddr,
    count: usize,
) -> Result<ProbeReport, RecoveryError> {
    let blocks = probe_same_address(mem, p, count)?;
    let bytes: Vec<u8> = blocks.iter().flat_map(|b| b.0).collect();
    let battery = Battery::run(&bytes);
    let deterministic = is_deterministic(mem, p)?;
    let verdict = match (deterministic, battery.passed(ALPHA)) {
        (false, _) => ModeVerdict::CounterLike,
        (true, true) => ModeVerdict::EcbLike,
        (true, false) => ModeVerdict::NonRandom,
    };
    Ok(ProbeReport {
        address: p,
        blocks: count,
        deterministic,
        battery,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub addr: PhysAddr,
    pub plaintext: Block,
}

/// Plaintexts observed at distinct addresses that all hold one ciphertext.
#[derive(Debug, Clone)]
pub struct SampleSet {
    cipher: Block,
    reference: Sample,
    others: Vec<Sample>,
}

impl SampleSet {
    pub fn cipher(&self) -> Block {
        self.cipher
    }

    pub fn reference(&self) -> Sample {
        self.reference
    }

    /// Samples other than the reference.
    pub fn others(&self) -> &[Sample] {
        &self.others
    }

    pub fn len(&self) -> usize {
        1 + self.others.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        std::iter::once(&self.reference).chain(self.others.iter())
    }

    /// `(pᵢ ⊕ p₀, mᵢ ⊕ m₀)` for every non-reference sample.
    pub fn differences(&self) -> impl Iterator<Item = (PhysAddr, Block)> + '_ {
        let r = self.reference;
        self.others
            .iter()
            .map(move |s| (s.addr.xor(r.addr), s.plaintext ^ r.plaintext))
    }

    /// Adds more samples sharing the same ciphertext.
    pub fn extend(&mut self, other: SampleSet) -> Result<(), RecoveryError> {
        let mut seen: HashSet<PhysAddr> = self.iter().map(|s| s.addr).collect();
        for s in other.iter() {
            if !seen.insert(s.addr) {
                return Err(RecoveryError::DuplicateAddress(s.addr));
            }
        }
        if other.cipher != self.cipher {
            return Err(RecoveryError::CipherMismatch {
                addr: other.reference.addr,
                expected: self.cipher,
                found: other.cipher,
            });
        }
        self.others.extend(other.iter().copied());
        Ok(())
    }
}

/// Writes ciphertext `c` at every address and reads the plaintexts back.
///
/// The first address becomes the elimination reference.
pub fn collect_equal_cipher_samples<M: DualViewMemory>(
    mem: &mut M,
    addrs: &[PhysAddr],
    c: Block,
) -> Result<SampleSet, RecoveryError> {
    let mut seen = HashSet::with_capacity(addrs.len());
    for &a in addrs {
        if !a.is_block_aligned() {
            return Err(RecoveryError::Unaligned(a));
        }
        if !seen.insert(a) {
            return Err(RecoveryError::DuplicateAddress(a));
        }
    }

    let mut samples = Vec::with_capacity(addrs.len());
    for &addr in addrs {
        mem.write_cipher_block(addr, c)?;
        let found = mem.read_cipher_block(addr)?;
        if found != c {
            return Err(RecoveryError::CipherMismatch {
                addr,
                expected: c,
                found,
            });
        }
        samples.push(Sample {
            addr,
            plaintext: mem.read_plain_block(addr)?,
        });
    }

    let mut it = samples.into_iter();
    let reference = it.next().ok_or(RecoveryError::NoAddresses)?;
    Ok(SampleSet {
        cipher: c,
        reference,
        others: it.collect(),
    })
}

/// One equation per non-reference sample.
pub fn build_system(set: &SampleSet) -> Result<Gf2System, RecoveryError> {
    let mut sys = Gf2System::new();
    for (addr_diff, plain_diff) in set.differences() {
        let coeffs = Coeffs::new(addr_diff.tweak_bits())?;
        sys.add_row(coeffs, plain_diff)?;
    }
    Ok(sys)
}

/// Solves the sample equations for the tweak table.
pub fn recover_tweak(set: &SampleSet) -> Result<TweakTable, RecoveryError> {
    if set.len() < 2 {
        return Err(RecoveryError::TooFewSamples(set.len()));
    }
    let sys = build_system(set)?;
    Ok(TweakTable::from_rows(sys.solve()?))
}

/// Every pair satisfies `mᵢ ⊕ mⱼ = T(pᵢ ⊕ pⱼ)` under `table`.
pub fn linearity_holds(set: &SampleSet, table: &TweakTable) -> bool {
    let samples: Vec<_> = set.iter().copied().collect();
    samples.iter().enumerate().all(|(i, a)| {
        samples[i + 1..]
            .iter()
            .all(|b| a.plaintext ^ b.plaintext == table.tweak_of(a.addr.xor(b.addr)))
    })
}

/// `count` distinct block-aligned addresses drawn uniformly from `range`.
pub fn random_block_addresses(
    rng: &mut impl Rng,
    count: usize,
    range: Range<u64>,
) -> Result<Vec<PhysAddr>, RecoveryError> {
    let lo = range.start.div_ceil(BLOCK_SIZE as u64);
    let hi = range.end.min(ADDRESS_LIMIT) / BLOCK_SIZE as u64;
    let available = hi.saturating_sub(lo);
    if (count as u64) > available {
        return Err(RecoveryError::RangeTooSmall {
            wanted: count,
            available,
        });
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let block = rng.gen_range(lo..hi);
        if seen.insert(block) {
            out.push(PhysAddr::new(block * BLOCK_SIZE as u64)?);
        }
    }
    Ok(out)
}

impl From<crate::tweak::TweakError> for RecoveryError {
    fn from(e: crate::tweak::TweakError) -> Self {
        RecoveryError::Memory(MemError::Tweak(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecoveryVerdict {
    Recovered,
    Underdetermined { rank: usize, free: Vec<usize> },
    Inconsistent { row: usize },
}

impl fmt::Display for RecoveryVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryVerdict::Recovered => f.write_str("recovered"),
            RecoveryVerdict::Underdetermined { .. } => f.write_str("underdetermined"),
            RecoveryVerdict::Inconsistent { .. } => f.write_str("inconsistent"),
        }
    }
}

/// Outcome of a full recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    pub sample_count: usize,
    pub rank: usize,
    pub verdict: RecoveryVerdict,
    pub table: Option<TweakTable>,
    pub probe: Option<ProbeReport>,
}

impl RecoveryReport {
    pub fn from_samples(set: &SampleSet) -> Self {
        let (rank, verdict, table) = match build_system(set) {
            Ok(sys) => match sys.solve() {
                Ok(rows) => (
                    sys.rank(),
                    RecoveryVerdict::Recovered,
                    Some(TweakTable::from_rows(rows)),
                ),
                Err(Gf2Error::Underdetermined { rank, free }) => {
                    (rank, RecoveryVerdict::Underdetermined { rank, free }, None)
                }
                Err(_) => unreachable!("consistency checked while building"),
            },
            Err(RecoveryError::Gf2(Gf2Error::Inconsistent { row })) => {
                // Rank at the point of contradiction.
                let partial = SampleSet {
                    cipher: set.cipher,
                    reference: set.reference,
                    others: set.others[..row].to_vec(),
                };
                let rank = build_system(&partial).map_or(0, |s| s.rank());
                (rank, RecoveryVerdict::Inconsistent { row }, None)
            }
            Err(e) => unreachable!("sample set addresses are validated: {e}"),
        };
        RecoveryReport {
            sample_count: set.len(),
            rank,
            verdict,
            table,
            probe: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.sample_count);
        let _ = writeln!(s, "rank={}", self.rank);
        let _ = writeln!(s, "verdict={}", self.verdict);
        match &self.verdict {
            RecoveryVerdict::Underdetermined { free, .. } => {
                let names: Vec<String> = free.iter().map(|j| format!("t{}", j + 4)).collect();
                let _ = writeln!(s, "free_unknowns={}", names.join(","));
            }
            RecoveryVerdict::Inconsistent { row } => {
                let _ = writeln!(s, "conflicting_sample={}", row + 1);
            }
            RecoveryVerdict::Recovered => {}
        }
        if let Some(probe) = &self.probe {
            s.push_str(&probe.to_text());
        }
        if let Some(table) = &self.table {
            for (j, row) in table.rows().iter().enumerate() {
                let _ = writeln!(s, "t{}={}", j + 4, row.to_hex());
            }
        }
        s
    }
}
