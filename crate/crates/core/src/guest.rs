//! Simulated encrypted guest VM.
//!
//! A guest owns an [`EncryptedMemory`] filled with pseudorandom page content,
//! a Bridge (62 consecutive blocks inside one page where externally sent data
//! stays resident) and a victim code blob whose first 16 bytes are the
//! Characteristic Code. The attacker reaches the guest only through
//! [`AttackSurface`]: the injection channel and the hypervisor's raw
//! ciphertext view.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::block::{Block, BLOCK_SIZE};
use crate::memcrypt::{EncryptedMemory, Engine, EngineConfig, MemError, Mode};
use crate::scenario::Scenario;
use crate::tweak::{PhysAddr, TweakTable, ADDRESS_LIMIT};

pub const PAGE_SIZE: u64 = 4096;
/// Number of 16-byte groups that survive in the Bridge.
pub const BRIDGE_GROUPS: usize = 62;
pub const BRIDGE_LEN: usize = BRIDGE_GROUPS * BLOCK_SIZE;
pub const SHELLCODE_LEN: usize = 48;
pub const MIN_PAGES: u64 = 8;
pub const DEFAULT_PAGES: u64 = 4096;
pub const DEFAULT_BRIDGE_OFFSET: u64 = 0x150;
/// In-page offset of the sshd authentication code in the reference dump.
pub const DEFAULT_CC_OFFSET: u64 = 0xe90;

/// The 48 bytes of sshd authentication code that the attack overwrites.
pub const SSHD_AUTH_CODE: [u8; SHELLCODE_LEN] = [
    0x80, 0x00, 0x00, 0x00, 0x42, 0x8b, 0x3c, 0xb8, 0xe8, 0xc3, 0xd4, 0xff, //
    0xff, 0x85, 0xc0, 0x89, 0xc5, 0x0f, 0x88, 0xf4, 0x01, 0x00, 0x00, 0x89, //
    0xc7, 0xe3, 0xd2, 0xc3, 0x04, 0x00, 0x83, 0xc0, 0x01, 0x0f, 0x84, 0x43, //
    0x02, 0x00, 0x00, 0x44, 0x8b, 0x35, 0x3a, 0xbf, 0x2b, 0x00, 0x45, 0x39, //
];

// Placeholder payload; it is compared, never executed.
const DEFAULT_SHELLCODE: [u8; SHELLCODE_LEN] = [
    0x48, 0x31, 0xc0, 0xb0, 0x39, 0x0f, 0x05, 0x85, 0xc0, 0x75, 0x22, 0x48, //
    0x31, 0xff, 0x48, 0x31, 0xf6, 0x48, 0x31, 0xd2, 0x48, 0xbb, 0x2f, 0x62, //
    0x69, 0x6e, 0x2f, 0x2f, 0x73, 0x68, 0x53, 0x48, 0x89, 0xe7, 0xb0, 0x3b, //
    0x0f, 0x05, 0x90, 0x90, 0x31, 0xc0, 0xc3, 0x90, 0x90, 0x90, 0x90, 0x90, //
];

#[derive(Debug, Error)]
pub enum GuestError {
    #[error("guest needs at least {MIN_PAGES} pages, got {0}")]
    PageCountTooSmall(u64),
    #[error("guest of {0} pages does not fit in the physical address space")]
    PageCountTooLarge(u64),
    #[error("payload of {0} bytes exceeds the {BRIDGE_LEN}-byte Bridge")]
    PayloadTooLarge(usize),
    #[error("payload length {0} is not a multiple of 16")]
    UnalignedLength(usize),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Memory(#[from] MemError),
}

/// Exactly 48 bytes of attacker code.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shellcode(pub [u8; SHELLCODE_LEN]);

impl Shellcode {
    pub fn block(&self, k: usize) -> Block {
        Block::from_slice(&self.0[k * BLOCK_SIZE..])
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Shellcode)
    }
}

impl Default for Shellcode {
    fn default() -> Self {
        Shellcode(DEFAULT_SHELLCODE)
    }
}

impl fmt::Debug for Shellcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Shellcode({})", hex::encode(self.0))
    }
}

/// What the victim region decrypts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VictimStatus {
    AuthIntact,
    ShellcodeActive,
    Corrupted,
}

impl fmt::Display for VictimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VictimStatus::AuthIntact => "AuthIntact",
            VictimStatus::ShellcodeActive => "ShellcodeActive",
            VictimStatus::Corrupted => "Corrupted",
        })
    }
}

/// Layout and content parameters of a guest.
#[derive(Debug, Clone)]
pub struct GuestConfig {
    pub seed: u64,
    pub page_count: u64,
    pub mode: Mode,
    /// Tweak parameters of the vulnerable engine.
    pub table: TweakTable,
    pub bridge_offset: u64,
    pub cc_offset: u64,
    /// Victim code; the first 16 bytes are the Characteristic Code.
    pub victim: Vec<u8>,
    /// Probability that a filler block repeats the previous block's plaintext.
    pub duplicate_rate: f64,
}

impl Default for GuestConfig {
    fn default() -> Self {
        GuestConfig {
            seed: 0,
            page_count: DEFAULT_PAGES,
            mode: Mode::Vulnerable,
            table: TweakTable::table1(),
            bridge_offset: DEFAULT_BRIDGE_OFFSET,
            cc_offset: DEFAULT_CC_OFFSET,
            victim: SSHD_AUTH_CODE.to_vec(),
            duplicate_rate: 0.0,
        }
    }
}

impl GuestConfig {
    pub fn with_seed(seed: u64) -> Self {
        GuestConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn cc(&self) -> Block {
        Block::from_slice(&self.victim)
    }

    fn validate(&self) -> Result<(), GuestError> {
        if self.page_count < MIN_PAGES {
            return Err(GuestError::PageCountTooSmall(self.page_count));
        }
        if self
            .page_count
            .checked_mul(PAGE_SIZE)
            .is_none_or(|size| size > ADDRESS_LIMIT)
        {
            return Err(GuestError::PageCountTooLarge(self.page_count));
        }
        let block = BLOCK_SIZE as u64;
        if !self.bridge_offset.is_multiple_of(block)
            || self.bridge_offset + BRIDGE_LEN as u64 > PAGE_SIZE
        {
            return Err(GuestError::Layout(format!(
                "bridge offset {:#x} must be 16-aligned with room for {BRIDGE_LEN} bytes",
                self.bridge_offset
            )));
        }
        if self.victim.len() < SHELLCODE_LEN {
            return Err(GuestError::Layout(format!(
                "victim blob has {} bytes, need at least {SHELLCODE_LEN}",
                self.victim.len()
            )));
        }
        if !self.cc_offset.is_multiple_of(block)
            || self.cc_offset + self.victim.len() as u64 > PAGE_SIZE
        {
            return Err(GuestError::Layout(format!(
                "victim offset {:#x} must be 16-aligned with room for {} bytes",
                self.cc_offset,
                self.victim.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return Err(GuestError::Layout(format!(
                "duplicate rate {} outside [0, 1]",
                self.duplicate_rate
            )));
        }
        Ok(())
    }
}

impl From<&Scenario> for GuestConfig {
    fn from(s: &Scenario) -> Self {
        GuestConfig {
            seed: s.seed,
            page_count: s.page_count,
            mode: s.mode,
            table: TweakTable::table1(),
            bridge_offset: s.bridge_offset,
            cc_offset: s.cc_offset,
            victim: s.victim.clone(),
            duplicate_rate: s.duplicate_rate,
        }
    }
}

/// The channels an attacker controlling the hypervisor can use.
pub trait AttackSurface {
    fn page_count(&self) -> u64;

    /// Sends data into the guest; it lands in the Bridge through the plaintext view.
    fn inject(&mut self, payload: &[u8]) -> Result<(), GuestError>;

    fn hv_read_cipher(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, GuestError>;

    fn hv_write_cipher(&mut self, p: PhysAddr, data: &[u8]) -> Result<(), GuestError>;

    /// Tries to use the victim service (log in over ssh, in the real attack).
    fn victim_check(&self, shellcode: &Shellcode) -> VictimStatus;

    fn memory_size(&self) -> u64 {
        self.page_count() * PAGE_SIZE
    }
}

/// A running encrypted guest.
#[derive(Clone)]
pub struct GuestImage {
    config: GuestConfig,
    mem: EncryptedMemory,
    bridge_page: u64,
    victim_page: u64,
    original_victim: [u8; SHELLCODE_LEN],
    restarts: u64,
}

impl GuestImage {
    pub fn new(config: GuestConfig) -> Result<Self, GuestError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut vek = [0u8; 16];
        rng.fill_bytes(&mut vek);
        let engine = Engine::new(match config.mode {
            Mode::Vulnerable => EngineConfig::vulnerable(vek, config.table.clone()),
            Mode::Mitigated => EngineConfig::mitigated(vek),
        });
        let mut mem = EncryptedMemory::new(engine, config.page_count * PAGE_SIZE)?;

        let mut page = vec![0u8; PAGE_SIZE as usize];
        for index in 0..config.page_count {
            fill_page(&mut rng, &mut page, config.duplicate_rate);
            mem.write_plain(
                PhysAddr::new(index * PAGE_SIZE).expect("validated size"),
                &page,
            )?;
        }

        let bridge_page = rng.gen_range(0..config.page_count);
        let victim_page = loop {
            let p = rng.gen_range(0..config.page_count);
            if p != bridge_page {
                break p;
            }
        };
        let victim_addr =
            PhysAddr::new(victim_page * PAGE_SIZE + config.cc_offset).expect("validated");
        mem.write_plain(victim_addr, &padded(&config.victim))?;

        let mut original_victim = [0u8; SHELLCODE_LEN];
        original_victim.copy_from_slice(&config.victim[..SHELLCODE_LEN]);
        Ok(GuestImage {
            config,
            mem,
            bridge_page,
            victim_page,
            original_victim,
            restarts: 0,
        })
    }

    pub fn config(&self) -> &GuestConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mem.engine().mode()
    }

    /// Restarts the data-receiving server: the Bridge moves to another page
    /// but keeps its offset inside the page.
    pub fn restart_server(&mut self) {
        self.restarts += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.restarts.rotate_left(32));
        self.bridge_page = loop {
            let p = rng.gen_range(0..self.config.page_count);
            if p != self.victim_page && p != self.bridge_page {
                break p;
            }
        };
    }

    fn bridge_addr(&self) -> PhysAddr {
        PhysAddr::new(self.bridge_page * PAGE_SIZE + self.config.bridge_offset).expect("validated")
    }

    fn victim_addr(&self) -> PhysAddr {
        PhysAddr::new(self.victim_page * PAGE_SIZE + self.config.cc_offset).expect("validated")
    }

    /// Ground-truth access for tests and oracles; not part of the attack surface.
    #[cfg(any(test, feature = "whitebox"))]
    pub fn whitebox(&self) -> WhiteBox<'_> {
        WhiteBox(self)
    }
}

fn padded(data: &[u8]) -> Vec<u8> {
    let mut v = data.to_vec();
    v.resize(data.len().div_ceil(BLOCK_SIZE) * BLOCK_SIZE, 0);
    v
}

fn fill_page(rng: &mut ChaCha8Rng, page: &mut [u8], duplicate_rate: f64) {
    rng.fill_bytes(page);
    if duplicate_rate > 0.0 {
        for k in 1..page.len() / BLOCK_SIZE {
            if rng.gen_bool(duplicate_rate) {
                page.copy_within((k - 1) * BLOCK_SIZE..k * BLOCK_SIZE, k * BLOCK_SIZE);
            }
        }
    }
}

impl AttackSurface for GuestImage {
    fn page_count(&self) -> u64 {
        self.config.page_count
    }

    fn inject(&mut self, payload: &[u8]) -> Result<(), GuestError> {
        if payload.len() > BRIDGE_LEN {
            return Err(GuestError::PayloadTooLarge(payload.len()));
        }
        if !payload.len().is_multiple_of(BLOCK_SIZE) {
            return Err(GuestError::UnalignedLength(payload.len()));
        }
        let at = self.bridge_addr();
        Ok(self.mem.write_plain(at, payload)?)
    }

    fn hv_read_cipher(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, GuestError> {
        Ok(self.mem.read_cipher(p, len)?)
    }

    fn hv_write_cipher(&mut self, p: PhysAddr, data: &[u8]) -> Result<(), GuestError> {
        Ok(self.mem.write_cipher(p, data)?)
    }

    fn victim_check(&self, shellcode: &Shellcode) -> VictimStatus {
        let Ok(code) = self.mem.read_plain(self.victim_addr(), SHELLCODE_LEN) else {
            return VictimStatus::Corrupted;
        };
        if code == shellcode.0 {
            VictimStatus::ShellcodeActive
        } else if code == self.original_victim {
            VictimStatus::AuthIntact
        } else {
            VictimStatus::Corrupted
        }
    }
}

impl fmt::Debug for GuestImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuestImage")
            .field("seed", &self.config.seed)
            .field("page_count", &self.config.page_count)
            .field("mode", &self.mode())
            .finish_non_exhaustive()
    }
}

/// Read-only ground truth about a guest.
#[cfg(any(test, feature = "whitebox"))]
pub struct WhiteBox<'a>(&'a GuestImage);

#[cfg(any(test, feature = "whitebox"))]
impl<'a> WhiteBox<'a> {
    pub fn bridge_address(&self) -> PhysAddr {
        self.0.bridge_addr()
    }

    pub fn bridge_page(&self) -> u64 {
        self.0.bridge_page
    }

    pub fn victim_address(&self) -> PhysAddr {
        self.0.victim_addr()
    }

    pub fn victim_page(&self) -> u64 {
        self.0.victim_page
    }

    pub fn engine(&self) -> &'a Engine {
        self.0.mem.engine()
    }

    pub fn read_plain(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, MemError> {
        self.0.mem.read_plain(p, len)
    }

    pub fn memory(&self) -> &'a EncryptedMemory {
        &self.0.mem
    }
}
