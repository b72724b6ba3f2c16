//! Simulated memory-encryption engine and C-bit dual-view physical memory.
//!
//! The vulnerable engine XORs the address tweak into the plaintext and then
//! runs AES-128 in ECB fashion under the VM key. The mitigated engine derives
//! a fresh AES key per block address from the VM key instead, so no
//! address-independent algebra survives between blocks.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use thiserror::Error;

use crate::block::{Block, BLOCK_SIZE};
use crate::kdf::CounterKdf;
use crate::tweak::{PhysAddr, TweakError, TweakTable, ADDRESS_LIMIT};

pub const DEFAULT_KDF_LABEL: &[u8] = b"memtweak block key";

#[derive(Debug, Error)]
pub enum MemError {
    #[error("address range {addr:#x}+{len:#x} is outside memory of {size:#x} bytes")]
    AddressOutOfRange { addr: u64, len: u64, size: u64 },
    #[error("access at {addr:#x} with length {len} is not 16-byte aligned")]
    UnalignedAccess { addr: u64, len: usize },
    #[error("memory size {0:#x} must be a nonzero multiple of 16 within the address space")]
    BadSize(u64),
    #[error(transparent)]
    Tweak(#[from] TweakError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Vulnerable,
    Mitigated,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Vulnerable => "vulnerable",
            Mode::Mitigated => "mitigated",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vulnerable" => Ok(Mode::Vulnerable),
            "mitigated" => Ok(Mode::Mitigated),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Everything needed to build an [`Engine`].
#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub vek: [u8; 16],
    pub protection: Protection,
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Protection {
    /// Tweak XORed into the plaintext before AES.
    Vulnerable { table: TweakTable },
    /// Block address folded into the AES key through [`CounterKdf`].
    Mitigated { kdf_label: Vec<u8> },
}

impl EngineConfig {
    pub fn vulnerable(vek: [u8; 16], table: TweakTable) -> Self {
        EngineConfig {
            vek,
            protection: Protection::Vulnerable { table },
        }
    }

    pub fn mitigated(vek: [u8; 16]) -> Self {
        EngineConfig {
            vek,
            protection: Protection::Mitigated {
                kdf_label: DEFAULT_KDF_LABEL.to_vec(),
            },
        }
    }

    pub fn mode(&self) -> Mode {
        match self.protection {
            Protection::Vulnerable { .. } => Mode::Vulnerable,
            Protection::Mitigated { .. } => Mode::Mitigated,
        }
    }
}

// One per engine; boxing would only add an indirection per block.
#[derive(Clone)]
#[allow(clippy::large_enum_variant)]
enum Keying {
    Tweaked { cipher: Aes128, table: TweakTable },
    Derived { kdf: CounterKdf, label: Vec<u8> },
}

/// Block cipher engine. The VM key is fixed at construction.
#[derive(Clone)]
pub struct Engine {
    mode: Mode,
    keying: Keying,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let mode = config.mode();
        let keying = match config.protection {
            Protection::Vulnerable { table } => Keying::Tweaked {
                cipher: Aes128::new(&config.vek.into()),
                table,
            },
            Protection::Mitigated { kdf_label } => Keying::Derived {
                kdf: CounterKdf::new(&config.vek),
                label: kdf_label,
            },
        };
        Engine { mode, keying }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// The tweak table, for the vulnerable engine only.
    pub fn table(&self) -> Option<&TweakTable> {
        match &self.keying {
            Keying::Tweaked { table, .. } => Some(table),
            Keying::Derived { .. } => None,
        }
    }

    fn check(p: PhysAddr) -> Result<(), MemError> {
        if !p.is_block_aligned() {
            return Err(MemError::UnalignedAccess {
                addr: p.value(),
                len: BLOCK_SIZE,
            });
        }
        Ok(())
    }

    fn block_cipher(kdf: &CounterKdf, label: &[u8], p: PhysAddr) -> Aes128 {
        let key = kdf.derive_key128(label, &p.value().to_be_bytes());
        Aes128::new(&key.into())
    }

    pub fn encrypt_block(&self, m: Block, p: PhysAddr) -> Result<Block, MemError> {
        Self::check(p)?;
        let mut buf = match &self.keying {
            Keying::Tweaked { table, .. } => m ^ table.tweak_of(p),
            Keying::Derived { .. } => m,
        };
        let ga = aes::Block::from_mut_slice(&mut buf.0);
        match &self.keying {
            Keying::Tweaked { cipher, .. } => cipher.encrypt_block(ga),
            Keying::Derived { kdf, label } => Self::block_cipher(kdf, label, p).encrypt_block(ga),
        }
        Ok(buf)
    }

    pub fn decrypt_block(&self, c: Block, p: PhysAddr) -> Result<Block, MemError> {
        Self::check(p)?;
        let mut buf = c;
        let ga = aes::Block::from_mut_slice(&mut buf.0);
        match &self.keying {
            Keying::Tweaked { cipher, table } => {
                cipher.decrypt_block(ga);
                buf ^= table.tweak_of(p);
            }
            Keying::Derived { kdf, label } => Self::block_cipher(kdf, label, p).decrypt_block(ga),
        }
        Ok(buf)
    }
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

/// Block-level plaintext/ciphertext access to a physical memory.
///
/// Recovery code is written against this trait so that other memory models
/// (for instance a counter-mode double) can be probed the same way.
pub trait DualViewMemory {
    fn write_plain_block(&mut self, p: PhysAddr, m: Block) -> Result<(), MemError>;
    fn read_plain_block(&self, p: PhysAddr) -> Result<Block, MemError>;
    fn write_cipher_block(&mut self, p: PhysAddr, c: Block) -> Result<(), MemError>;
    fn read_cipher_block(&self, p: PhysAddr) -> Result<Block, MemError>;
}

/// Which side of the C-bit an access goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Plain,
    Cipher,
}

/// Sparse physical memory holding ciphertext.
///
/// Unwritten blocks hold the all-zero ciphertext.
#[derive(Clone, Debug)]
pub struct EncryptedMemory {
    blocks: HashMap<u64, Block>,
    engine: Engine,
    size_bytes: u64,
}

impl EncryptedMemory {
    pub fn new(engine: Engine, size_bytes: u64) -> Result<Self, MemError> {
        if size_bytes == 0
            || !size_bytes.is_multiple_of(BLOCK_SIZE as u64)
            || size_bytes > ADDRESS_LIMIT
        {
            return Err(MemError::BadSize(size_bytes));
        }
        Ok(EncryptedMemory {
            blocks: HashMap::new(),
            engine,
            size_bytes,
        })
    }

    /// Memory spanning the whole 34-bit physical space.
    pub fn full_space(engine: Engine) -> Self {
        Self::new(engine, ADDRESS_LIMIT).expect("address limit is a valid size")
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    fn check_range(&self, p: PhysAddr, len: usize) -> Result<(), MemError> {
        if !p.is_block_aligned() || !len.is_multiple_of(BLOCK_SIZE) {
            return Err(MemError::UnalignedAccess {
                addr: p.value(),
                len,
            });
        }
        let end = p.value().checked_add(len as u64);
        if end.is_none_or(|end| end > self.size_bytes) {
            return Err(MemError::AddressOutOfRange {
                addr: p.value(),
                len: len as u64,
                size: self.size_bytes,
            });
        }
        Ok(())
    }

    fn block_addrs(p: PhysAddr, len: usize) -> impl Iterator<Item = PhysAddr> {
        (0..len / BLOCK_SIZE).map(move |i| {
            // In range: check_range has run.
            PhysAddr::new(p.value() + (i * BLOCK_SIZE) as u64).expect("checked range")
        })
    }

    fn stored(&self, p: PhysAddr) -> Block {
        self.blocks.get(&p.value()).copied().unwrap_or(Block::ZERO)
    }

    pub fn write_plain(&mut self, p: PhysAddr, data: &[u8]) -> Result<(), MemError> {
        self.check_range(p, data.len())?;
        for (addr, chunk) in Self::block_addrs(p, data.len()).zip(data.chunks_exact(BLOCK_SIZE)) {
            let c = self.engine.encrypt_block(Block::from_slice(chunk), addr)?;
            self.blocks.insert(addr.value(), c);
        }
        Ok(())
    }

    pub fn read_plain(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, MemError> {
        self.check_range(p, len)?;
        let mut out = Vec::with_capacity(len);
        for addr in Self::block_addrs(p, len) {
            out.extend_from_slice(&self.engine.decrypt_block(self.stored(addr), addr)?.0);
        }
        Ok(out)
    }

    pub fn write_cipher(&mut self, p: PhysAddr, data: &[u8]) -> Result<(), MemError> {
        self.check_range(p, data.len())?;
        for (addr, chunk) in Self::block_addrs(p, data.len()).zip(data.chunks_exact(BLOCK_SIZE)) {
            self.blocks.insert(addr.value(), Block::from_slice(chunk));
        }
        Ok(())
    }

    pub fn read_cipher(&self, p: PhysAddr, len: usize) -> Result<Vec<u8>, MemError> {
        self.check_range(p, len)?;
        let mut out = Vec::with_capacity(len);
        for addr in Self::block_addrs(p, len) {
            out.extend_from_slice(&self.stored(addr).0);
        }
        Ok(out)
    }

    /// `address: 16 bytes` per line through the chosen view.
    pub fn hex_dump(&self, view: View, p: PhysAddr, len: usize) -> Result<String, MemError> {
        let bytes = match view {
            View::Plain => self.read_plain(p, len)?,
            View::Cipher => self.read_cipher(p, len)?,
        };
        Ok(hex_dump(p.value(), &bytes))
    }
}

/// Formats `bytes` as `address: b0 b1 ... b15` lines.
pub fn hex_dump(base: u64, bytes: &[u8]) -> String {
    let mut out = String::new();
    for (i, chunk) in bytes.chunks(BLOCK_SIZE).enumerate() {
        let _ = write!(out, "{:09x}:", base + (i * BLOCK_SIZE) as u64);
        for b in chunk {
            let _ = write!(out, " {b:02x}");
        }
        out.push('\n');
    }
    out
}

impl DualViewMemory for EncryptedMemory {
    fn write_plain_block(&mut self, p: PhysAddr, m: Block) -> Result<(), MemError> {
        self.write_plain(p, &m.0)
    }

    fn read_plain_block(&self, p: PhysAddr) -> Result<Block, MemError> {
        self.check_range(p, BLOCK_SIZE)?;
        self.engine.decrypt_block(self.stored(p), p)
    }

    fn write_cipher_block(&mut self, p: PhysAddr, c: Block) -> Result<(), MemError> {
        self.write_cipher(p, &c.0)
    }

    fn read_cipher_block(&self, p: PhysAddr) -> Result<Block, MemError> {
        self.check_range(p, BLOCK_SIZE)?;
        Ok(self.stored(p))
    }
}
