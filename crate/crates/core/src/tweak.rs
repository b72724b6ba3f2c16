//! The physical-address tweak `T(x) = ⊕_{xᵢ = 1} tᵢ` over address bits 4..=33.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::block::{Block, BLOCK_SIZE};
use crate::gf2::UNKNOWNS;

/// Width of the modeled physical address space.
pub const ADDRESS_BITS: u32 = 34;
/// Lowest address bit that selects a distinct block.
pub const FIRST_TWEAK_BIT: u32 = 4;
/// One past the highest valid physical address.
pub const ADDRESS_LIMIT: u64 = 1 << ADDRESS_BITS;

#[derive(Debug, Error)]
pub enum TweakError {
    #[error("physical address {0:#x} is outside the {ADDRESS_BITS}-bit address space")]
    AddressOutOfRange(u64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("table file is missing t{0}")]
    MissingRow(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A byte-granular physical address below 2³⁴.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PhysAddr(u64);

impl PhysAddr {
    pub fn new(value: u64) -> Result<Self, TweakError> {
        if value >= ADDRESS_LIMIT {
            return Err(TweakError::AddressOutOfRange(value));
        }
        Ok(PhysAddr(value))
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// The address with bits 0..=3 cleared.
    pub const fn block(self) -> PhysAddr {
        PhysAddr(self.0 & !(BLOCK_SIZE as u64 - 1))
    }

    pub const fn is_block_aligned(self) -> bool {
        self.0.is_multiple_of(BLOCK_SIZE as u64)
    }

    pub fn checked_add(self, delta: u64) -> Result<PhysAddr, TweakError> {
        let v = self
            .0
            .checked_add(delta)
            .ok_or(TweakError::AddressOutOfRange(u64::MAX))?;
        PhysAddr::new(v)
    }

    /// Bitwise XOR of two addresses; always stays in range.
    pub const fn xor(self, other: PhysAddr) -> PhysAddr {
        PhysAddr(self.0 ^ other.0)
    }

    /// Address bits 4..=33 packed into the low 30 bits.
    pub const fn tweak_bits(self) -> u32 {
        (self.0 >> FIRST_TWEAK_BIT) as u32
    }
}

impl fmt::Debug for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhysAddr({:#x})", self.0)
    }
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#011x}", self.0)
    }
}

impl TryFrom<u64> for PhysAddr {
    type Error = TweakError;

    fn try_from(value: u64) -> Result<Self, Self::Error> {
        PhysAddr::new(value)
    }
}

/// Measured tweak constants t₄…t₃₃ of the reverse-engineered hardware.
const TABLE1_WORDS: [[u8; 4]; UNKNOWNS] = [
    [0x82, 0x25, 0x38, 0x38], // t4
    [0xec, 0x09, 0x07, 0x9c], // t5
    [0x40, 0x00, 0x00, 0x18], // t6
    [0x81, 0x02, 0xa2, 0x3a], // t7
    [0x77, 0xd9, 0x10, 0x77], // t8
    [0xb0, 0x10, 0xb2, 0xc0], // t9
    [0x53, 0x6d, 0x54, 0x4d], // t10
    [0x15, 0x68, 0xee, 0x53], // t11
    [0xb0, 0x92, 0x30, 0xc2], // t12
    [0x96, 0x70, 0xff, 0x8e], // t13
    [0x36, 0x1b, 0x90, 0xd5], // t14
    [0x04, 0x00, 0xc2, 0x36], // t15
    [0xe8, 0x18, 0x29, 0x85], // t16
    [0xbd, 0x31, 0xf9, 0x2a], // t17
    [0xa5, 0x0d, 0x37, 0x44], // t18
    [0xf4, 0x31, 0xd8, 0x4c], // t19
    [0x02, 0x04, 0x31, 0x81], // t20
    [0xb3, 0x71, 0x32, 0xa1], // t21
    [0x50, 0x8a, 0xc0, 0x6c], // t22
    [0x16, 0x8a, 0x80, 0x20], // t23
    [0x7f, 0x9b, 0xc0, 0x07], // t24
    [0x00, 0xdb, 0x04, 0x07], // t25
    [0x7f, 0x00, 0x04, 0x04], // t26
    [0x70, 0xfa, 0x01, 0xbe], // t27
    [0xbb, 0x3d, 0x28, 0x90], // t28
    [0xbd, 0x2d, 0xd5, 0x26], // t29
    [0x1c, 0x5d, 0x6c, 0xe2], // t30
    [0xaf, 0x4c, 0x8f, 0xa4], // t31
    [0x4f, 0x5c, 0xe7, 0x27], // t32
    [0xaf, 0x4c, 0x8f, 0xa4], // t33
];

/// The bundled table in its on-disk text form.
pub const TABLE1_TEXT: &str = include_str!("../data/table1.txt");

/// The 30 vectors defining the linear tweak.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TweakTable([Block; UNKNOWNS]);

impl TweakTable {
    pub fn from_rows(rows: [Block; UNKNOWNS]) -> Self {
        TweakTable(rows)
    }

    /// The measured hardware parameters.
    pub fn table1() -> Self {
        TweakTable(TABLE1_WORDS.map(Block::splat_word))
    }

    /// Thirty pseudorandom nonzero rows, reproducible from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = [Block::ZERO; UNKNOWNS];
        for row in rows.iter_mut() {
            loop {
                rng.fill_bytes(&mut row.0);
                if !row.is_zero() {
                    break;
                }
            }
        }
        TweakTable(rows)
    }

    /// Rows indexed from t₄ (index 0) to t₃₃ (index 29).
    pub fn rows(&self) -> &[Block; UNKNOWNS] {
        &self.0
    }

    /// tᵢ for address bit `bit` in 4..=33.
    pub fn row(&self, bit: u32) -> Option<Block> {
        let j = bit.checked_sub(FIRST_TWEAK_BIT)? as usize;
        self.0.get(j).copied()
    }

    pub fn tweak_of(&self, addr: PhysAddr) -> Block {
        let mut bits = addr.tweak_bits();
        let mut acc = Block::ZERO;
        while bits != 0 {
            acc ^= self.0[bits.trailing_zeros() as usize];
            bits &= bits - 1;
        }
        acc
    }

    /// [`tweak_of`](Self::tweak_of) for a raw integer address.
    pub fn tweak_of_raw(&self, addr: u64) -> Result<Block, TweakError> {
        Ok(self.tweak_of(PhysAddr::new(addr)?))
    }

    /// One `t<index>: <hex>` line per row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (j, row) in self.0.iter().enumerate() {
            out.push_str(&format!(
                "t{}: {}\n",
                j as u32 + FIRST_TWEAK_BIT,
                row.to_hex()
            ));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, TweakError> {
        let mut rows: [Option<Block>; UNKNOWNS] = [None; UNKNOWNS];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| TweakError::Parse { line: n + 1, msg };
            let (name, value) = line
                .split_once(':')
                .ok_or_else(|| parse_err("expected `t<index>: <hex>`".into()))?;
            let index: u32 = name
                .trim()
                .strip_prefix('t')
                .and_then(|i| i.parse().ok())
                .ok_or_else(|| parse_err(format!("bad row name `{}`", name.trim())))?;
            if !(FIRST_TWEAK_BIT..FIRST_TWEAK_BIT + UNKNOWNS as u32).contains(&index) {
                return Err(parse_err(format!("row t{index} outside t4..t33")));
            }
            let slot = &mut rows[(index - FIRST_TWEAK_BIT) as usize];
            if slot.is_some() {
                return Err(parse_err(format!("duplicate row t{index}")));
            }
            *slot = Some(Block::from_dump(value).map_err(|e| parse_err(e.to_string()))?);
        }

        let mut out = [Block::ZERO; UNKNOWNS];
        for (j, row) in rows.iter().enumerate() {
            out[j] = row.ok_or(TweakError::MissingRow(j as u32 + FIRST_TWEAK_BIT))?;
        }
        Ok(TweakTable(out))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TweakError> {
        Self::parse_text(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TweakError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl Default for TweakTable {
    fn default() -> Self {
        Self::table1()
    }
}

impl fmt::Debug for TweakTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl FromStr for TweakTable {
    type Err = TweakError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_text(s)
    }
}
