//! The 16-byte block: unit of memory encryption and a vector in F₂¹²⁸.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};
use std::str::FromStr;

use thiserror::Error;

/// Size of one cipher/memory block in bytes.
pub const BLOCK_SIZE: usize = 16;

/// A 128-bit block.
///
/// Byte `k` is the byte at memory offset `k` inside the block, so a block
/// prints in the same order as a hex dump of memory. XOR is addition over F₂,
/// which is why the same type doubles as the 128-bit vector of the tweak
/// algebra (see [`BitVec128`]).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Block(pub [u8; BLOCK_SIZE]);

/// A vector in F₂¹²⁸. Same representation as a memory block.
pub type BitVec128 = Block;

#[derive(Debug, Error, PartialEq)]
pub enum BlockParseError {
    #[error("expected 32 hex characters, found {0}")]
    Length(usize),
    #[error("invalid hex: {0}")]
    Hex(#[from] hex::FromHexError),
}

impl Block {
    pub const ZERO: Block = Block([0; BLOCK_SIZE]);

    pub const fn new(bytes: [u8; BLOCK_SIZE]) -> Self {
        Block(bytes)
    }

    /// Builds a block by repeating a 4-byte word four times.
    pub const fn splat_word(word: [u8; 4]) -> Self {
        let mut out = [0u8; BLOCK_SIZE];
        let mut i = 0;
        while i < BLOCK_SIZE {
            out[i] = word[i % 4];
            i += 1;
        }
        Block(out)
    }

    /// Copies the first 16 bytes of `bytes`.
    ///
    /// Panics if `bytes` is shorter than a block.
    pub fn from_slice(bytes: &[u8]) -> Self {
        let mut out = [0u8; BLOCK_SIZE];
        out.copy_from_slice(&bytes[..BLOCK_SIZE]);
        Block(out)
    }

    /// Little-endian encoding of a 128-bit counter.
    pub fn from_counter(value: u128) -> Self {
        Block(value.to_le_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; BLOCK_SIZE] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == [0; BLOCK_SIZE]
    }

    pub fn count_ones(&self) -> u32 {
        self.0.iter().map(|b| b.count_ones()).sum()
    }

    /// Lowercase, 32 characters, no separators.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, BlockParseError> {
        let s = s.trim();
        if s.len() != 2 * BLOCK_SIZE {
            return Err(BlockParseError::Length(s.len()));
        }
        let mut out = [0u8; BLOCK_SIZE];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Block(out))
    }

    /// Space-separated dump style, e.g. `82 25 38 38 ...`.
    pub fn to_dump(&self) -> String {
        let mut s = String::with_capacity(3 * BLOCK_SIZE);
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Parses the dump style; whitespace between bytes is ignored.
    pub fn from_dump(s: &str) -> Result<Self, BlockParseError> {
        let compact: String = s.split_whitespace().collect();
        Self::from_hex(&compact)
    }
}

impl BitXor for Block {
    type Output = Block;

    fn bitxor(mut self, rhs: Block) -> Block {
        self ^= rhs;
        self
    }
}

impl BitXorAssign for Block {
    fn bitxor_assign(&mut self, rhs: Block) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a ^= b;
        }
    }
}

impl From<[u8; BLOCK_SIZE]> for Block {
    fn from(bytes: [u8; BLOCK_SIZE]) -> Self {
        Block(bytes)
    }
}

impl From<Block> for [u8; BLOCK_SIZE] {
    fn from(b: Block) -> Self {
        b.0
    }
}

impl AsRef<[u8]> for Block {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block({})", self.to_hex())
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Block {
    type Err = BlockParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Block::from_hex(s)
    }
}
