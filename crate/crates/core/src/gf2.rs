//! Linear algebra over F₂ for the 30-unknown tweak system.
//!
//! Every row states that a known XOR combination of the unknown vectors
//! t₄…t₃₃ equals a known 128-bit value. Rows are reduced incrementally into
//! echelon form as they arrive, so consistency and rank are always current.

use thiserror::Error;

use crate::block::Block;

/// Number of unknowns: one per address bit 4..=33.
pub const UNKNOWNS: usize = 30;

const COEFF_MASK: u32 = (1 << UNKNOWNS) - 1;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("coefficient vector {0:#x} has coordinates beyond the {UNKNOWNS} unknowns")]
    CoeffsOutOfRange(u32),
    #[error("inconsistent system: row {row} reduces to 0 = nonzero")]
    Inconsistent { row: usize },
    #[error("underdetermined system: rank {rank}, free unknowns {free:?}")]
    Underdetermined { rank: usize, free: Vec<usize> },
}

/// Coefficients of one row: bit `j` selects unknown `j` (address bit `j + 4`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Coeffs(u32);

impl Coeffs {
    pub fn new(bits: u32) -> Result<Self, Gf2Error> {
        if bits & !COEFF_MASK != 0 {
            return Err(Gf2Error::CoeffsOutOfRange(bits));
        }
        Ok(Coeffs(bits))
    }

    /// The unit vector eⱼ.
    pub fn unit(j: usize) -> Self {
        assert!(j < UNKNOWNS, "unknown index {j} out of range");
        Coeffs(1 << j)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn get(self, j: usize) -> bool {
        j < UNKNOWNS && (self.0 >> j) & 1 == 1
    }

    fn lowest(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }
}

impl std::ops::BitXor for Coeffs {
    type Output = Coeffs;

    fn bitxor(self, rhs: Coeffs) -> Coeffs {
        Coeffs(self.0 ^ rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Row {
    coeffs: Coeffs,
    rhs: Block,
}

/// Accumulating linear system with 30 unknowns and 128-bit right-hand sides.
#[derive(Debug, Clone, Default)]
pub struct Gf2System {
    // pivots[j] holds the echelon row whose lowest set coordinate is j.
    pivots: [Option<Row>; UNKNOWNS],
    rank: usize,
    rows_added: usize,
    first_conflict: Option<usize>,
}

impl Gf2System {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rows_added(&self) -> usize {
        self.rows_added
    }

    pub fn is_consistent(&self) -> bool {
        self.first_conflict.is_none()
    }

    /// Adds the equation `⊕_{j ∈ coeffs} tⱼ = rhs`.
    ///
    /// Returns `Ok(true)` when the row introduced a new pivot. A row that
    /// reduces to `0 = nonzero` marks the system inconsistent and returns
    /// [`Gf2Error::Inconsistent`]; the system stays inconsistent afterwards.
    pub fn add_row(&mut self, coeffs: Coeffs, rhs: Block) -> Result<bool, Gf2Error> {
        let index = self.rows_added;
        self.rows_added += 1;

        let mut row = Row { coeffs, rhs };
        while let Some(p) = row.coeffs.lowest() {
            match &self.pivots[p] {
                Some(pivot) => {
                    row.coeffs = row.coeffs ^ pivot.coeffs;
                    row.rhs ^= pivot.rhs;
                }
                None => {
                    self.pivots[p] = Some(row);
                    self.rank += 1;
                    return Ok(true);
                }
            }
        }

        if row.rhs.is_zero() {
            Ok(false)
        } else {
            self.first_conflict.get_or_insert(index);
            Err(Gf2Error::Inconsistent { row: index })
        }
    }

    /// Unknowns not covered by any pivot.
    pub fn free_unknowns(&self) -> Vec<usize> {
        (0..UNKNOWNS)
            .filter(|&j| self.pivots[j].is_none())
            .collect()
    }

    /// Back-substitutes for the unique solution `[t₄, …, t₃₃]`.
    pub fn solve(&self) -> Result<[Block; UNKNOWNS], Gf2Error> {
        if let Some(row) = self.first_conflict {
            return Err(Gf2Error::Inconsistent { row });
        }
        if self.rank < UNKNOWNS {
            return Err(Gf2Error::Underdetermined {
                rank: self.rank,
                free: self.free_unknowns(),
            });
        }

        // A row pivoted at j only mentions unknowns ≥ j, so solve top down.
        let mut solution = [Block::ZERO; UNKNOWNS];
        for j in (0..UNKNOWNS).rev() {
            let row = self.pivots[j].expect("full rank");
            let mut value = row.rhs;
            let mut rest = row.coeffs.bits() & !(1 << j);
            while rest != 0 {
                let k = rest.trailing_zeros() as usize;
                value ^= solution[k];
                rest &= rest - 1;
            }
            solution[j] = value;
        }
        Ok(solution)
    }
}
