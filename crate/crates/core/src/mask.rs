//! Per-client category bitmasks.
//!
//! Bit `i` is set when category `i` appears at least once in a client's local
//! data. Category 0 lives in the least significant bit, so a mask over `C`
//! categories is full exactly when it equals `2^C - 1`.

use std::fmt;

use crate::error::{Error, Result};

/// Widest category space a mask can represent.
pub const MAX_CATEGORIES: usize = 128;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CategoryMask {
    bits: u128,
    num_categories: usize,
}

impl CategoryMask {
    pub fn empty(num_categories: usize) -> Result<Self> {
        if num_categories == 0 || num_categories > MAX_CATEGORIES {
            return Err(Error::invalid(format!(
                "num_categories must be in [1, {MAX_CATEGORIES}], got {num_categories}"
            )));
        }
        Ok(Self {
            bits: 0,
            num_categories,
        })
    }

    pub fn full(num_categories: usize) -> Result<Self> {
        let mut mask = Self::empty(num_categories)?;
        mask.bits = Self::all_ones(num_categories);
        Ok(mask)
    }

    /// Builds a mask from raw bits. Bits at or above `num_categories` are rejected.
    pub fn from_bits(bits: u128, num_categories: usize) -> Result<Self> {
        let mut mask = Self::empty(num_categories)?;
        if bits & !Self::all_ones(num_categories) != 0 {
            return Err(Error::invalid(format!(
                "mask {bits:#x} has bits outside {num_categories} categories"
            )));
        }
        mask.bits = bits;
        Ok(mask)
    }

    pub fn from_categories<I>(categories: I, num_categories: usize) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut mask = Self::empty(num_categories)?;
        for c in categories {
            mask.insert(c)?;
        }
        Ok(mask)
    }

    fn all_ones(num_categories: usize) -> u128 {
        if num_categories == 128 {
            u128::MAX
        } else {
            (1u128 << num_categories) - 1
        }
    }

    pub fn insert(&mut self, category: usize) -> Result<()> {
        if category >= self.num_categories {
            return Err(Error::invalid(format!(
                "category {category} out of range for {} categories",
                self.num_categories
            )));
        }
        self.bits |= 1u128 << category;
        Ok(())
    }

    pub fn contains(&self, category: usize) -> bool {
        category < self.num_categories && self.bits & (1u128 << category) != 0
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn popcount(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn is_full(&self) -> bool {
        self.bits == Self::all_ones(self.num_categories)
    }

    pub fn union(&self, other: &Self) -> Self {
        debug_assert_eq!(self.num_categories, other.num_categories);
        Self {
            bits: self.bits | other.bits,
            num_categories: self.num_categories,
        }
    }

    /// True when `other` has at least one category this mask lacks.
    pub fn gains_from(&self, other: &Self) -> bool {
        other.bits & !self.bits != 0
    }

    pub fn categories(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_categories).filter(move |&c| self.contains(c))
    }
}

impl fmt::Debug for CategoryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CategoryMask({self})")
    }
}

/// Renders as a category-0-first bit string, e.g. `1010` for categories {0, 2} of 4.
impl fmt::Display for CategoryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in 0..self.num_categories {
            f.write_str(if self.contains(c) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Mask of the categories present in `labels`.
pub fn build_mask<I>(labels: I, num_categories: usize) -> Result<CategoryMask>
where
    I: IntoIterator<Item = usize>,
{
    CategoryMask::from_categories(labels, num_categories)
}
