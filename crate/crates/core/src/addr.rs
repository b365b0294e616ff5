use core::fmt;
use core::ops::{Add, AddAssign};

/// A 64-bit virtual address.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub u64);

impl Address {
    pub const ZERO: Address = Address(0);

    #[inline]
    pub const fn new(value: u64) -> Self {
        Address(value)
    }

    #[inline]
    pub const fn get(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn checked_add(self, delta: u64) -> Option<Address> {
        self.0.checked_add(delta).map(Address)
    }

    /// Signed distance `self - base`, wrapping in two's complement.
    #[inline]
    pub fn offset_from(self, base: Address) -> i64 {
        self.0.wrapping_sub(base.0) as i64
    }

    #[inline]
    pub fn wrapping_add_signed(self, delta: i64) -> Address {
        Address(self.0.wrapping_add_signed(delta))
    }
}

impl Add<u64> for Address {
    type Output = Address;

    #[inline]
    fn add(self, rhs: u64) -> Address {
        Address(self.0 + rhs)
    }
}

impl AddAssign<u64> for Address {
    #[inline]
    fn add_assign(&mut self, rhs: u64) {
        self.0 += rhs;
    }
}

impl From<u64> for Address {
    fn from(v: u64) -> Self {
        Address(v)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::LowerHex for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}
