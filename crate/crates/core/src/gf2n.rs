//! Arithmetic in GF(2^N), 1 <= N <= 63.
//!
//! Elements are polynomials over GF(2) packed little-endian into a `u64`
//! (bit `j` is the coefficient of `x^j`). The modulus carries its leading
//! coefficient at bit `N`, so it still fits one word for N = 63.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DEGREE: u32 = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("field degree {0} outside 1..=63")]
    DegreeOutOfRange(u32),
    #[error("modulus {modulus:#x} does not have degree {degree}")]
    ModulusDegree { degree: u32, modulus: u64 },
    #[error("modulus {0:#x} is reducible over GF(2)")]
    Reducible(u64),
    #[error("value {value:#x} is not an element of GF(2^{degree})")]
    NotInField { value: u64, degree: u32 },
}

/// An element of some GF(2^N) in polynomial-basis coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldElement(pub u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// The field GF(2^degree) = GF(2)[x] / (modulus).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFieldSpec")]
pub struct FieldSpec {
    degree: u32,
    modulus: u64,
}

#[derive(Deserialize)]
struct RawFieldSpec {
    degree: u32,
    modulus: u64,
}

impl TryFrom<RawFieldSpec> for FieldSpec {
    type Error = FieldError;

    fn try_from(raw: RawFieldSpec) -> Result<Self, Self::Error> {
        FieldSpec::new(raw.degree, raw.modulus)
    }
}

impl FieldSpec {
    /// Builds a field from an explicit modulus, checking degree and irreducibility.
    pub fn new(degree: u32, modulus: u64) -> Result<Self, FieldError> {
        check_degree(degree)?;
        if poly_degree(modulus as u128) != Some(degree) {
            return Err(FieldError::ModulusDegree { degree, modulus });
        }
        if !is_irreducible(modulus) {
            return Err(FieldError::Reducible(modulus));
        }
        Ok(FieldSpec { degree, modulus })
    }

    /// The field of the given degree using the canonical (least) modulus.
    pub fn with_degree(degree: u32) -> Result<Self, FieldError> {
        let modulus = find_modulus(degree)?;
        Ok(FieldSpec { degree, modulus })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Field size q = 2^degree.
    pub fn order(&self) -> u64 {
        1u64 << self.degree
    }

    pub fn mask(&self) -> u64 {
        self.order() - 1
    }

    pub fn contains(&self, a: FieldElement) -> bool {
        a.0 <= self.mask()
    }

    pub fn element(&self, value: u64) -> Result<FieldElement, FieldError> {
        let e = FieldElement(value);
        self.check(e)?;
        Ok(e)
    }

    fn check(&self, a: FieldElement) -> Result<(), FieldError> {
        if self.contains(a) {
            Ok(())
        } else {
            Err(FieldError::NotInField {
                value: a.0,
                degree: self.degree,
            })
        }
    }

    pub fn add(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(a)?;
        self.check(b)?;
        Ok(FieldElement(a.0 ^ b.0))
    }

    pub fn mul(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.mul_unchecked(a, b))
    }

    /// Multiplication without the range check. Callers guarantee both
    /// operands are below `2^degree`.
    #[inline]
    pub fn mul_unchecked(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(reduce(clmul(a.0, b.0), self.modulus, self.degree))
    }

    pub fn pow(&self, a: FieldElement, mut exp: u64) -> Result<FieldElement, FieldError> {
        self.check(a)?;
        let mut base = a;
        let mut acc = FieldElement::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul_unchecked(acc, base);
            }
            base = self.mul_unchecked(base, base);
            exp >>= 1;
        }
        Ok(acc)
    }

    /// Multiplicative inverse via a^(q-2); `None` for zero.
    pub fn inv(&self, a: FieldElement) -> Result<Option<FieldElement>, FieldError> {
        self.check(a)?;
        if a.is_zero() {
            return Ok(None);
        }
        self.pow(a, self.order() - 2).map(Some)
    }
}

fn check_degree(degree: u32) -> Result<(), FieldError> {
    if (1..=MAX_DEGREE).contains(&degree) {
        Ok(())
    } else {
        Err(FieldError::DegreeOutOfRange(degree))
    }
}

/// Carry-less product of two 64-bit polynomials.
#[inline]
pub fn clmul(a: u64, b: u64) -> u128 {
    let a = a as u128;
    let mut b = b;
    let mut acc = 0u128;
    while b != 0 {
        let low = b.trailing_zeros();
        acc ^= a << low;
        b &= b - 1;
    }
    acc
}

/// Reduces a polynomial of degree < 127 modulo `modulus` (degree `degree`).
#[inline]
fn reduce(mut value: u128, modulus: u64, degree: u32) -> u64 {
    let modulus = modulus as u128;
    while let Some(d) = poly_degree(value) {
        if d < degree {
            break;
        }
        value ^= modulus << (d - degree);
    }
    value as u64
}

fn poly_degree(value: u128) -> Option<u32> {
    if value == 0 {
        None
    } else {
        Some(127 - value.leading_zeros())
    }
}

fn poly_mod(a: u64, b: u64) -> u64 {
    let db = poly_degree(b as u128).expect("division by zero polynomial");
    let mut a = a;
    while let Some(da) = poly_degree(a as u128) {
        if da < db {
            break;
        }
        a ^= b << (da - db);
    }
    a
}

fn poly_gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = poly_mod(a, b);
        a = b;
        b = r;
    }
    a
}

/// Ben-Or irreducibility test: `f` of degree n is irreducible iff
/// gcd(x^(2^i) - x, f) = 1 for every 1 <= i <= n/2.
pub fn is_irreducible(f: u64) -> bool {
    let Some(n) = poly_degree(f as u128) else {
        return false;
    };
    if n == 0 || n > MAX_DEGREE {
        return false;
    }
    // x^(2^i) mod f, starting from x mod f.
    let mut power = reduce(0b10, f, n);
    for _ in 1..=n / 2 {
        power = reduce(clmul(power, power), f, n);
        if poly_gcd(f, power ^ 0b10) != 1 {
            return false;
        }
    }
    true
}

fn search_modulus(degree: u32) -> u64 {
    let lo = 1u64 << degree;
    let hi = if degree == 63 { u64::MAX } else { (lo << 1) - 1 };
    (lo..=hi)
        .find(|&f| is_irreducible(f))
        .expect("an irreducible polynomial exists in every degree")
}

fn modulus_table() -> &'static [u64; 64] {
    static TABLE: OnceLock<[u64; 64]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u64; 64];
        for degree in 1..=MAX_DEGREE {
            table[degree as usize] = search_modulus(degree);
        }
        table
    })
}

/// The numerically least irreducible polynomial of the given degree.
pub fn find_modulus(degree: u32) -> Result<u64, FieldError> {
    check_degree(degree)?;
    Ok(modulus_table()[degree as usize])
}
