//! Arithmetic in GF(2^n) for 2 <= n <= 8.
//!
//! Elements are n-bit coordinate vectors in the polynomial basis. Addition is
//! XOR; multiplication is carry-less multiplication reduced by the modulus.
//! Every [`Field`] precomputes full multiplication and inverse tables, which
//! is cheap at these sizes (at most 256 x 256 bytes).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_DEGREE: u32 = 2;
pub const MAX_DEGREE: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("extension degree {0} outside supported range 2..=8")]
    UnsupportedDegree(u32),
    #[error("modulus {modulus:#x} is not a degree-{n} polynomial")]
    WrongModulusDegree { n: u32, modulus: u32 },
    #[error("modulus {0:#x} is reducible over GF(2)")]
    Reducible(u32),
    #[error("value {value} is not an element of GF({order})")]
    OutOfRange { value: u32, order: u32 },
    #[error("elements belong to different fields (moduli {0:#x} and {1:#x})")]
    Mismatch(u32, u32),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// Carry-less product of two polynomials over GF(2).
fn clmul(a: u32, b: u32) -> u32 {
    let mut acc = 0;
    let mut b = b;
    let mut shift = 0;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a << shift;
        }
        b >>= 1;
        shift += 1;
    }
    acc
}

fn degree(p: u32) -> i32 {
    31 - p.leading_zeros() as i32
}

/// Remainder of `a` modulo `m` over GF(2).
fn poly_rem(mut a: u32, m: u32) -> u32 {
    let dm = degree(m);
    while a != 0 && degree(a) >= dm {
        a ^= m << (degree(a) - dm);
    }
    a
}

/// Exhaustive trial division by every polynomial of degree 1..=deg/2.
pub fn is_irreducible(poly: u32) -> bool {
    let d = degree(poly);
    if d < 1 {
        return false;
    }
    for divisor in 2u32..(1 << (d / 2 + 1)) {
        if degree(divisor) >= 1 && degree(divisor) <= d / 2 && poly_rem(poly, divisor) == 0 {
            return false;
        }
    }
    true
}

/// Default modulus for degree `n`: x²+x+1, x³+x+1, x⁴+x+1, then the
/// lexicographically smallest irreducible for n = 5..8.
pub fn default_modulus(n: u32) -> Result<u32, FieldError> {
    match n {
        2 => Ok(0b111),
        3 => Ok(0b1011),
        4 => Ok(0b10011),
        5..=8 => Ok(((1u32 << n)..(1u32 << (n + 1)))
            .find(|&p| is_irreducible(p))
            .expect("irreducible polynomials exist in every degree")),
        _ => Err(FieldError::UnsupportedDegree(n)),
    }
}

/// Extension degree and modulus of a binary field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    n: u32,
    modulus: u32,
}

impl FieldSpec {
    pub fn new(n: u32) -> Result<Self, FieldError> {
        Self::with_modulus(n, default_modulus(n)?)
    }

    pub fn with_modulus(n: u32, modulus: u32) -> Result<Self, FieldError> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&n) {
            return Err(FieldError::UnsupportedDegree(n));
        }
        if degree(modulus) != n as i32 {
            return Err(FieldError::WrongModulusDegree { n, modulus });
        }
        if !is_irreducible(modulus) {
            return Err(FieldError::Reducible(modulus));
        }
        Ok(Self { n, modulus })
    }

    pub fn degree(&self) -> u32 {
        self.n
    }

    /// N = 2^n.
    pub fn order(&self) -> usize {
        1 << self.n
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    /// Modulus rendered as a hex bit mask, e.g. `0x13`.
    pub fn modulus_hex(&self) -> String {
        format!("{:#x}", self.modulus)
    }
}

/// An element of a particular GF(2^n). The modulus tag lets the checked
/// operations on [`Field`] reject elements from a different field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement {
    value: u16,
    modulus: u16,
}

impl FieldElement {
    pub fn value(self) -> u16 {
        self.value
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

struct Tables {
    mul: Vec<u8>,
    inv: Vec<u8>,
}

/// A concrete field with precomputed tables. Cloning is cheap.
#[derive(Clone)]
pub struct Field {
    spec: FieldSpec,
    tables: Arc<Tables>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field").field("spec", &self.spec).finish()
    }
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Eq for Field {}

impl Field {
    pub fn new(n: u32) -> Result<Self, FieldError> {
        Ok(Self::from_spec(FieldSpec::new(n)?))
    }

    pub fn from_spec(spec: FieldSpec) -> Self {
        let order = spec.order();
        let mut mul = vec![0u8; order * order];
        for a in 0..order {
            for b in a..order {
                let p = poly_rem(clmul(a as u32, b as u32), spec.modulus) as u8;
                mul[a * order + b] = p;
                mul[b * order + a] = p;
            }
        }
        let mut inv = vec![0u8; order];
        for a in 1..order {
            inv[a] = (1..order)
                .find(|&b| mul[a * order + b] == 1)
                .expect("nonzero elements of a field are invertible") as u8;
        }
        Self {
            spec,
            tables: Arc::new(Tables { mul, inv }),
        }
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }

    pub fn degree(&self) -> u32 {
        self.spec.n
    }

    pub fn order(&self) -> usize {
        self.spec.order()
    }

    fn tag(&self) -> u16 {
        self.spec.modulus as u16
    }

    pub fn element(&self, value: u32) -> Result<FieldElement, FieldError> {
        if value as usize >= self.order() {
            return Err(FieldError::OutOfRange {
                value,
                order: self.order() as u32,
            });
        }
        Ok(self.wrap(value as u16))
    }

    pub fn zero(&self) -> FieldElement {
        self.wrap(0)
    }

    pub fn one(&self) -> FieldElement {
        self.wrap(1)
    }

    pub fn elements(&self) -> impl Iterator<Item = FieldElement> + '_ {
        (0..self.order() as u16).map(move |v| self.wrap(v))
    }

    pub fn nonzero_elements(&self) -> impl Iterator<Item = FieldElement> + '_ {
        (1..self.order() as u16).map(move |v| self.wrap(v))
    }

    fn check(&self, x: FieldElement) -> Result<(), FieldError> {
        if x.modulus != self.tag() {
            return Err(FieldError::Mismatch(self.tag() as u32, x.modulus as u32));
        }
        Ok(())
    }

    pub fn contains(&self, x: FieldElement) -> bool {
        self.check(x).is_ok()
    }

    pub fn add(&self, x: FieldElement, y: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.wrap(x.value ^ y.value))
    }

    pub fn mul(&self, x: FieldElement, y: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.wrap(self.mul_raw(x.value, y.value)))
    }

    pub fn inv(&self, x: FieldElement) -> Result<FieldElement, FieldError> {
        self.check(x)?;
        if x.value == 0 {
            return Err(FieldError::ZeroInverse);
        }
        Ok(self.wrap(self.inv_raw(x.value)))
    }

    /// Square-and-multiply exponentiation; `pow(x, 0) = 1`.
    pub fn pow(&self, x: FieldElement, exp: u64) -> Result<FieldElement, FieldError> {
        self.check(x)?;
        let mut base = x.value;
        let mut acc = 1u16;
        let mut e = exp;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_raw(acc, base);
            }
            base = self.mul_raw(base, base);
            e >>= 1;
        }
        Ok(self.wrap(acc))
    }

    /// The norm map b ↦ b^(N-1): 0 at zero and 1 everywhere else.
    pub fn norm(&self, b: FieldElement) -> Result<u8, FieldError> {
        self.check(b)?;
        Ok(norm_raw(b.value))
    }

    pub(crate) fn wrap(&self, value: u16) -> FieldElement {
        debug_assert!((value as usize) < self.order());
        FieldElement {
            value,
            modulus: self.tag(),
        }
    }

    #[inline]
    pub(crate) fn mul_raw(&self, a: u16, b: u16) -> u16 {
        self.tables.mul[a as usize * self.order() + b as usize] as u16
    }

    #[inline]
    pub(crate) fn inv_raw(&self, a: u16) -> u16 {
        self.tables.inv[a as usize] as u16
    }
}

#[inline]
pub(crate) fn norm_raw(b: u16) -> u8 {
    (b != 0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Schoolbook polynomial product and long division, kept apart from the
    /// table-building path.
    fn oracle_mul(a: u32, b: u32, modulus: u32, n: u32) -> u32 {
        let mut prod = 0u32;
        for i in 0..n {
            for j in 0..n {
                if (a >> i) & 1 == 1 && (b >> j) & 1 == 1 {
                    prod ^= 1 << (i + j);
                }
            }
        }
        for bit in (n..2 * n).rev() {
            if (prod >> bit) & 1 == 1 {
                prod ^= modulus << (bit - n);
            }
        }
        prod
    }

    #[test]
    fn addition_examples() {
        let f2 = Field::new(2).unwrap();
        let e = |v| f2.element(v).unwrap();
        assert_eq!(f2.add(e(2), e(3)).unwrap(), e(1));
        for x in f2.elements() {
            assert_eq!(f2.add(x, f2.zero()).unwrap(), x);
        }
        let f3 = Field::new(3).unwrap();
        let five = f3.element(5).unwrap();
        assert_eq!(f3.add(five, five).unwrap(), f3.zero());
    }

    #[test]
    fn multiplication_examples() {
        let f = Field::new(2).unwrap();
        let e = |v| f.element(v).unwrap();
        assert_eq!(oracle_mul(2, 2, 0b111, 2), 3);
        assert_eq!(oracle_mul(2, 3, 0b111, 2), 1);
        assert_eq!(f.mul(e(2), e(2)).unwrap(), e(3));
        assert_eq!(f.mul(e(2), e(3)).unwrap(), e(1));
        assert_eq!(f.inv(e(2)).unwrap(), e(3));
        for x in f.elements() {
            assert_eq!(f.mul(x, f.one()).unwrap(), x);
        }
    }

    #[test]
    fn norm_examples() {
        let f = Field::new(2).unwrap();
        assert_eq!(f.norm(f.zero()).unwrap(), 0);
        for b in f.nonzero_elements() {
            assert_eq!(f.norm(b).unwrap(), 1);
        }
        let two = f.element(2).unwrap();
        assert_eq!(f.pow(two, 3).unwrap(), f.one());
    }

    #[test]
    fn tables_match_schoolbook_oracle() {
        for n in MIN_DEGREE..=MAX_DEGREE {
            let f = Field::new(n).unwrap();
            let m = f.spec().modulus();
            for a in 0..f.order() as u32 {
                for b in 0..f.order() as u32 {
                    assert_eq!(
                        f.mul_raw(a as u16, b as u16) as u32,
                        oracle_mul(a, b, m, n),
                        "n={n} a={a} b={b}"
                    );
                }
            }
        }
    }

    #[test]
    fn default_moduli() {
        let expected = [0x7, 0xb, 0x13, 0x25, 0x43, 0x83, 0x11b];
        for (n, want) in (2..=8).zip(expected) {
            assert_eq!(default_modulus(n).unwrap(), want, "n={n}");
        }
    }

    #[test]
    fn field_axioms_exhaustive_small() {
        for n in 2..=4 {
            let f = Field::new(n).unwrap();
            for x in f.elements() {
                for y in f.elements() {
                    assert_eq!(f.add(x, y).unwrap(), f.add(y, x).unwrap());
                    assert_eq!(f.mul(x, y).unwrap(), f.mul(y, x).unwrap());
                    for z in f.elements() {
                        let xy = f.mul(x, y).unwrap();
                        assert_eq!(f.mul(xy, z).unwrap(), f.mul(x, f.mul(y, z).unwrap()).unwrap());
                        let lhs = f.mul(x, f.add(y, z).unwrap()).unwrap();
                        let rhs = f.add(xy, f.mul(x, z).unwrap()).unwrap();
                        assert_eq!(lhs, rhs);
                    }
                }
            }
        }
    }

    #[test]
    fn lagrange_and_norm_agree() {
        for n in MIN_DEGREE..=MAX_DEGREE {
            let f = Field::new(n).unwrap();
            let exp = f.order() as u64 - 1;
            for x in f.elements() {
                let p = f.pow(x, exp).unwrap();
                assert_eq!(p.value() as u8, f.norm(x).unwrap());
            }
        }
    }

    #[test]
    fn multiplication_rows_are_permutations() {
        for n in MIN_DEGREE..=MAX_DEGREE {
            let f = Field::new(n).unwrap();
            for x in f.nonzero_elements() {
                let mut seen = vec![false; f.order()];
                for y in f.elements() {
                    seen[f.mul(x, y).unwrap().value() as usize] = true;
                }
                assert!(seen.iter().all(|&s| s));
                assert_eq!(f.mul(f.inv(x).unwrap(), x).unwrap(), f.one());
            }
        }
    }

    #[test]
    fn errors() {
        let f2 = Field::new(2).unwrap();
        let f3 = Field::new(3).unwrap();
        assert_eq!(f2.inv(f2.zero()), Err(FieldError::ZeroInverse));
        assert!(matches!(
            f2.add(f2.one(), f3.one()),
            Err(FieldError::Mismatch(_, _))
        ));
        assert!(matches!(f2.element(4), Err(FieldError::OutOfRange { .. })));
        assert_eq!(Field::new(1).unwrap_err(), FieldError::UnsupportedDegree(1));
        assert_eq!(Field::new(9).unwrap_err(), FieldError::UnsupportedDegree(9));
        // x^4 + x^2 + 1 = (x^2 + x + 1)^2
        assert_eq!(
            FieldSpec::with_modulus(4, 0b10101).unwrap_err(),
            FieldError::Reducible(0b10101)
        );
        assert_eq!(FieldSpec::new(4).unwrap().modulus_hex(), "0x13");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn axioms_random_large(n in 5u32..=8, a: u8, b: u8, c: u8) {
                let f = Field::new(n).unwrap();
                let mask = (f.order() - 1) as u8;
                let (x, y, z) = (
                    f.element((a & mask) as u32).unwrap(),
                    f.element((b & mask) as u32).unwrap(),
                    f.element((c & mask) as u32).unwrap(),
                );
                let xy = f.mul(x, y).unwrap();
                prop_assert_eq!(f.mul(xy, z).unwrap(), f.mul(x, f.mul(y, z).unwrap()).unwrap());
                prop_assert_eq!(
                    f.mul(x, f.add(y, z).unwrap()).unwrap(),
                    f.add(xy, f.mul(x, z).unwrap()).unwrap()
                );
            }
        }
    }
}
