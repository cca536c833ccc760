//! Sign-exact algebra of the transmitted states.
//!
//! Every state reachable in the protocol is a one- or two-term superposition
//! of computational basis kets with amplitudes ±1/√len, so kets are stored as
//! index/sign lists and all Born-rule probabilities are multiples of 1/4.

use std::fmt;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldElement, FieldError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QStateError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("L transformation requires a nonzero multiplier")]
    ZeroLambda,
    #[error("a pair needs two distinct elements, got {0} twice")]
    DegeneratePair(u16),
    #[error("malformed ket encoding: {0}")]
    Encoding(String),
}

/// Unordered pair {i, j} of distinct field elements, stored smaller first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    lo: FieldElement,
    hi: FieldElement,
}

impl Pair {
    pub fn new(i: FieldElement, j: FieldElement) -> Result<Self, QStateError> {
        if i == j {
            return Err(QStateError::DegeneratePair(i.value()));
        }
        if i.value() < j.value() {
            Ok(Self { lo: i, hi: j })
        } else {
            Ok(Self { lo: j, hi: i })
        }
    }

    pub fn lo(&self) -> FieldElement {
        self.lo
    }

    pub fn hi(&self) -> FieldElement {
        self.hi
    }

    /// i + j, the direction shared by every pair on this pair's line.
    pub fn difference(&self) -> u16 {
        self.lo.value() ^ self.hi.value()
    }

    pub fn contains(&self, x: FieldElement) -> bool {
        self.lo == x || self.hi == x
    }

    /// Number of unordered pairs in GF(N): N(N-1)/2.
    pub fn count(order: usize) -> usize {
        order * (order - 1) / 2
    }

    /// Inverse of [`Pair::rank`].
    pub fn from_rank(field: &Field, rank: usize) -> Self {
        let order = field.order();
        let mut r = rank;
        let mut lo = 0;
        while r >= order - 1 - lo {
            r -= order - 1 - lo;
            lo += 1;
        }
        let hi = lo + 1 + r;
        Self {
            lo: field.wrap(lo as u16),
            hi: field.wrap(hi as u16),
        }
    }

    /// Position of the pair in lexicographic order of (lo, hi).
    pub fn rank(&self, order: usize) -> usize {
        let lo = self.lo.value() as usize;
        let hi = self.hi.value() as usize;
        lo * (2 * order - lo - 1) / 2 + (hi - lo - 1)
    }

    pub fn all(field: &Field) -> Vec<Pair> {
        (0..Pair::count(field.order()))
            .map(|r| Pair::from_rank(field, r))
            .collect()
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.lo, self.hi)
    }
}

/// (|i⟩ + (-1)^s |j⟩)/√2 with the pair in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairState {
    pub pair: Pair,
    pub sign: u8,
}

impl PairState {
    pub fn new(i: FieldElement, j: FieldElement, sign: u8) -> Result<Self, QStateError> {
        Ok(Self {
            pair: Pair::new(i, j)?,
            sign: sign & 1,
        })
    }

    pub fn ket(&self) -> SparseKet {
        SparseKet::from_terms(&[(self.pair.lo, false), (self.pair.hi, self.sign == 1)])
    }
}

/// Canonical one- or two-term ket: indices ascending, first sign positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SparseKet {
    terms: [(FieldElement, bool); 2],
    len: u8,
}

impl SparseKet {
    pub fn basis(index: FieldElement) -> Self {
        Self {
            terms: [(index, false); 2],
            len: 1,
        }
    }

    /// Builds a ket from (index, negative) terms, restoring canonical form.
    ///
    /// Panics on anything other than one term or two distinct indices.
    pub fn from_terms(terms: &[(FieldElement, bool)]) -> Self {
        match *terms {
            [t] => Self::basis(t.0),
            [a, b] => {
                assert_ne!(a.0, b.0, "ket indices must be distinct");
                let (first, second) = if a.0 < b.0 { (a, b) } else { (b, a) };
                Self {
                    terms: [(first.0, false), (second.0, first.1 ^ second.1)],
                    len: 2,
                }
            }
            _ => panic!("sparse kets carry one or two terms"),
        }
    }

    pub fn terms(&self) -> &[(FieldElement, bool)] {
        &self.terms[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed amplitude numerator at `index` (-1, 0 or +1).
    fn coeff(&self, index: FieldElement) -> i32 {
        self.terms()
            .iter()
            .find(|t| t.0 == index)
            .map_or(0, |t| if t.1 { -1 } else { 1 })
    }

    /// Wire form: (u16 big-endian index, sign byte) per term.
    pub fn encode(&self, out: &mut Vec<u8>) {
        for &(idx, neg) in self.terms() {
            out.extend_from_slice(&idx.value().to_be_bytes());
            out.push(neg as u8);
        }
    }

    pub fn decode(field: &Field, bytes: &[u8]) -> Result<Self, QStateError> {
        if bytes.len() != 3 && bytes.len() != 6 {
            return Err(QStateError::Encoding(format!(
                "expected 3 or 6 bytes, got {}",
                bytes.len()
            )));
        }
        let mut terms = Vec::with_capacity(2);
        for chunk in bytes.chunks_exact(3) {
            let idx = u16::from_be_bytes([chunk[0], chunk[1]]);
            let elem = field.element(idx as u32)?;
            let neg = match chunk[2] {
                0 => false,
                1 => true,
                b => return Err(QStateError::Encoding(format!("bad sign byte {b}"))),
            };
            terms.push((elem, neg));
        }
        if terms.len() == 2 && terms[0].0 >= terms[1].0 {
            return Err(QStateError::Encoding("indices not strictly ascending".into()));
        }
        if terms[0].1 {
            return Err(QStateError::Encoding("first sign must be positive".into()));
        }
        Ok(Self::from_terms(&terms))
    }
}

impl fmt::Display for SparseKet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (idx, neg)) in self.terms().iter().enumerate() {
            match (k, neg) {
                (0, _) => write!(f, "|{idx}>")?,
                (_, false) => write!(f, " + |{idx}>")?,
                (_, true) => write!(f, " - |{idx}>")?,
            }
        }
        Ok(())
    }
}

/// Index a ∈ GF(N) and phase bit ℓ of the joint outcome Ψ_{aℓ}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BellIndex {
    pub a: FieldElement,
    pub l: u8,
}

/// |b⟩ ↦ (-1)^{f(b)} |b⟩ for an arbitrary f: GF(N) → GF(2), held as an
/// N-bit mask (bit b is f(b)).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiagonalPhase {
    mask: [u64; 4],
}

impl DiagonalPhase {
    pub const fn zero() -> Self {
        Self { mask: [0; 4] }
    }

    /// The Z operator: f = norm.
    pub fn norm(order: usize) -> Self {
        let mut p = Self::from_fn(order, |_| 1);
        p.mask[0] &= !1;
        p
    }

    pub fn from_fn(order: usize, mut f: impl FnMut(u16) -> u8) -> Self {
        let mut mask = [0u64; 4];
        for b in 0..order {
            if f(b as u16) & 1 == 1 {
                mask[b / 64] |= 1 << (b % 64);
            }
        }
        Self { mask }
    }

    /// Low 64 bits of the mask; enough for N ≤ 64.
    pub fn from_u64(bits: u64) -> Self {
        Self {
            mask: [bits, 0, 0, 0],
        }
    }

    /// Parses a hex mask such as `0x6`; rejects bits at or beyond `order`.
    pub fn from_hex(text: &str, order: usize) -> Result<Self, String> {
        let digits = text
            .trim()
            .strip_prefix("0x")
            .or_else(|| text.trim().strip_prefix("0X"))
            .unwrap_or(text.trim());
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(format!("invalid hex mask {text:?}"));
        }
        let mut mask = [0u64; 4];
        for (pos, c) in digits.chars().rev().enumerate() {
            let nibble = c.to_digit(16).unwrap() as u64;
            for bit in 0..4 {
                if (nibble >> bit) & 1 == 1 {
                    let b = pos * 4 + bit;
                    if b >= order {
                        return Err(format!("mask {text} sets bit {b} outside GF({order})"));
                    }
                    mask[b / 64] |= 1 << (b % 64);
                }
            }
        }
        Ok(Self { mask })
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::new();
        let mut started = false;
        for word in self.mask.iter().rev() {
            if started {
                s.push_str(&format!("{word:016x}"));
            } else if *word != 0 {
                s.push_str(&format!("{word:x}"));
                started = true;
            }
        }
        if s.is_empty() {
            s.push('0');
        }
        format!("0x{s}")
    }

    #[inline]
    pub fn get(&self, b: u16) -> u8 {
        ((self.mask[b as usize / 64] >> (b % 64)) & 1) as u8
    }

    pub fn is_zero(&self) -> bool {
        self.mask == [0; 4]
    }
}

fn nonzero(field: &Field, lambda: FieldElement) -> Result<(), QStateError> {
    field.inv(lambda).map(|_| ()).map_err(|e| match e {
        FieldError::ZeroInverse => QStateError::ZeroLambda,
        other => other.into(),
    })
}

/// L_{λβ}: |a⟩ ↦ |λa + β⟩.
pub fn apply_l(
    field: &Field,
    lambda: FieldElement,
    beta: FieldElement,
    ket: &SparseKet,
) -> Result<SparseKet, QStateError> {
    nonzero(field, lambda)?;
    field.add(beta, beta)?;
    let mut out = Vec::with_capacity(2);
    for &(idx, neg) in ket.terms() {
        field.add(idx, idx)?;
        let v = field.mul_raw(lambda.value(), idx.value()) ^ beta.value();
        out.push((field.wrap(v), neg));
    }
    Ok(SparseKet::from_terms(&out))
}

/// L_{λβ}^{-1} = L_{λ⁻¹, λ⁻¹β}.
pub fn apply_l_inverse(
    field: &Field,
    lambda: FieldElement,
    beta: FieldElement,
    ket: &SparseKet,
) -> Result<SparseKet, QStateError> {
    nonzero(field, lambda)?;
    let li = field.inv(lambda)?;
    let b = field.mul(li, beta)?;
    apply_l(field, li, b, ket)
}

/// X_a ∘ phase: the phase acts first, then the shift.
pub fn apply_error(
    field: &Field,
    shift: FieldElement,
    phase: &DiagonalPhase,
    ket: &SparseKet,
) -> Result<SparseKet, QStateError> {
    field.add(shift, shift)?;
    let mut out = Vec::with_capacity(2);
    for &(idx, neg) in ket.terms() {
        field.add(idx, idx)?;
        let flip = phase.get(idx.value()) == 1;
        out.push((field.wrap(idx.value() ^ shift.value()), neg ^ flip));
    }
    Ok(SparseKet::from_terms(&out))
}

/// Image of Ψ_{bκ} under I ⊗ L⁻¹ X_a Z^ℓ L, up to global phase:
/// index b + λ⁻¹a, with κ flipped iff ℓ = 1 and N(λb+β) ≠ N(λ(b+1)+β).
pub fn conjugate_bell(
    field: &Field,
    lambda: FieldElement,
    beta: FieldElement,
    shift: FieldElement,
    l: u8,
    b: FieldElement,
    kappa: u8,
) -> Result<BellIndex, QStateError> {
    let phase = if l & 1 == 1 {
        DiagonalPhase::norm(field.order())
    } else {
        DiagonalPhase::zero()
    };
    conjugate_bell_phase(field, lambda, beta, shift, &phase, b, kappa)
}

/// Same as [`conjugate_bell`] for an arbitrary diagonal phase f in place of
/// Z^ℓ: κ shifts by f(λb+β) + f(λ(b+1)+β).
pub fn conjugate_bell_phase(
    field: &Field,
    lambda: FieldElement,
    beta: FieldElement,
    shift: FieldElement,
    phase: &DiagonalPhase,
    b: FieldElement,
    kappa: u8,
) -> Result<BellIndex, QStateError> {
    nonzero(field, lambda)?;
    for x in [beta, shift, b] {
        field.add(x, x)?;
    }
    let (a, l) = conjugate_raw(
        field,
        lambda.value(),
        beta.value(),
        shift.value(),
        phase,
        b.value(),
    );
    Ok(BellIndex {
        a: field.wrap(a),
        l: (kappa ^ l) & 1,
    })
}

/// Unchecked core of the conjugation rule; returns (new index, κ flip).
#[inline]
pub(crate) fn conjugate_raw(
    field: &Field,
    lambda: u16,
    beta: u16,
    shift: u16,
    phase: &DiagonalPhase,
    b: u16,
) -> (u16, u8) {
    let index = b ^ field.mul_raw(field.inv_raw(lambda), shift);
    let v0 = field.mul_raw(lambda, b) ^ beta;
    let v1 = field.mul_raw(lambda, b ^ 1) ^ beta;
    (index, phase.get(v0) ^ phase.get(v1))
}

#[cfg(test)]
/// Reference κ flip for Z^ℓ, written directly in terms of the norm map.
pub(crate) fn norm_flip(field: &Field, lambda: u16, beta: u16, b: u16) -> u8 {
    use crate::field::norm_raw;
    norm_raw(field.mul_raw(lambda, b) ^ beta) ^ norm_raw(field.mul_raw(lambda, b ^ 1) ^ beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
    Outside,
}

impl Outcome {
    pub fn in_pair(self) -> bool {
        self != Outcome::Outside
    }
}

/// Outcome probabilities of the {P₊, P₋, I − P₊ − P₋} measurement, in
/// quarters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutcomeProbabilities {
    pub plus: u8,
    pub minus: u8,
    pub outside: u8,
}

impl OutcomeProbabilities {
    pub fn plus_ratio(&self) -> Ratio<u32> {
        Ratio::new(self.plus as u32, 4)
    }

    pub fn minus_ratio(&self) -> Ratio<u32> {
        Ratio::new(self.minus as u32, 4)
    }

    pub fn outside_ratio(&self) -> Ratio<u32> {
        Ratio::new(self.outside as u32, 4)
    }

    pub fn quarters(&self, outcome: Outcome) -> u8 {
        match outcome {
            Outcome::Plus => self.plus,
            Outcome::Minus => self.minus,
            Outcome::Outside => self.outside,
        }
    }
}

/// Born-rule probabilities for measuring `ket` along |i'⟩ ± |j'⟩.
pub fn probabilities(ket: &SparseKet, basis: &Pair) -> OutcomeProbabilities {
    let ci = ket.coeff(basis.lo());
    let cj = ket.coeff(basis.hi());
    // |⟨ψ±|ket⟩|² = (ci ± cj)² / (2 len); scale to quarters.
    let scale = 4 / (2 * ket.len() as i32);
    let plus = ((ci + cj) * (ci + cj) * scale) as u8;
    let minus = ((ci - cj) * (ci - cj) * scale) as u8;
    OutcomeProbabilities {
        plus,
        minus,
        outside: 4 - plus - minus,
    }
}

/// Samples an outcome using the caller's random stream.
pub fn measure<R: Rng + ?Sized>(ket: &SparseKet, basis: &Pair, rng: &mut R) -> Outcome {
    let p = probabilities(ket, basis);
    if p.plus == 4 {
        return Outcome::Plus;
    }
    if p.minus == 4 {
        return Outcome::Minus;
    }
    if p.outside == 4 {
        return Outcome::Outside;
    }
    let u = rng.gen_range(0..4u8);
    if u < p.plus {
        Outcome::Plus
    } else if u < p.plus + p.minus {
        Outcome::Minus
    } else {
        Outcome::Outside
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f2() -> Field {
        Field::new(2).unwrap()
    }

    #[test]
    fn l_examples() {
        let f = f2();
        let e = |v| f.element(v).unwrap();
        for lambda in f.nonzero_elements() {
            for beta in f.elements() {
                let k0 = apply_l(&f, lambda, beta, &SparseKet::basis(e(0))).unwrap();
                assert_eq!(k0, SparseKet::basis(beta));
                let k1 = apply_l(&f, lambda, beta, &SparseKet::basis(e(1))).unwrap();
                assert_eq!(k1, SparseKet::basis(f.add(lambda, beta).unwrap()));
            }
        }
        // λ = j - i, β = i sends |0⟩, |1⟩ to |i⟩, |j⟩.
        let (i, j) = (e(3), e(1));
        let lambda = f.add(j, i).unwrap();
        assert_eq!(apply_l(&f, lambda, i, &SparseKet::basis(e(0))).unwrap(), SparseKet::basis(i));
        assert_eq!(apply_l(&f, lambda, i, &SparseKet::basis(e(1))).unwrap(), SparseKet::basis(j));

        let ket = PairState::new(e(1), e(2), 1).unwrap().ket();
        assert_eq!(apply_l(&f, e(1), e(0), &ket).unwrap(), ket);

        // L_{2,1} = 2a + 1 with 2·{0,1,2,3} = {0,2,3,1}: images 1, 3, 2, 0.
        let oracle: Vec<u16> = [0u16, 2, 3, 1].iter().map(|v| v ^ 1).collect();
        let images: Vec<u16> = (0..4)
            .map(|v| {
                apply_l(&f, e(2), e(1), &SparseKet::basis(e(v))).unwrap().terms()[0]
                    .0
                    .value()
            })
            .collect();
        assert_eq!(images, oracle);
        assert_eq!(images, vec![1, 3, 2, 0]);

        assert_eq!(
            apply_l(&f, e(0), e(1), &ket).unwrap_err(),
            QStateError::ZeroLambda
        );
    }

    #[test]
    fn l_inverse_roundtrip_all_kets_n3() {
        let f = Field::new(3).unwrap();
        for lambda in f.nonzero_elements() {
            for beta in f.elements() {
                for pair in Pair::all(&f) {
                    for s in 0..2 {
                        let ket = PairState { pair, sign: s }.ket();
                        let there = apply_l(&f, lambda, beta, &ket).unwrap();
                        let back = apply_l_inverse(&f, lambda, beta, &there).unwrap();
                        assert_eq!(back, ket);
                    }
                }
            }
        }
    }

    #[test]
    fn error_examples() {
        let f = f2();
        let e = |v| f.element(v).unwrap();
        let z = DiagonalPhase::norm(4);
        let ket = PairState::new(e(0), e(1), 0).unwrap().ket();
        assert_eq!(apply_error(&f, e(0), &DiagonalPhase::zero(), &ket).unwrap(), ket);
        assert_eq!(
            apply_error(&f, e(0), &z, &ket).unwrap(),
            PairState::new(e(0), e(1), 1).unwrap().ket()
        );
        let ket23 = PairState::new(e(2), e(3), 0).unwrap().ket();
        assert_eq!(apply_error(&f, e(0), &z, &ket23).unwrap(), ket23);
        // Shifting by i + j swaps the pair without touching the encoded bit.
        let ket01m = PairState::new(e(0), e(1), 1).unwrap().ket();
        assert_eq!(apply_error(&f, e(1), &DiagonalPhase::zero(), &ket01m).unwrap(), ket01m);
    }

    #[test]
    fn conjugation_examples() {
        let f = f2();
        let e = |v| f.element(v).unwrap();
        for lambda in f.nonzero_elements() {
            for beta in f.elements() {
                for a in f.elements() {
                    let r = conjugate_bell(&f, lambda, beta, a, 0, e(0), 1).unwrap();
                    let expect = f.mul(f.inv(lambda).unwrap(), a).unwrap();
                    assert_eq!(r, BellIndex { a: expect, l: 1 });
                }
            }
        }
        assert_eq!(
            conjugate_bell(&f, e(2), e(1), e(2), 1, e(0), 0).unwrap(),
            BellIndex { a: e(1), l: 0 }
        );
        assert_eq!(
            conjugate_bell(&f, e(1), e(0), e(0), 1, e(0), 0).unwrap(),
            BellIndex { a: e(0), l: 1 }
        );
        assert_eq!(
            conjugate_bell(&f, e(0), e(0), e(0), 1, e(0), 0).unwrap_err(),
            QStateError::ZeroLambda
        );
    }

    #[test]
    fn generalized_flip_reduces_to_norm_rule() {
        for n in 2..=3 {
            let f = Field::new(n).unwrap();
            let z = DiagonalPhase::norm(f.order());
            for lambda in 1..f.order() as u16 {
                for beta in 0..f.order() as u16 {
                    for b in 0..f.order() as u16 {
                        let (_, flip) = conjugate_raw(&f, lambda, beta, 0, &z, b);
                        assert_eq!(flip, norm_flip(&f, lambda, beta, b));
                    }
                }
            }
        }
    }

    #[test]
    fn conjugation_is_a_permutation_on_kept_outcomes() {
        let f = Field::new(3).unwrap();
        for lambda in f.nonzero_elements() {
            for beta in f.elements() {
                for a in f.elements() {
                    for l in 0..2 {
                        let mut images = std::collections::HashSet::new();
                        for b in f.elements() {
                            for kappa in 0..2 {
                                let r = conjugate_bell(&f, lambda, beta, a, l, b, kappa).unwrap();
                                assert!(images.insert(r));
                            }
                        }
                        assert_eq!(images.len(), 2 * f.order());
                    }
                }
            }
        }
    }

    #[test]
    fn probability_examples() {
        let f = Field::new(3).unwrap();
        let e = |v| f.element(v).unwrap();
        let ket = PairState::new(e(2), e(5), 0).unwrap().ket();
        let same = Pair::new(e(5), e(2)).unwrap();
        assert_eq!(
            probabilities(&ket, &same),
            OutcomeProbabilities { plus: 4, minus: 0, outside: 0 }
        );
        let disjoint = Pair::new(e(0), e(1)).unwrap();
        assert_eq!(
            probabilities(&ket, &disjoint),
            OutcomeProbabilities { plus: 0, minus: 0, outside: 4 }
        );
        // |⟨ψ±|m⟩|² = 1/2 for m in the measured pair.
        let single = SparseKet::basis(e(1));
        let p = probabilities(&single, &disjoint);
        assert_eq!(p, OutcomeProbabilities { plus: 2, minus: 2, outside: 0 });
        assert_eq!(p.plus_ratio(), Ratio::new(1, 2));
        assert_eq!(p.outside_ratio(), Ratio::new(0, 1));
        let minus = PairState::new(e(2), e(5), 1).unwrap().ket();
        assert_eq!(probabilities(&minus, &same).minus, 4);
        // One shared index of a two-term ket.
        let overlap = Pair::new(e(2), e(7)).unwrap();
        assert_eq!(
            probabilities(&ket, &overlap),
            OutcomeProbabilities { plus: 1, minus: 1, outside: 2 }
        );
    }

    #[test]
    fn measurement_frequencies_match_born_rule() {
        let f = f2();
        let e = |v| f.element(v).unwrap();
        let basis = Pair::new(e(1), e(3)).unwrap();
        let cases = [
            (PairState::new(e(1), e(2), 1).unwrap().ket(), [0.25, 0.25, 0.5]),
            (SparseKet::basis(e(1)), [0.5, 0.5, 0.0]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        for (ket, expected) in cases {
            let mut counts = [0usize; 3];
            for _ in 0..trials {
                match measure(&ket, &basis, &mut rng) {
                    Outcome::Plus => counts[0] += 1,
                    Outcome::Minus => counts[1] += 1,
                    Outcome::Outside => counts[2] += 1,
                }
            }
            for (count, p) in counts.iter().zip(expected) {
                let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
                assert!((*count as f64 - trials as f64 * p).abs() <= 4.0 * sigma);
            }
        }
    }

    #[test]
    fn pair_rank_roundtrip() {
        let f = Field::new(4).unwrap();
        for r in 0..Pair::count(16) {
            assert_eq!(Pair::from_rank(&f, r).rank(16), r);
        }
    }

    #[test]
    fn hex_masks() {
        let p = DiagonalPhase::from_hex("0x6", 4).unwrap();
        assert_eq!((p.get(0), p.get(1), p.get(2), p.get(3)), (0, 1, 1, 0));
        assert_eq!(p.to_hex(), "0x6");
        assert!(DiagonalPhase::from_hex("0x10", 4).is_err());
        assert_eq!(DiagonalPhase::norm(4).to_hex(), "0xe");
        let wide = DiagonalPhase::norm(256);
        assert_eq!(DiagonalPhase::from_hex(&wide.to_hex(), 256).unwrap(), wide);
    }

    #[test]
    fn ket_wire_roundtrip_and_rejects() {
        let f = f2();
        let e = |v| f.element(v).unwrap();
        let ket = PairState::new(e(3), e(1), 1).unwrap().ket();
        let mut buf = Vec::new();
        ket.encode(&mut buf);
        assert_eq!(buf, vec![0, 1, 0, 0, 3, 1]);
        assert_eq!(SparseKet::decode(&f, &buf).unwrap(), ket);
        assert!(SparseKet::decode(&f, &[0, 9, 0]).is_err());
        assert!(SparseKet::decode(&f, &[0, 3, 0, 0, 1, 0]).is_err());
        assert!(SparseKet::decode(&f, &[0, 1, 1]).is_err());
        assert!(SparseKet::decode(&f, &[0, 1]).is_err());
    }
}
