//! Exhaustive self-checks backing the `verify` subcommand.
//!
//! The conjugation check builds L, X_a and Z^ℓ as dense N×N integer
//! matrices, multiplies them out, applies I ⊗ (L⁻¹ X_a Z^ℓ L) to the dense
//! 2N-vector of Ψ_{bκ}, and identifies the result among the Ψ basis vectors.
//! Nothing here calls the index formula in [`crate::qstates`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::field::{Field, FieldError};
use crate::qstates::{conjugate_bell, BellIndex};

type Matrix = Vec<Vec<i32>>;

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![0; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == 0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn transpose(a: &Matrix) -> Matrix {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
}

/// Column m holds the image of |m⟩.
fn permutation(order: usize, image: impl Fn(usize) -> usize) -> Matrix {
    let mut m = vec![vec![0; order]; order];
    for col in 0..order {
        m[image(col)][col] = 1;
    }
    m
}

fn z_power(field: &Field, l: u8) -> Matrix {
    let order = field.order();
    let mut m = vec![vec![0; order]; order];
    for (b, row) in m.iter_mut().enumerate() {
        // (-1)^{ℓ b^{N-1}}
        let nb = field.pow(field.element(b as u32).unwrap(), order as u64 - 1).unwrap();
        row[b] = if l == 1 && nb.value() == 1 { -1 } else { 1 };
    }
    m
}

/// Dense 2N-vector of Ψ_{aℓ} = (|0,a⟩ + (-1)^ℓ |1,a+1⟩)/√2 (unnormalized).
fn psi(field: &Field, a: usize, l: u8) -> Vec<i32> {
    let order = field.order();
    let a1 = field
        .add(field.element(a as u32).unwrap(), field.one())
        .unwrap()
        .value() as usize;
    let mut v = vec![0; 2 * order];
    v[a] = 1;
    v[order + a1] = if l == 1 { -1 } else { 1 };
    v
}

/// Oracle: the Bell index (a', κ') with (I ⊗ L⁻¹ X_a Z^ℓ L) Ψ_{bκ} = ±Ψ_{a'κ'}.
pub fn dense_conjugation(
    field: &Field,
    lambda: u16,
    beta: u16,
    shift: u16,
    l: u8,
    b: u16,
    kappa: u8,
) -> Option<(u16, u8)> {
    let order = field.order();
    let el = |v: usize| field.element(v as u32).unwrap();
    let lam = el(lambda as usize);
    let bet = el(beta as usize);
    let l_mat = permutation(order, |m| {
        field.add(field.mul(lam, el(m)).unwrap(), bet).unwrap().value() as usize
    });
    let x_mat = permutation(order, |m| {
        field.add(el(m), el(shift as usize)).unwrap().value() as usize
    });
    let op = matmul(
        &transpose(&l_mat),
        &matmul(&x_mat, &matmul(&z_power(field, l), &l_mat)),
    );
    let input = psi(field, b as usize, kappa);
    let mut out = vec![0; 2 * order];
    for half in 0..2 {
        for i in 0..order {
            out[half * order + i] = (0..order)
                .map(|j| op[i][j] * input[half * order + j])
                .sum();
        }
    }
    for a in 0..order {
        for k in 0..2u8 {
            let cand = psi(field, a, k);
            let dot: i32 = cand.iter().zip(&out).map(|(x, y)| x * y).sum();
            if dot.abs() == 2 {
                return Some((a as u16, k));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugationReport {
    pub n: u32,
    pub checked: usize,
    pub mismatches: usize,
    pub exhaustive: bool,
}

impl ConjugationReport {
    pub fn ok(&self) -> bool {
        self.mismatches == 0
    }
}

fn check_one(field: &Field, t: [u16; 6]) -> Result<bool, FieldError> {
    let [lambda, beta, shift, l, b, kappa] = t;
    let e = |v: u16| field.element(v as u32);
    let got = conjugate_bell(field, e(lambda)?, e(beta)?, e(shift)?, l as u8, e(b)?, kappa as u8)
        .expect("lambda is nonzero");
    let want = dense_conjugation(field, lambda, beta, shift, l as u8, b, kappa as u8);
    Ok(want == Some((got.a.value(), got.l)))
}

/// Every (λ ≠ 0, β, a, ℓ, b, κ) with b over the whole field: (N-1)·N·N·2·N·2
/// tuples. b ∈ {0, 1} is the case the protocol uses; the rule holds for all b.
pub fn conjugation_exhaustive(field: &Field) -> ConjugationReport {
    let order = field.order() as u16;
    let mut checked = 0;
    let mut mismatches = 0;
    for lambda in 1..order {
        for beta in 0..order {
            for shift in 0..order {
                for l in 0..2 {
                    for b in 0..order {
                        for kappa in 0..2 {
                            checked += 1;
                            if !check_one(field, [lambda, beta, shift, l, b, kappa]).unwrap() {
                                mismatches += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ConjugationReport {
        n: field.degree(),
        checked,
        mismatches,
        exhaustive: true,
    }
}

/// Uniformly random tuples (b over all of GF(N)).
pub fn conjugation_random(field: &Field, samples: usize, seed: u64) -> ConjugationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = field.order() as u16;
    let mut mismatches = 0;
    for _ in 0..samples {
        let t = [
            rng.gen_range(1..order),
            rng.gen_range(0..order),
            rng.gen_range(0..order),
            rng.gen_range(0..2),
            rng.gen_range(0..order),
            rng.gen_range(0..2),
        ];
        if !check_one(field, t).unwrap() {
            mismatches += 1;
        }
    }
    ConjugationReport {
        n: field.degree(),
        checked: samples,
        mismatches,
        exhaustive: false,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldAxiomReport {
    pub n: u32,
    pub checked: usize,
    pub failures: usize,
}

/// Commutativity, associativity, distributivity, inverses and Lagrange.
/// Exhaustive over triples for n ≤ 4, otherwise over `samples` random triples.
pub fn field_axioms(field: &Field, samples: usize, seed: u64) -> FieldAxiomReport {
    let order = field.order() as u32;
    let mut triples: Vec<[u32; 3]> = Vec::new();
    if field.degree() <= 4 {
        for x in 0..order {
            for y in 0..order {
                for z in 0..order {
                    triples.push([x, y, z]);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            triples.push([
                rng.gen_range(0..order),
                rng.gen_range(0..order),
                rng.gen_range(0..order),
            ]);
        }
    }
    let mut failures = 0;
    let e = |v| field.element(v).unwrap();
    for &[x, y, z] in &triples {
        let (x, y, z) = (e(x), e(y), e(z));
        let ok = (|| -> Result<bool, FieldError> {
            let xy = field.mul(x, y)?;
            Ok(xy == field.mul(y, x)?
                && field.add(x, y)? == field.add(y, x)?
                && field.mul(xy, z)? == field.mul(x, field.mul(y, z)?)?
                && field.add(field.add(x, y)?, z)? == field.add(x, field.add(y, z)?)?
                && field.mul(x, field.add(y, z)?)? == field.add(xy, field.mul(x, z)?)?)
        })()
        .unwrap_or(false);
        if !ok {
            failures += 1;
        }
    }
    let mut checked = triples.len();
    for x in field.nonzero_elements() {
        checked += 1;
        let inv_ok = field.mul(field.inv(x).unwrap(), x).unwrap() == field.one();
        let lagrange_ok = field.pow(x, order as u64 - 1).unwrap() == field.one();
        if !(inv_ok && lagrange_ok) {
            failures += 1;
        }
    }
    FieldAxiomReport {
        n: field.degree(),
        checked,
        failures,
    }
}

/// Convenience for callers that only need the Bell image from the oracle.
pub fn oracle_bell(field: &Field, t: [u16; 6]) -> Option<BellIndex> {
    let [lambda, beta, shift, l, b, kappa] = t;
    dense_conjugation(field, lambda, beta, shift, l as u8, b, kappa as u8).map(|(a, k)| BellIndex {
        a: field.element(a as u32).unwrap(),
        l: k,
    })
}
