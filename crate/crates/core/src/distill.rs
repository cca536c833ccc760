//! Two-way post-processing of the raw key: k rounds of pairwise parity
//! comparison (advantage distillation), then r-bit parity blocks, with the
//! matching closed-form error-matrix recursion and parameter selection.
//!
//! Every position carries a Pauli-frame label (x, z). Bob's bit differs from
//! Alice's exactly when z = 1. A parity round keeps the first position of a
//! pair iff z₁ ⊕ z₂ = 0 and relabels it (x₁ ⊕ x₂, z₁); a block of r positions
//! becomes one bit whose z is the parity of the z's and whose x is the
//! majority of the x's.

use rand::seq::SliceRandom;
use statrs::function::factorial::ln_binomial;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::analysis::ErrorMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("error matrix {0:?} has p_I + p_x + p_y + p_z = 0 after recursion")]
    Degenerate(ErrorMatrix),
    #[error("block size r must be odd and at least 1, got {0}")]
    BadBlockSize(u64),
    #[error("key of length {have} is too short: k = {k}, r = {r} needs at least {need}")]
    KeyTooShort { have: usize, need: usize, k: u32, r: u64 },
    #[error("invalid error matrix {0:?}")]
    InvalidMatrix(ErrorMatrix),
    #[error("invalid distillation parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillParams {
    pub k: u32,
    pub r: u64,
    /// Residual error budget handed to the final correction stage.
    pub css_target: f64,
    /// Share of the budget given to Z errors; sets r.
    pub z_budget: f64,
    /// Factor standing in for "much greater than".
    pub margin: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        Self {
            k: 0,
            r: 1,
            css_target: 0.01,
            z_budget: 0.005,
            margin: 10.0,
        }
    }
}

impl DistillParams {
    pub fn validate(&self) -> Result<(), DistillError> {
        if self.r == 0 || self.r % 2 == 0 {
            return Err(DistillError::BadBlockSize(self.r));
        }
        if !(self.z_budget > 0.0 && self.z_budget < self.css_target) {
            return Err(DistillError::Params(format!(
                "need 0 < z_budget ({}) < css_target ({})",
                self.z_budget, self.css_target
            )));
        }
        if !(self.margin > 0.0) {
            return Err(DistillError::Params("margin must be positive".into()));
        }
        Ok(())
    }
}

/// A, B, C, D of the k-round recursion, rescaled by a common positive factor
/// so that large exponents do not underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// (p_I + p_x)^{2^k}, (p_I - p_x)^{2^k}, (p_y + p_z)^{2^k}, (p_y - p_z)^{2^k},
/// all divided by the same power of max(p_I + p_x, p_y + p_z).
pub fn recursion_terms(m: &ErrorMatrix, k: u32) -> RecursionTerms {
    let s1 = m.p_i + m.p_x;
    let s2 = m.p_y + m.p_z;
    let scale = s1.max(s2);
    if scale <= 0.0 {
        return RecursionTerms { a: 0.0, b: 0.0, c: 0.0, d: 0.0 };
    }
    let pw = |x: f64| -> f64 {
        let mut v = x / scale;
        for _ in 0..k {
            v *= v;
        }
        v
    };
    RecursionTerms {
        a: pw(s1),
        b: pw(m.p_i - m.p_x),
        c: pw(s2),
        d: pw(m.p_y - m.p_z),
    }
}

/// Error matrix after k parity rounds, in closed form.
pub fn ep_recursion(m: &ErrorMatrix, k: u32) -> Result<ErrorMatrix, DistillError> {
    if k == 0 {
        return Ok(*m);
    }
    let t = recursion_terms(m, k);
    let norm = 2.0 * (t.a + t.c);
    if !(norm > 0.0) {
        return Err(DistillError::Degenerate(*m));
    }
    Ok(ErrorMatrix {
        p_i: (t.a + t.b) / norm,
        p_z: (t.c + t.d) / norm,
        p_x: (t.a - t.b) / norm,
        p_y: (t.c - t.d) / norm,
    })
}

/// One parity round written directly from the label rule.
pub fn ep_step(m: &ErrorMatrix) -> Result<ErrorMatrix, DistillError> {
    let keep = (m.p_i + m.p_x).powi(2) + (m.p_y + m.p_z).powi(2);
    if !(keep > 0.0) {
        return Err(DistillError::Degenerate(*m));
    }
    Ok(ErrorMatrix {
        p_i: (m.p_i * m.p_i + m.p_x * m.p_x) / keep,
        p_x: 2.0 * m.p_i * m.p_x / keep,
        p_z: (m.p_z * m.p_z + m.p_y * m.p_y) / keep,
        p_y: 2.0 * m.p_y * m.p_z / keep,
    })
}

/// Probability that a pair survives one parity round (z₁ = z₂).
pub fn pair_survival(m: &ErrorMatrix) -> f64 {
    (m.p_i + m.p_x).powi(2) + (m.p_y + m.p_z).powi(2)
}

/// Largest block size that `majority_failure` sums term by term. Beyond it
/// the Hoeffding bound exp(-2r(1/2 - p)²) is used instead.
pub const EXACT_TAIL_MAX: u64 = 10_000_000;

/// P(Binomial(r, p) > r/2), summed from the first tail term (taken in log
/// space) with the pmf ratio recurrence.
pub fn majority_failure(r: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let q = 1.0 - p;
    let j0 = r / 2 + 1;
    let mut term = (ln_binomial(r, j0) + j0 as f64 * p.ln() + (r - j0) as f64 * q.ln()).exp();
    let mode = ((r + 1) as f64 * p).floor() as u64;
    let mut sum = 0.0;
    for j in j0..=r {
        sum += term;
        if j >= mode && term <= sum * 1e-17 {
            break;
        }
        term *= (r - j) as f64 / (j + 1) as f64 * (p / q);
    }
    sum.min(1.0)
}

/// Majority failure for any r: exact up to [`EXACT_TAIL_MAX`], otherwise
/// the Hoeffding upper bound. The flag is true when the value is a bound.
pub fn majority_failure_or_bound(r: u64, p: f64) -> (f64, bool) {
    if r <= EXACT_TAIL_MAX || p <= 0.0 {
        return (majority_failure(r, p), false);
    }
    if p >= 0.5 {
        return (1.0, true);
    }
    ((-2.0 * r as f64 * (0.5 - p).powi(2)).exp(), true)
}

/// Probability that the parity of r independent bits, each set with
/// probability p, is odd.
pub fn parity_failure(r: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 0.5 {
        // (1 - 2p)^r with a non-positive base.
        return (1.0 - (1.0 - 2.0 * p).powf(r as f64)) / 2.0;
    }
    -(r as f64 * (-2.0 * p).ln_1p()).exp_m1() / 2.0
}

/// Failure probabilities after replacing blocks of r by their parity:
/// (majority of X components wrong, parity of Z components odd).
pub fn majority_stage(m: &ErrorMatrix, r: u64) -> Result<(f64, f64), DistillError> {
    if r == 0 || r % 2 == 0 {
        return Err(DistillError::BadBlockSize(r));
    }
    Ok((majority_failure(r, m.x_error()), parity_failure(r, m.bit_error())))
}

/// (p_I - p_x)² > (p_I + p_x)(p_y + p_z), strict.
pub fn check_secure_condition(m: &ErrorMatrix) -> bool {
    (m.p_i - m.p_x).powi(2) > (m.p_i + m.p_x) * (m.p_y + m.p_z)
}

pub const DEFAULT_K_MAX: u32 = 30;

/// Natural logs of A, B + D, C and A + C after k rounds. Entries are -inf
/// for zero and NaN never occurs; `b_plus_d` is None when B + D ≤ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTerms {
    pub a: f64,
    pub b_plus_d: Option<f64>,
    pub c: f64,
    pub a_plus_c: f64,
}

fn log_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_terms(m: &ErrorMatrix, k: u32) -> LogTerms {
    let pow2k = (k as f64).exp2();
    let lg = |x: f64| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
    let a = pow2k * lg(m.p_i + m.p_x);
    let c = pow2k * lg(m.p_y + m.p_z);
    let b_plus_d = if k == 0 {
        let v = (m.p_i - m.p_x) + (m.p_y - m.p_z);
        (v > 0.0).then(|| v.ln())
    } else {
        // Even powers: both terms are non-negative.
        let lb = pow2k * lg((m.p_i - m.p_x).abs());
        let ld = pow2k * lg((m.p_y - m.p_z).abs());
        let s = log_add(lb, ld);
        (s > f64::NEG_INFINITY).then_some(s)
    };
    LogTerms {
        a,
        b_plus_d,
        c,
        a_plus_c: log_add(a, c),
    }
}

/// Parameters picked for one matrix, with every inequality reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSelection {
    pub params: DistillParams,
    pub feasible: bool,
    /// Matrix after k parity rounds.
    pub after_parity: ErrorMatrix,
    /// 2r(1/2 - p_x - p_y)² at the chosen (k, r).
    pub spin_margin: f64,
    /// (B + D)² / (400 C (A + C)); infinite when C = 0.
    pub existence_ratio: f64,
    pub x_fail: f64,
    /// True when x_fail is the Hoeffding bound rather than the exact tail.
    pub x_fail_is_bound: bool,
    pub z_fail: f64,
    /// x_fail + z_fail <= css_target.
    pub within_budget: bool,
    pub note: Option<String>,
}

/// Largest odd integer ≤ exp(ln_x), if it is at least 1 and fits in u64.
fn largest_odd_at_most(ln_x: f64) -> Result<Option<u64>, ()> {
    if !(ln_x >= 0.0) {
        return Ok(None);
    }
    if ln_x >= 63.0 * std::f64::consts::LN_2 {
        return Err(());
    }
    let r = ln_x.exp().floor() as u64;
    Ok(Some(if r % 2 == 0 { r.max(2) - 1 } else { r }))
}

/// Smallest k ≤ k_max for which the block size r = (largest odd integer
/// ≤ z_budget / (p_y + p_z)) clears both "≫" tests at the configured margin.
/// All tests run on logarithms, so large k does not underflow.
pub fn select_params(m: &ErrorMatrix, base: &DistillParams, k_max: u32) -> Result<ParamSelection, DistillError> {
    base.validate()?;
    if !m.is_valid(1e-9) {
        return Err(DistillError::InvalidMatrix(*m));
    }
    let ln_margin = base.margin.ln();
    let mut note = None;
    let mut last = None;
    for k in 0..=k_max {
        let after = ep_recursion(m, k)?;
        let t = log_terms(m, k);
        let ln_existence = t
            .b_plus_d
            .map(|bd| 2.0 * bd - t.c - t.a_plus_c - 400f64.ln())
            .unwrap_or(f64::NEG_INFINITY);
        // p_y + p_z = C / (A + C) and 1/2 - p_x - p_y = (B + D) / (2(A + C)).
        let ln_z = t.c - t.a_plus_c;
        let ln_gap = t.b_plus_d.map(|bd| bd - 2f64.ln() - t.a_plus_c);
        let r = if ln_z > f64::NEG_INFINITY {
            largest_odd_at_most(base.z_budget.ln() - ln_z)
        } else if after.x_error() <= 0.0 {
            Ok(Some(1))
        } else if let Some(g) = ln_gap {
            // No Z errors left: the smallest odd r that clears the X test.
            let need = (ln_margin - 2f64.ln() - 2.0 * g).exp().ceil();
            if need < 9.0e18 {
                Ok(Some((need as u64).max(1) | 1))
            } else {
                Err(())
            }
        } else {
            Ok(None)
        };
        let r = match r {
            Ok(Some(r)) => r,
            Ok(None) => {
                last = Some((k, after, ln_existence.exp()));
                continue;
            }
            Err(()) => {
                note.get_or_insert_with(|| format!("block size at k = {k} exceeds 2^63"));
                last = Some((k, after, ln_existence.exp()));
                continue;
            }
        };
        let ln_spin = ln_gap.map_or(f64::NEG_INFINITY, |g| 2f64.ln() + (r as f64).ln() + 2.0 * g);
        let trivially_clean = after.bit_error() <= 0.0 && after.x_error() <= 0.0;
        let passes = trivially_clean || (ln_spin >= ln_margin && ln_existence >= ln_margin);
        if passes {
            let (x_fail, x_fail_is_bound) = majority_failure_or_bound(r, after.x_error());
            let z_fail = parity_failure(r, after.bit_error());
            return Ok(ParamSelection {
                params: DistillParams { k, r, ..*base },
                feasible: true,
                after_parity: after,
                spin_margin: ln_spin.exp(),
                existence_ratio: ln_existence.exp(),
                x_fail,
                x_fail_is_bound,
                z_fail,
                within_budget: x_fail + z_fail <= base.css_target,
                note: trivially_clean.then(|| "error-free after parity rounds".to_string()),
            });
        }
        last = Some((k, after, ln_existence.exp()));
    }
    let (k, after, existence_ratio) = last.expect("k_max >= 0 gives at least one iteration");
    let reason = format!("no k <= {k_max} satisfies both margin tests");
    Ok(ParamSelection {
        params: DistillParams { k, r: 1, ..*base },
        feasible: false,
        after_parity: after,
        spin_margin: 2.0 * (0.5 - after.x_error()).powi(2),
        existence_ratio,
        x_fail: f64::NAN,
        x_fail_is_bound: false,
        z_fail: f64::NAN,
        within_budget: false,
        note: Some(match note {
            Some(n) => format!("{reason}; {n}"),
            None => reason,
        }),
    })
}

/// Evaluates caller-chosen (k, r) with the same tests `select_params` uses.
pub fn evaluate_params(m: &ErrorMatrix, params: &DistillParams) -> Result<ParamSelection, DistillError> {
    params.validate()?;
    if !m.is_valid(1e-9) {
        return Err(DistillError::InvalidMatrix(*m));
    }
    let (k, r) = (params.k, params.r);
    let after = ep_recursion(m, k)?;
    let t = log_terms(m, k);
    let ln_existence = t
        .b_plus_d
        .map(|bd| 2.0 * bd - t.c - t.a_plus_c - 400f64.ln())
        .unwrap_or(f64::NEG_INFINITY);
    let ln_spin = t
        .b_plus_d
        .map_or(f64::NEG_INFINITY, |bd| 2f64.ln() + (r as f64).ln() + 2.0 * (bd - 2f64.ln() - t.a_plus_c));
    let ln_margin = params.margin.ln();
    let trivially_clean = after.bit_error() <= 0.0 && after.x_error() <= 0.0;
    let feasible = trivially_clean || (ln_spin >= ln_margin && ln_existence >= ln_margin);
    let (x_fail, x_fail_is_bound) = majority_failure_or_bound(r, after.x_error());
    let z_fail = parity_failure(r, after.bit_error());
    Ok(ParamSelection {
        params: *params,
        feasible,
        after_parity: after,
        spin_margin: ln_spin.exp(),
        existence_ratio: ln_existence.exp(),
        x_fail,
        x_fail_is_bound,
        z_fail,
        within_budget: x_fail + z_fail <= params.css_target,
        note: (!feasible).then(|| format!("k = {k}, r = {r} misses a margin test")),
    })
}

/// Selection (automatic or fixed), per-round matrices and, when `simulate`
/// gives a length, a run on that many i.i.d. labeled positions.
pub fn distill_report(
    m: &ErrorMatrix,
    params: &DistillParams,
    auto: bool,
    k_max: u32,
    simulate: Option<(usize, u64)>,
) -> Result<DistillReport, DistillError> {
    let selection = if auto {
        select_params(m, params, k_max)?
    } else {
        evaluate_params(m, params)?
    };
    let k = selection.params.k;
    let per_round = (0..=k).map(|j| ep_recursion(m, j)).collect::<Result<Vec<_>, _>>()?;
    let simulation = match simulate {
        Some((len, seed)) if selection.feasible || !auto => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keys = LabeledKey::sample_iid(m, len, &mut rng);
            let out = simulate_distillation(&keys, &selection.params, &mut rng)?;
            Some(SimulationSummary {
                input_length: len,
                expected_lengths: expected_lengths(m, k, len)?,
                lengths: out.lengths,
                surviving_length: out.surviving_length,
                disagreement_rate: out.disagreement_rate,
                after_parity: out.after_parity,
                final_labels: out.final_labels,
                residual_within_budget: out.disagreement_rate + selection.x_fail <= params.css_target,
            })
        }
        _ => None,
    };
    Ok(DistillReport {
        input: *m,
        secure_condition: check_secure_condition(m),
        per_round,
        selection,
        simulation,
    })
}

/// Bits plus Pauli-frame labels, one entry per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledKey {
    pub alice: Vec<u8>,
    pub x: Vec<u8>,
    pub z: Vec<u8>,
}

impl LabeledKey {
    /// Labels from two bit strings; X components are unknown and set to 0.
    pub fn from_bits(alice: &[u8], bob: &[u8]) -> Self {
        assert_eq!(alice.len(), bob.len());
        Self {
            alice: alice.to_vec(),
            x: vec![0; alice.len()],
            z: alice.iter().zip(bob).map(|(a, b)| a ^ b).collect(),
        }
    }

    /// i.i.d. labels drawn from `m` with uniform Alice bits.
    pub fn sample_iid<R: Rng + ?Sized>(m: &ErrorMatrix, len: usize, rng: &mut R) -> Self {
        let mut key = Self {
            alice: Vec::with_capacity(len),
            x: Vec::with_capacity(len),
            z: Vec::with_capacity(len),
        };
        let c1 = m.p_i;
        let c2 = c1 + m.p_x;
        let c3 = c2 + m.p_y;
        for _ in 0..len {
            let u: f64 = rng.gen();
            let (x, z) = if u < c1 {
                (0, 0)
            } else if u < c2 {
                (1, 0)
            } else if u < c3 {
                (1, 1)
            } else {
                (0, 1)
            };
            key.alice.push(rng.gen_range(0..2));
            key.x.push(x);
            key.z.push(z);
        }
        key
    }

    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn bob(&self) -> Vec<u8> {
        self.alice.iter().zip(&self.z).map(|(a, z)| a ^ z).collect()
    }

    pub fn tally(&self) -> LabelTally {
        let mut t = LabelTally::default();
        for (x, z) in self.x.iter().zip(&self.z) {
            match (x, z) {
                (0, 0) => t.i += 1,
                (1, 0) => t.x += 1,
                (1, 1) => t.y += 1,
                _ => t.z += 1,
            }
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelTally {
    pub i: u64,
    pub x: u64,
    pub y: u64,
    pub z: u64,
}

impl LabelTally {
    pub fn total(&self) -> u64 {
        self.i + self.x + self.y + self.z
    }

    pub fn frequencies(&self) -> ErrorMatrix {
        let n = self.total() as f64;
        ErrorMatrix::new(self.i as f64 / n, self.x as f64 / n, self.y as f64 / n, self.z as f64 / n)
    }
}

/// Random pairing order used by one parity round. Both parties derive it
/// from the announced seed.
pub fn pairing_permutation(seed: u64, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Parity of each consecutive pair in `perm`; an odd leftover is dropped.
pub fn pair_parities(bits: &[u8], perm: &[usize]) -> Vec<u8> {
    perm.chunks_exact(2)
        .map(|p| bits[p[0]] ^ bits[p[1]])
        .collect()
}

/// Positions of the first member of every pair whose parities agree.
pub fn kept_positions(perm: &[usize], mine: &[u8], theirs: &[u8]) -> Vec<usize> {
    perm.chunks_exact(2)
        .zip(mine.iter().zip(theirs))
        .filter(|(_, (a, b))| a == b)
        .map(|(p, _)| p[0])
        .collect()
}

/// Parity of each complete block of r consecutive bits.
pub fn block_parities(bits: &[u8], r: u64) -> Vec<u8> {
    bits.chunks_exact(r as usize)
        .map(|c| c.iter().fold(0, |acc, b| acc ^ b))
        .collect()
}

/// Minimum key length for k parity rounds followed by one r-block.
pub fn required_length(k: u32, r: u64) -> usize {
    (1usize << k).saturating_mul(r as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillOutcome {
    pub alice: Vec<u8>,
    pub bob: Vec<u8>,
    pub input_length: usize,
    /// Length after each parity round (index 0 is the input).
    pub lengths: Vec<usize>,
    pub surviving_length: usize,
    pub disagreement_rate: f64,
    pub disagreements: u64,
    /// Labels of the positions left after the parity rounds.
    pub after_parity: LabelTally,
    /// Labels of the output bits.
    pub final_labels: LabelTally,
    /// Pairing seeds used, in order.
    pub pairing_seeds: Vec<u64>,
}

/// Runs k parity rounds and the block stage on a labeled key. Pairing seeds
/// come from `rng`, one u64 per round.
pub fn simulate_distillation<R: Rng + ?Sized>(
    keys: &LabeledKey,
    params: &DistillParams,
    rng: &mut R,
) -> Result<DistillOutcome, DistillError> {
    if params.r == 0 || params.r % 2 == 0 {
        return Err(DistillError::BadBlockSize(params.r));
    }
    let need = required_length(params.k, params.r);
    if keys.len() < need {
        return Err(DistillError::KeyTooShort {
            have: keys.len(),
            need,
            k: params.k,
            r: params.r,
        });
    }
    let mut cur = keys.clone();
    let mut bob = keys.bob();
    let mut lengths = vec![cur.len()];
    let mut pairing_seeds = Vec::with_capacity(params.k as usize);
    for _ in 0..params.k {
        let seed: u64 = rng.gen();
        pairing_seeds.push(seed);
        let perm = pairing_permutation(seed, cur.len());
        let pa = pair_parities(&cur.alice, &perm);
        let pb = pair_parities(&bob, &perm);
        let mut next = LabeledKey {
            alice: Vec::new(),
            x: Vec::new(),
            z: Vec::new(),
        };
        let mut next_bob = Vec::new();
        for (p, (a, b)) in perm.chunks_exact(2).zip(pa.iter().zip(&pb)) {
            if a != b {
                continue;
            }
            let (first, second) = (p[0], p[1]);
            next.alice.push(cur.alice[first]);
            next.x.push(cur.x[first] ^ cur.x[second]);
            next.z.push(cur.z[first]);
            next_bob.push(bob[first]);
        }
        cur = next;
        bob = next_bob;
        lengths.push(cur.len());
    }
    let after_parity = cur.tally();
    let r = params.r as usize;
    let alice_out = block_parities(&cur.alice, params.r);
    let bob_out = block_parities(&bob, params.r);
    let mut final_labels = LabelTally::default();
    for (xs, zs) in cur.x.chunks_exact(r).zip(cur.z.chunks_exact(r)) {
        let x = (xs.iter().map(|&v| v as usize).sum::<usize>() > r / 2) as u8;
        let z = zs.iter().fold(0, |acc, v| acc ^ v);
        match (x, z) {
            (0, 0) => final_labels.i += 1,
            (1, 0) => final_labels.x += 1,
            (1, 1) => final_labels.y += 1,
            _ => final_labels.z += 1,
        }
    }
    let disagreements = alice_out.iter().zip(&bob_out).filter(|(a, b)| a != b).count() as u64;
    let surviving_length = alice_out.len();
    Ok(DistillOutcome {
        disagreement_rate: if surviving_length == 0 {
            0.0
        } else {
            disagreements as f64 / surviving_length as f64
        },
        disagreements,
        alice: alice_out,
        bob: bob_out,
        input_length: keys.len(),
        lengths,
        surviving_length,
        after_parity,
        final_labels,
        pairing_seeds,
    })
}

/// Expected length after each parity round for i.i.d. labels from `m`.
pub fn expected_lengths(m: &ErrorMatrix, k: u32, input: usize) -> Result<Vec<f64>, DistillError> {
    let mut out = vec![input as f64];
    let mut cur = *m;
    for _ in 0..k {
        let next = *out.last().unwrap() / 2.0 * pair_survival(&cur);
        out.push(next);
        cur = ep_step(&cur)?;
    }
    Ok(out)
}

/// Compression of the surviving key by a seeded random Toeplitz matrix.
///
/// This is a stand-in for the final correction and privacy amplification
/// stage. It is not a secure extractor and carries no cryptographic claim.
pub fn toeplitz_placeholder(bits: &[u8], output_fraction: f64, seed: u64) -> Vec<u8> {
    let n = bits.len();
    let m = ((n as f64) * output_fraction.clamp(0.0, 1.0)).floor() as usize;
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // First column and first row of the m x n Toeplitz matrix.
    let diag: Vec<u8> = (0..m + n - 1).map(|_| rng.gen_range(0..2)).collect();
    (0..m)
        .map(|row| {
            bits.iter()
                .enumerate()
                .fold(0u8, |acc, (col, b)| acc ^ (b & diag[row + n - 1 - col]))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DistillReport {
    pub input: ErrorMatrix,
    pub secure_condition: bool,
    pub per_round: Vec<ErrorMatrix>,
    pub selection: ParamSelection,
    pub simulation: Option<SimulationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub input_length: usize,
    pub lengths: Vec<usize>,
    pub expected_lengths: Vec<f64>,
    pub surviving_length: usize,
    pub disagreement_rate: f64,
    pub after_parity: LabelTally,
    pub final_labels: LabelTally,
    /// disagreement rate + analytic x_fail <= css_target.
    pub residual_within_budget: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: ErrorMatrix = ErrorMatrix {
        p_i: 0.75,
        p_x: 0.05,
        p_y: 0.05,
        p_z: 0.15,
    };

    /// Enumerates the 16 label pairs of one parity round.
    fn oracle_step(m: &ErrorMatrix) -> ErrorMatrix {
        let labels = [((0, 0), m.p_i), ((1, 0), m.p_x), ((1, 1), m.p_y), ((0, 1), m.p_z)];
        let mut acc = [0.0f64; 4];
        let mut kept = 0.0;
        for ((x1, z1), p1) in labels {
            for ((x2, z2), p2) in labels {
                if z1 != z2 {
                    continue;
                }
                kept += p1 * p2;
                let slot = match (x1 ^ x2, z1) {
                    (0, 0) => 0,
                    (1, 0) => 1,
                    (1, 1) => 2,
                    _ => 3,
                };
                acc[slot] += p1 * p2;
            }
        }
        ErrorMatrix::new(acc[0] / kept, acc[1] / kept, acc[2] / kept, acc[3] / kept)
    }

    fn close(a: &ErrorMatrix, b: &ErrorMatrix, tol: f64) -> bool {
        (a.p_i - b.p_i).abs() < tol
            && (a.p_x - b.p_x).abs() < tol
            && (a.p_y - b.p_y).abs() < tol
            && (a.p_z - b.p_z).abs() < tol
    }

    #[test]
    fn recursion_examples() {
        for k in 0..5 {
            assert_eq!(ep_recursion(&ErrorMatrix::PERFECT, k).unwrap(), ErrorMatrix::PERFECT);
        }
        let oracle = oracle_step(&M);
        let expected = ErrorMatrix::new(1.13 / 1.36, 0.15 / 1.36, 0.03 / 1.36, 0.05 / 1.36);
        assert!(close(&oracle, &expected, 1e-15));
        let one = ep_recursion(&M, 1).unwrap();
        assert!(close(&one, &oracle, 1e-12));
        assert!((one.p_i - 0.830882).abs() < 1e-6);
        assert!((one.p_x - 0.110294).abs() < 1e-6);
        assert!((one.p_y - 0.022059).abs() < 1e-6);
        assert!((one.p_z - 0.036765).abs() < 1e-6);
        let two = ep_recursion(&M, 2).unwrap();
        let iterated = ep_recursion(&one, 1).unwrap();
        assert!(close(&two, &iterated, 1e-12));
        assert_eq!(ep_recursion(&M, 0).unwrap(), M);
        assert!(matches!(
            ep_recursion(&ErrorMatrix::new(0.0, 0.0, 0.0, 0.0), 1),
            Err(DistillError::Degenerate(_))
        ));
    }

    #[test]
    fn majority_examples() {
        let m = ErrorMatrix::new(0.9, 0.1, 0.0, 0.001);
        let (x_fail, z_fail) = majority_stage(&m, 5).unwrap();
        assert!((x_fail - 0.00856).abs() < 1e-12);
        assert!((z_fail - 0.004_980_039_960_016).abs() < 1e-15);
        let (x1, z1) = majority_stage(&M, 1).unwrap();
        assert!((x1 - 0.1).abs() < 1e-15 && (z1 - 0.2).abs() < 1e-15);
        let clean = ErrorMatrix::new(0.9, 0.0, 0.0, 0.1);
        for r in [1, 3, 101, 5001] {
            assert_eq!(majority_stage(&clean, r).unwrap().0, 0.0);
        }
        assert_eq!(majority_stage(&M, 4), Err(DistillError::BadBlockSize(4)));
    }

    #[test]
    fn majority_tail_matches_direct_sum() {
        // Small r: direct product-form binomial sum.
        for r in [1u64, 3, 7, 15] {
            for p in [0.01f64, 0.2, 0.45] {
                let mut direct = 0.0;
                for j in (r / 2 + 1)..=r {
                    let mut c = 1.0;
                    for t in 0..j {
                        c = c * (r - t) as f64 / (t + 1) as f64;
                    }
                    direct += c * p.powi(j as i32) * (1.0 - p).powi((r - j) as i32);
                }
                assert!((majority_failure(r, p) - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn secure_condition_examples() {
        assert!(check_secure_condition(&ErrorMatrix::PERFECT));
        assert!(check_secure_condition(&M));
        assert!(!check_secure_condition(&ErrorMatrix::new(0.4, 0.4, 0.1, 0.1)));
    }

    #[test]
    fn symmetric_boundary_pin() {
        // p_x = p_y = p_z = p: root of (1-4p)^2 = (1-2p)(2p) by bisection.
        let g = |p: f64| (1.0 - 4.0 * p).powi(2) - (1.0 - 2.0 * p) * 2.0 * p;
        let (mut lo, mut hi) = (0.0, 0.2);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 0.138_196_601_125_010_5).abs() < 1e-12);
        let below = ErrorMatrix::new(1.0 - 3.0 * (lo - 1e-6), lo - 1e-6, lo - 1e-6, lo - 1e-6);
        let above = ErrorMatrix::new(1.0 - 3.0 * (lo + 1e-6), lo + 1e-6, lo + 1e-6, lo + 1e-6);
        assert!(check_secure_condition(&below));
        assert!(!check_secure_condition(&above));
    }

    #[test]
    fn select_params_examples() {
        let perfect = select_params(&ErrorMatrix::PERFECT, &DistillParams::default(), DEFAULT_K_MAX).unwrap();
        assert!(perfect.feasible);
        assert_eq!((perfect.params.k, perfect.params.r), (0, 1));

        let s = select_params(&M, &DistillParams::default(), DEFAULT_K_MAX).unwrap();
        assert!(s.feasible);
        let after = ep_recursion(&M, s.params.k).unwrap();
        assert!(s.params.r as f64 * after.bit_error() <= 0.005);
        assert!(s.params.r % 2 == 1);
        assert!(s.spin_margin >= 10.0 && s.existence_ratio >= 10.0);

        let bad = ErrorMatrix::new(0.4, 0.4, 0.1, 0.1);
        let s = select_params(&bad, &DistillParams::default(), DEFAULT_K_MAX).unwrap();
        assert!(!s.feasible);
    }

    #[test]
    fn zero_z_with_x_errors_picks_large_block() {
        let m = ErrorMatrix::new(0.8, 0.2, 0.0, 0.0);
        let s = select_params(&m, &DistillParams::default(), DEFAULT_K_MAX).unwrap();
        assert!(s.feasible);
        assert_eq!(s.params.k, 0);
        assert!(2.0 * s.params.r as f64 * 0.09 >= 10.0);
    }

    #[test]
    fn identity_with_k0_r1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let keys = LabeledKey::sample_iid(&M, 1000, &mut rng);
        let out = simulate_distillation(&keys, &DistillParams::default(), &mut rng).unwrap();
        assert_eq!(out.alice, keys.alice);
        assert_eq!(out.bob, keys.bob());
    }

    #[test]
    fn error_free_halving() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let keys = LabeledKey::sample_iid(&ErrorMatrix::PERFECT, 1 << 12, &mut rng);
        let params = DistillParams { k: 3, r: 5, ..Default::default() };
        let out = simulate_distillation(&keys, &params, &mut rng).unwrap();
        assert_eq!(out.lengths, vec![4096, 2048, 1024, 512]);
        assert_eq!(out.surviving_length, 102);
        assert_eq!(out.alice, out.bob);
    }

    #[test]
    fn too_short_key() {
        let keys = LabeledKey::from_bits(&[0, 1, 1], &[0, 1, 1]);
        let params = DistillParams { k: 1, r: 3, ..Default::default() };
        let err = simulate_distillation(&keys, &params, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, DistillError::KeyTooShort { have: 3, need: 6, k: 1, r: 3 });
    }

    #[test]
    fn block_z_rate_matches_parity_formula() {
        let m = ErrorMatrix::new(0.95, 0.0, 0.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let keys = LabeledKey::sample_iid(&m, 300_000, &mut rng);
        let params = DistillParams { k: 0, r: 3, ..Default::default() };
        let out = simulate_distillation(&keys, &params, &mut rng).unwrap();
        let (_, z_fail) = majority_stage(&m, 3).unwrap();
        let n = out.surviving_length as f64;
        let sigma = (z_fail * (1.0 - z_fail) / n).sqrt();
        assert!((out.disagreement_rate - z_fail).abs() < 3.0 * sigma);
    }

    #[test]
    fn toeplitz_is_linear_and_sized() {
        let a: Vec<u8> = (0..64).map(|i| (i * 7 % 3 == 0) as u8).collect();
        let b: Vec<u8> = (0..64).map(|i| (i % 5 == 1) as u8).collect();
        let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let ha = toeplitz_placeholder(&a, 0.5, 9);
        let hb = toeplitz_placeholder(&b, 0.5, 9);
        let hab = toeplitz_placeholder(&ab, 0.5, 9);
        assert_eq!(ha.len(), 32);
        let sum: Vec<u8> = ha.iter().zip(&hb).map(|(x, y)| x ^ y).collect();
        assert_eq!(hab, sum);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = ErrorMatrix> {
            (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
                .prop_filter("nonzero", |(a, b, c, d)| a + b + c + d > 1e-3)
                .prop_map(|(a, b, c, d)| {
                    let s = a + b + c + d;
                    ErrorMatrix::new(a / s, b / s, c / s, d / s)
                })
        }

        proptest! {
            #[test]
            fn recursion_stays_a_distribution(m in matrix(), k in 0u32..12) {
                let out = ep_recursion(&m, k).unwrap();
                prop_assert!(out.is_valid(1e-12));
            }

            #[test]
            fn closed_form_matches_iteration(m in matrix(), k in 1u32..6) {
                let closed = ep_recursion(&m, k).unwrap();
                let mut it = m;
                for _ in 0..k {
                    it = ep_step(&it).unwrap();
                }
                prop_assert!(close(&closed, &it, 1e-12));
            }

            #[test]
            // Exact arithmetic: in floating point p_I saturates at 1/2 once
            // (p_I - p_x)^{2^k} underflows.
            fn majority_preserved(m in matrix().prop_filter("p_I > 1/2", |m| m.p_i > 0.5), k in 0u32..8) {
                use num_rational::BigRational;
                let q = |v: f64| BigRational::from_float(v).unwrap();
                let (mut pi, mut px, mut py, mut pz) = (q(m.p_i), q(m.p_x), q(m.p_y), q(m.p_z));
                let half = BigRational::new(1.into(), 2.into());
                let two = BigRational::from_integer(2.into());
                for _ in 0..k {
                    let keep = (&pi + &px) * (&pi + &px) + (&py + &pz) * (&py + &pz);
                    let next = (
                        (&pi * &pi + &px * &px) / &keep,
                        &two * &pi * &px / &keep,
                        &two * &py * &pz / &keep,
                        (&pz * &pz + &py * &py) / &keep,
                    );
                    (pi, px, py, pz) = next;
                    prop_assert!(pi > half);
                    prop_assert!(&pi - &pz > &px - &py);
                }
            }
        }
    }

    #[test]
    fn secure_condition_drives_z_down_and_ratio_up_eventually() {
        // 10^3 matrices on a grid over (p_x, p_y, p_z).
        let mut checked = 0;
        let mut selected = 0;
        let steps = 10;
        for a in 0..steps {
            for b in 0..steps {
                for c in 0..steps {
                    let (px, py, pz) = (a as f64 * 0.03, b as f64 * 0.03, c as f64 * 0.03);
                    let m = ErrorMatrix::new(1.0 - px - py - pz, px, py, pz);
                    checked += 1;
                    let sel = select_params(&m, &DistillParams::default(), DEFAULT_K_MAX).unwrap();
                    if !check_secure_condition(&m) {
                        assert!(!sel.feasible, "{m:?}");
                        continue;
                    }
                    // ln[(B + D)² / (C (A + C))] eventually passes the existence
                    // test 400·margin; it need not grow between small k.
                    let mut prev_ratio = f64::NEG_INFINITY;
                    let mut prev_z = f64::INFINITY;
                    for k in 0..=30 {
                        let t = log_terms(&m, k);
                        let after = ep_recursion(&m, k).unwrap();
                        let ratio = 2.0 * t.b_plus_d.unwrap() - t.c - t.a_plus_c;
                        assert!(after.bit_error() <= prev_z + 1e-15, "{m:?} k={k}");
                        prev_ratio = ratio;
                        prev_z = after.bit_error();
                    }
                    assert!(prev_z < 1e-6, "{m:?}");
                    assert!(prev_ratio >= (4000f64).ln(), "{m:?}");
                    if sel.feasible {
                        selected += 1;
                        let after = ep_recursion(&m, sel.params.k).unwrap();
                        assert!(sel.params.r as f64 * after.bit_error() <= 0.005 * (1.0 + 1e-12));
                    } else {
                        // Only possible when the block size leaves u64.
                        assert!(sel.note.as_deref().unwrap().contains("2^63"), "{m:?}");
                    }
                }
            }
        }
        assert!(selected > 0);
        assert_eq!(checked, 1000);
    }
}
