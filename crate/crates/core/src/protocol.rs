//! Monte Carlo engine for the prepare-and-measure rounds: preparation,
//! channel, measurement, announcement, sifting, sampling and the e_b / e_c
//! estimators.
//!
//! Each round draws from three independent ChaCha streams derived from
//! (seed, round, role), so the output does not depend on how rounds are
//! scheduled across threads. The networked runner calls the same per-round
//! functions with the same streams.

use std::collections::BTreeMap;
use std::io::{self, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelError, ChannelModel};
use crate::field::{Field, FieldError};
use crate::qstates::{measure, Outcome, Pair, PairState, SparseKet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("the acceptance test needs N >= 4 (n >= 2), got n = {0}")]
    FieldTooSmall(u32),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// z for a two-sided 99% interval.
pub const Z_99: f64 = 2.575_829_303_549;

/// Which rounds enter the e_c denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcMode {
    /// Rounds on the preparation line whose outcome fell inside Bob's pair.
    #[default]
    InPair,
    /// Every round on the preparation line, whatever the outcome.
    Announcement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub n: u32,
    pub rounds: u64,
    pub channel: String,
    pub sample_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub ec_mode: EcMode,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n: 2,
            rounds: 100_000,
            channel: "identity".into(),
            sample_fraction: 0.1,
            seed: 0,
            ec_mode: EcMode::InPair,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(2..=8).contains(&self.n) {
            return Err(ProtocolError::Config(format!("n = {} outside 2..=8", self.n)));
        }
        if self.rounds == 0 {
            return Err(ProtocolError::Config("rounds must be at least 1".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction < 1.0) {
            return Err(ProtocolError::Config(format!(
                "sample_fraction = {} must lie strictly between 0 and 1",
                self.sample_fraction
            )));
        }
        Ok(())
    }
}

/// Independent random streams used inside one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Alice = 0,
    Channel = 1,
    Bob = 2,
}

pub fn round_rng(seed: u64, round: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round * 4 + stream as u64);
    rng
}

/// Stream reserved for session-level choices (sample selection).
pub fn session_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Stream that drives post-processing (pairing seeds).
pub fn distill_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - 1);
    rng
}

pub fn random_pair<R: Rng + ?Sized>(field: &Field, rng: &mut R) -> Pair {
    Pair::from_rank(field, rng.gen_range(0..Pair::count(field.order())))
}

/// Alice's uniformly random pair and bit.
pub fn alice_prepare<R: Rng + ?Sized>(field: &Field, rng: &mut R) -> PairState {
    let pair = random_pair(field, rng);
    PairState {
        pair,
        sign: rng.gen_range(0..2),
    }
}

/// Bob's basis choice followed by his measurement. An Outside result still
/// decodes to a bit, drawn uniformly.
pub fn bob_measure<R: Rng + ?Sized>(field: &Field, ket: &SparseKet, rng: &mut R) -> (Pair, Outcome, u8) {
    let basis = random_pair(field, rng);
    let outcome = measure(ket, &basis, rng);
    let bit = match outcome {
        Outcome::Plus => 0,
        Outcome::Minus => 1,
        Outcome::Outside => rng.gen_range(0..2),
    };
    (basis, outcome, bit)
}

/// Offset class of `bob` on the line through `alice`, if it lies there.
/// Offsets a and a + 1 name the same pair; the even representative is kept,
/// so 0 means the pairs coincide.
pub fn line_offset(field: &Field, alice: &Pair, bob: &Pair) -> Option<u16> {
    let d = alice.difference();
    if bob.difference() != d {
        return None;
    }
    let a = field.mul_raw(field.inv_raw(d), bob.lo().value() ^ alice.lo().value());
    Some(a & !1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub alice: (u16, u16),
    pub s: u8,
    pub bob: (u16, u16),
    pub outcome: Outcome,
    pub bob_bit: u8,
    pub sifted: bool,
    pub offset: Option<u16>,
}

/// One full round given its three streams.
pub fn simulate_round(field: &Field, model: &ChannelModel, seed: u64, round: u64) -> RoundRecord {
    let prep = alice_prepare(field, &mut round_rng(seed, round, Stream::Alice));
    let received = model.transmit(&prep.ket(), &mut round_rng(seed, round, Stream::Channel));
    let (bob, outcome, bob_bit) = bob_measure(field, &received, &mut round_rng(seed, round, Stream::Bob));
    record(field, round, &prep, &bob, outcome, bob_bit)
}

pub fn record(field: &Field, round: u64, prep: &PairState, bob: &Pair, outcome: Outcome, bob_bit: u8) -> RoundRecord {
    RoundRecord {
        round,
        alice: (prep.pair.lo().value(), prep.pair.hi().value()),
        s: prep.sign,
        bob: (bob.lo().value(), bob.hi().value()),
        outcome,
        bob_bit,
        sifted: prep.pair == *bob,
        offset: line_offset(field, &prep.pair, bob),
    }
}

/// Binomial proportion with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub successes: u64,
    pub trials: u64,
    pub lower: f64,
    pub upper: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn wilson(successes: u64, trials: u64, z: f64) -> Option<Self> {
        if trials == 0 {
            return None;
        }
        let (lower, upper) = wilson_interval(successes, trials, z);
        Some(Self {
            value: successes as f64 / trials as f64,
            successes,
            trials,
            lower,
            upper,
            half_width: (upper - lower) / 2.0,
        })
    }

    pub fn covers(&self, x: f64, z: f64) -> bool {
        let (lo, hi) = wilson_interval(self.successes, self.trials, z);
        lo <= x && x <= hi
    }
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // At p = 0 or 1 one end is exactly 0 or 1; the formula only reaches it
    // up to rounding.
    let lower = if successes == 0 { 0.0 } else { (centre - spread).max(0.0) };
    let upper = if successes == trials { 1.0 } else { (centre + spread).min(1.0) };
    (lower, upper)
}

/// e_c from a round log.
pub fn estimate_ec(log: &[RoundRecord], mode: EcMode, z: f64) -> Option<Estimate> {
    let (num, den) = ec_counts(log, mode);
    Estimate::wilson(num, den, z)
}

pub fn ec_counts(log: &[RoundRecord], mode: EcMode) -> (u64, u64) {
    let mut num = 0;
    let mut den = 0;
    for r in log {
        if r.offset.is_none() {
            continue;
        }
        let inside = r.outcome.in_pair();
        if inside || mode == EcMode::Announcement {
            den += 1;
        }
        if inside && r.sifted {
            num += 1;
        }
    }
    (num, den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmVerdict {
    pub pass: bool,
    /// Left-hand side at the point estimates.
    pub lhs: f64,
    /// Left-hand side at the upper end of e_b's interval and the lower end
    /// of e_c's, i.e. the largest value consistent with the data. Equal to
    /// `lhs` when no intervals are supplied.
    pub lhs_upper: f64,
}

/// Slack for inputs that sit on the boundary up to floating-point rounding.
pub const PM_ROUNDING_SLACK: f64 = 1e-12;

fn order_of(n: u32) -> Result<usize, ProtocolError> {
    if n < 2 {
        return Err(ProtocolError::FieldTooSmall(n));
    }
    Ok(1usize << n)
}

/// e_b e_c + (N-1)(1-e_c)/(N-2) < 1/2, strict.
pub fn check_pm_condition(e_b: f64, e_c: f64, n: u32) -> Result<PmVerdict, ProtocolError> {
    let order = order_of(n)? as f64;
    let lhs = e_b * e_c + (order - 1.0) * (1.0 - e_c) / (order - 2.0);
    Ok(PmVerdict {
        pass: lhs < 0.5 - PM_ROUNDING_SLACK,
        lhs,
        lhs_upper: lhs,
    })
}

/// The continuation test applied to interval estimates. The left-hand side
/// grows with e_b and shrinks with e_c, so the test passes only if it passes
/// at (upper e_b, lower e_c).
pub fn check_pm_condition_estimates(e_b: &Estimate, e_c: &Estimate, n: u32) -> Result<PmVerdict, ProtocolError> {
    let point = check_pm_condition(e_b.value, e_c.value, n)?;
    let worst = check_pm_condition(e_b.upper, e_c.lower, n)?;
    Ok(PmVerdict {
        pass: point.pass && worst.pass,
        lhs: point.lhs,
        lhs_upper: worst.lhs,
    })
}

/// Left-hand side of the continuation test, exactly.
pub fn pm_condition_lhs_exact(e_b: &BigRational, e_c: &BigRational, order: usize) -> Result<BigRational, ProtocolError> {
    if order < 4 {
        return Err(ProtocolError::FieldTooSmall(order.trailing_zeros()));
    }
    let one = BigRational::from_integer(BigInt::from(1));
    let nm1 = BigRational::from_integer(BigInt::from(order as i64 - 1));
    let nm2 = BigRational::from_integer(BigInt::from(order as i64 - 2));
    Ok(e_b * e_c + nm1 * (one - e_c) / nm2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Pass,
    ConditionFailed,
    InsufficientSift,
    UndefinedEc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub config: SessionConfig,
    pub rounds: u64,
    pub sifted: u64,
    pub sifted_outside: u64,
    pub sample_size: u64,
    pub raw_key_length: u64,
    /// Mismatch rate over sampled positions with an in-pair outcome.
    pub e_b: Option<Estimate>,
    /// Mismatch rate over every sampled position, Outside rounds included.
    pub e_b_with_outside: Option<Estimate>,
    pub e_c: Option<Estimate>,
    /// Keyed by "offset,outcome" over rounds on the preparation line.
    pub line_counts: BTreeMap<String, u64>,
    pub pm_condition: Option<PmVerdict>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub alice_key: Vec<u8>,
    pub bob_key: Vec<u8>,
    pub stats: SessionStats,
    pub log: Vec<RoundRecord>,
}

/// Sorted positions (into the sifted list) sacrificed for e_b.
pub fn select_sample(seed: u64, sifted: usize, fraction: f64) -> Vec<usize> {
    let amount = ((sifted as f64) * fraction).round() as usize;
    let amount = amount.min(sifted);
    let mut picked = index::sample(&mut session_rng(seed), sifted, amount).into_vec();
    picked.sort_unstable();
    picked
}

/// Mismatch counts over the sample: (in-pair errors, in-pair total, all
/// errors, all total).
pub fn sample_errors(
    sample: &[usize],
    alice_bits: &[u8],
    bob_bits: &[u8],
    in_pair: &[bool],
) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for &p in sample {
        let wrong = (alice_bits[p] != bob_bits[p]) as u64;
        c.2 += wrong;
        c.3 += 1;
        if in_pair[p] {
            c.0 += wrong;
            c.1 += 1;
        }
    }
    c
}

/// Removes sampled positions (sorted) from a key.
pub fn remove_positions(bits: &[u8], sample: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bits.len() - sample.len());
    let mut next = sample.iter().peekable();
    for (p, &b) in bits.iter().enumerate() {
        if next.peek() == Some(&&p) {
            next.next();
        } else {
            out.push(b);
        }
    }
    out
}

/// Key for the per-offset tallies. Only what Bob announces enters it: the
/// outcome is reduced to in-pair or outside, never Plus/Minus.
pub fn line_count_key(offset: u16, outcome: Outcome) -> String {
    let o = if outcome.in_pair() { "in_pair" } else { "outside" };
    format!("{offset},{o}")
}

/// Derives statistics from a complete round log. Shared by the in-process
/// engine and both network endpoints.
pub fn summarize(config: &SessionConfig, log: &[RoundRecord]) -> (Vec<u8>, Vec<u8>, SessionStats) {
    let mut alice_bits = Vec::new();
    let mut bob_bits = Vec::new();
    let mut in_pair = Vec::new();
    let mut line_counts = BTreeMap::new();
    for r in log {
        if r.sifted {
            alice_bits.push(r.s);
            bob_bits.push(r.bob_bit);
            in_pair.push(r.outcome.in_pair());
        }
        if let Some(a) = r.offset {
            *line_counts.entry(line_count_key(a, r.outcome)).or_insert(0) += 1;
        }
    }
    let sifted = alice_bits.len();
    let sample = select_sample(config.seed, sifted, config.sample_fraction);
    let (err_in, n_in, err_all, n_all) = sample_errors(&sample, &alice_bits, &bob_bits, &in_pair);
    let e_b = Estimate::wilson(err_in, n_in, Z_99);
    let e_b_with_outside = Estimate::wilson(err_all, n_all, Z_99);
    let e_c = estimate_ec(log, config.ec_mode, Z_99);
    let alice_key = remove_positions(&alice_bits, &sample);
    let bob_key = remove_positions(&bob_bits, &sample);
    let (pm_condition, status) = match (&e_b, &e_c) {
        (None, _) => (None, SessionStatus::InsufficientSift),
        (_, None) => (None, SessionStatus::UndefinedEc),
        (Some(b), Some(c)) => {
            let v = check_pm_condition_estimates(b, c, config.n).expect("n validated");
            let status = if v.pass {
                SessionStatus::Pass
            } else {
                SessionStatus::ConditionFailed
            };
            (Some(v), status)
        }
    };
    let stats = SessionStats {
        config: config.clone(),
        rounds: log.len() as u64,
        sifted: sifted as u64,
        sifted_outside: in_pair.iter().filter(|x| !**x).count() as u64,
        sample_size: sample.len() as u64,
        raw_key_length: alice_key.len() as u64,
        e_b,
        e_b_with_outside,
        e_c,
        line_counts,
        pm_condition,
        status,
    };
    (alice_key, bob_key, stats)
}

/// Runs every round of a session in process.
pub fn run_session(config: &SessionConfig) -> Result<SessionOutput, ProtocolError> {
    config.validate()?;
    let field = Field::new(config.n)?;
    let model = ChannelModel::parse(&field, &config.channel)?;
    let log: Vec<RoundRecord> = (0..config.rounds)
        .into_par_iter()
        .map(|round| simulate_round(&field, &model, config.seed, round))
        .collect();
    let (alice_key, bob_key, stats) = summarize(config, &log);
    Ok(SessionOutput {
        alice_key,
        bob_key,
        stats,
        log,
    })
}

pub fn write_log_csv<W: Write>(log: &[RoundRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "round,i,j,s,i',j',outcome,sifted,offset")?;
    for r in log {
        let outcome = match r.outcome {
            Outcome::Plus => "plus",
            Outcome::Minus => "minus",
            Outcome::Outside => "outside",
        };
        let offset = r.offset.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round, r.alice.0, r.alice.1, r.s, r.bob.0, r.bob.1, outcome, r.sifted as u8, offset
        )?;
    }
    Ok(())
}
