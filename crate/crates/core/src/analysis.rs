//! Closed-form statistics of the entanglement-based picture.
//!
//! For a unitary channel mixture the distribution of joint outcomes Ψ_{aℓ}
//! is obtained by pushing the reference outcome Ψ_{00} through the
//! conjugation rule for every (λ ≠ 0, β) and every channel term. All sums are
//! exact rationals; floats appear only in [`ErrorMatrix`] and the JSON report.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelAction, ChannelModel};
use crate::field::Field;
use crate::protocol::{pm_condition_lhs_exact, ProtocolError};
use crate::qstates::{conjugate_raw, probabilities, Outcome, Pair, SparseKet};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("channel {0} has non-unitary terms; use the exact enumeration instead")]
    UnsupportedModel(String),
    #[error("e_c is zero, so the error matrix and e_b are undefined")]
    ZeroAcceptance,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

fn rat(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// e_{aℓ} for every a ∈ GF(N), ℓ ∈ GF(2).
#[derive(Debug, Clone, PartialEq)]
pub struct BellDistribution {
    order: usize,
    probs: Vec<BigRational>,
}

impl BellDistribution {
    /// Entries are laid out as `probs[2a + ℓ]`.
    pub fn from_entries(order: usize, probs: Vec<BigRational>) -> Self {
        assert_eq!(probs.len(), 2 * order);
        Self { order, probs }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, a: usize, l: usize) -> &BigRational {
        &self.probs[2 * a + l]
    }

    pub fn entries(&self) -> &[BigRational] {
        &self.probs
    }

    pub fn total(&self) -> BigRational {
        self.probs.iter().sum()
    }

    /// Σ e = 1 and all entries nonnegative.
    pub fn is_normalized(&self) -> bool {
        self.total() == BigRational::one() && self.probs.iter().all(|p| *p >= BigRational::zero())
    }

    /// e_{a0} + e_{a1} is the same for every nonzero a.
    pub fn sum_rule_holds(&self) -> bool {
        let mass = |a: usize| self.get(a, 0) + self.get(a, 1);
        let first = mass(1);
        (2..self.order).all(|a| mass(a) == first)
    }

    /// e_c = e00 + e01 + e10 + e11.
    pub fn acceptance(&self) -> BigRational {
        self.get(0, 0) + self.get(0, 1) + self.get(1, 0) + self.get(1, 1)
    }

    pub fn to_f64_map(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for a in 0..self.order {
            for l in 0..2 {
                out.insert(format!("{a},{l}"), self.get(a, l).to_f64().unwrap_or(f64::NAN));
            }
        }
        out
    }
}

/// Joint-outcome distribution induced by a unitary channel mixture.
pub fn bell_distribution(model: &ChannelModel) -> Result<BellDistribution, AnalysisError> {
    let field = model.field();
    let order = field.order();
    let cells = 2 * order;
    // Terms sharing a weight share one integer tally (full dephasing has 2^N
    // equal-weight terms).
    let mut tallies: HashMap<BigRational, Vec<u64>> = HashMap::new();
    let mut independent = BigRational::zero();
    for term in model.terms() {
        match term.action {
            ChannelAction::Unitary { shift, phase } => {
                let counts = tallies
                    .entry(term.probability.clone())
                    .or_insert_with(|| vec![0; cells]);
                for lambda in 1..order as u16 {
                    for beta in 0..order as u16 {
                        let (a, flip) = conjugate_raw(field, lambda, beta, shift.value(), &phase, 0);
                        counts[2 * a as usize + flip as usize] += 1;
                    }
                }
            }
            ChannelAction::IndependentPhases => independent += &term.probability,
            ChannelAction::InterceptResend => {
                return Err(AnalysisError::UnsupportedModel(model.label().to_string()))
            }
        }
    }
    let grid = (order * (order - 1)) as u64;
    let mut probs = vec![BigRational::zero(); cells];
    for (weight, counts) in tallies {
        for (cell, &c) in counts.iter().enumerate() {
            if c > 0 {
                probs[cell] += &weight * rat(c, grid);
            }
        }
    }
    // Two distinct indices with independent fair signs: the relative sign
    // flips with probability 1/2 and the index is unchanged.
    if !independent.is_zero() {
        let half = &independent * rat(1, 2);
        probs[0] += &half;
        probs[1] += half;
    }
    Ok(BellDistribution { order, probs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    /// None when e_c = 0.
    pub e_b: Option<BigRational>,
    pub e_c: BigRational,
    /// 1 - e_c = (N - 2)(e10 + e11).
    pub consistent: bool,
}

impl Observables {
    pub fn e_b_f64(&self) -> Option<f64> {
        self.e_b.as_ref().and_then(|v| v.to_f64())
    }

    pub fn e_c_f64(&self) -> f64 {
        self.e_c.to_f64().unwrap_or(f64::NAN)
    }
}

/// Raw-key observables implied by a joint-outcome distribution.
pub fn predict_observables(d: &BellDistribution) -> Observables {
    let e_c = d.acceptance();
    let flips = d.get(0, 1) + d.get(1, 1);
    let e_b = if e_c.is_zero() {
        None
    } else {
        Some(flips / &e_c)
    };
    let n_minus_2 = BigRational::from_integer(BigInt::from(d.order as i64 - 2));
    let consistent = BigRational::one() - &e_c == n_minus_2 * (d.get(1, 0) + d.get(1, 1));
    Observables {
        e_b,
        e_c,
        consistent,
    }
}

/// Pauli-frame error probabilities on sifted positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub p_i: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
}

impl ErrorMatrix {
    pub const PERFECT: ErrorMatrix = ErrorMatrix {
        p_i: 1.0,
        p_x: 0.0,
        p_y: 0.0,
        p_z: 0.0,
    };

    pub fn new(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> Self {
        Self { p_i, p_x, p_y, p_z }
    }

    pub fn total(&self) -> f64 {
        self.p_i + self.p_x + self.p_y + self.p_z
    }

    /// Nonnegative entries summing to 1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        [self.p_i, self.p_x, self.p_y, self.p_z]
            .iter()
            .all(|p| p.is_finite() && *p >= -tol)
            && (self.total() - 1.0).abs() <= tol
    }

    /// Probability of a raw-key bit error (Z component).
    pub fn bit_error(&self) -> f64 {
        self.p_z + self.p_y
    }

    /// Probability of an X component.
    pub fn x_error(&self) -> f64 {
        self.p_x + self.p_y
    }
}

/// (p_I, p_z, p_x, p_y) = (e00, e01, e10, e11)/e_c, exactly.
pub fn error_matrix_exact(d: &BellDistribution) -> Result<[BigRational; 4], AnalysisError> {
    let e_c = d.acceptance();
    if e_c.is_zero() {
        return Err(AnalysisError::ZeroAcceptance);
    }
    Ok([
        d.get(0, 0) / &e_c,
        d.get(1, 0) / &e_c,
        d.get(1, 1) / &e_c,
        d.get(0, 1) / &e_c,
    ])
}

pub fn error_matrix(d: &BellDistribution) -> Result<ErrorMatrix, AnalysisError> {
    let [i, x, y, z] = error_matrix_exact(d)?;
    let f = |v: BigRational| v.to_f64().unwrap_or(f64::NAN);
    Ok(ErrorMatrix::new(f(i), f(x), f(y), f(z)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdVerdict {
    pub pass: bool,
    pub lhs: f64,
    /// e00 > 1/2, which makes e00 the largest entry when the test passes.
    pub e00_dominant: bool,
}

/// e01 + e11 + (N-1)(e10 + e11) < 1/2, strict.
pub fn ed_condition_lhs(d: &BellDistribution) -> BigRational {
    let n_minus_1 = BigRational::from_integer(BigInt::from(d.order as i64 - 1));
    d.get(0, 1) + d.get(1, 1) + n_minus_1 * (d.get(1, 0) + d.get(1, 1))
}

pub fn check_ed_condition(d: &BellDistribution) -> EdVerdict {
    let lhs = ed_condition_lhs(d);
    let half = rat(1, 2);
    EdVerdict {
        pass: lhs < half,
        lhs: lhs.to_f64().unwrap_or(f64::NAN),
        e00_dominant: *d.get(0, 0) > half,
    }
}

/// e00 + e_b e_c + (N-1)(1-e_c)/(N-2) - e11, which equals 1 whenever the
/// sum rule holds.
pub fn identity_residual(d: &BellDistribution) -> Result<BigRational, AnalysisError> {
    let obs = predict_observables(d);
    let e_b = obs.e_b.ok_or(AnalysisError::ZeroAcceptance)?;
    let pm = pm_condition_lhs_exact(&e_b, &obs.e_c, d.order)?;
    Ok(d.get(0, 0) + pm - d.get(1, 1))
}

/// Exact (e_b, e_c) by enumerating every preparation, channel outcome and
/// line pair with the Born rule. Works for any channel, including
/// intercept-resend; cost grows with the number of channel terms.
pub fn exact_observables(model: &ChannelModel) -> Result<Observables, AnalysisError> {
    let field = model.field();
    let mut own_in = BigRational::zero();
    let mut own_err = BigRational::zero();
    let mut line_in = BigRational::zero();
    let pairs = Pair::all(field);
    for pair in &pairs {
        let line = line_pairs(field, pair);
        for sign in 0..2u8 {
            let ket = crate::qstates::PairState { pair: *pair, sign }.ket();
            for term in model.terms() {
                for (weight, out) in channel_outcomes(field, term.action, &ket) {
                    let w = &term.probability * weight;
                    for q in &line {
                        let p = probabilities(&out, q);
                        let inside = rat((p.plus + p.minus) as u64, 4);
                        line_in += &w * &inside;
                        if q == pair {
                            own_in += &w * inside;
                            let wrong = if sign == 0 { Outcome::Minus } else { Outcome::Plus };
                            own_err += &w * rat(p.quarters(wrong) as u64, 4);
                        }
                    }
                }
            }
        }
    }
    if line_in.is_zero() {
        return Err(AnalysisError::ZeroAcceptance);
    }
    let e_c = &own_in / &line_in;
    let e_b = if own_in.is_zero() {
        None
    } else {
        Some(own_err / own_in)
    };
    Ok(Observables {
        e_b,
        e_c,
        consistent: true,
    })
}

/// The N/2 pairs {x, x + d} with d = i + j.
pub fn line_pairs(field: &Field, pair: &Pair) -> Vec<Pair> {
    let d = pair.difference();
    (0..field.order() as u16)
        .filter(|&x| x < x ^ d)
        .map(|x| Pair::new(field.wrap(x), field.wrap(x ^ d)).expect("d is nonzero"))
        .collect()
}

fn channel_outcomes(field: &Field, action: ChannelAction, ket: &SparseKet) -> Vec<(BigRational, SparseKet)> {
    match action {
        ChannelAction::Unitary { shift, phase } => vec![(
            BigRational::one(),
            crate::qstates::apply_error(field, shift, &phase, ket).expect("same field"),
        )],
        ChannelAction::InterceptResend => {
            let w = rat(1, ket.len() as u64);
            ket.terms()
                .iter()
                .map(|&(idx, _)| (w.clone(), SparseKet::basis(idx)))
                .collect()
        }
        ChannelAction::IndependentPhases => {
            let terms = ket.terms();
            if terms.len() == 1 {
                return vec![(BigRational::one(), *ket)];
            }
            (0..2)
                .map(|flip| {
                    let out = SparseKet::from_terms(&[terms[0], (terms[1].0, terms[1].1 ^ (flip == 1))]);
                    (rat(1, 2), out)
                })
                .collect()
        }
    }
}

/// Exact observables of `partial_intercept(η)`.
pub fn intercept_distribution(field: &Field, eta: &BigRational) -> Result<Observables, AnalysisError> {
    let model = ChannelModel::builtin(field, &crate::channels::BuiltinChannel::PartialIntercept(eta.clone()))
        .map_err(|_| AnalysisError::UnsupportedModel(format!("partial_intercept:{eta}")))?;
    exact_observables(&model)
}

/// Predicted observables for any model: the closed-form route for unitary
/// mixtures, exact enumeration otherwise.
pub fn predict_for_model(model: &ChannelModel) -> Result<Observables, AnalysisError> {
    if model.is_unitary_mixture() {
        Ok(predict_observables(&bell_distribution(model)?))
    } else {
        exact_observables(model)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub n: u32,
    pub channel: String,
    pub bell: Option<BTreeMap<String, f64>>,
    pub e_b: Option<f64>,
    pub e_c: f64,
    pub e_b_exact: Option<String>,
    pub e_c_exact: String,
    pub error_matrix: Option<ErrorMatrix>,
    pub ed_condition: Option<EdVerdict>,
    pub pm_condition: Option<bool>,
    pub sum_rule: Option<bool>,
    pub correspondence_consistent: Option<bool>,
    pub identity_holds: Option<bool>,
}

pub fn analyze(model: &ChannelModel) -> Result<AnalysisReport, AnalysisError> {
    let field = model.field();
    let n = field.degree();
    let order = field.order();
    let pm = |obs: &Observables| -> Result<Option<bool>, AnalysisError> {
        Ok(match &obs.e_b {
            Some(e_b) => Some(pm_condition_lhs_exact(e_b, &obs.e_c, order)? < rat(1, 2)),
            None => None,
        })
    };
    if model.is_unitary_mixture() {
        let d = bell_distribution(model)?;
        let obs = predict_observables(&d);
        Ok(AnalysisReport {
            n,
            channel: model.label().to_string(),
            bell: Some(d.to_f64_map()),
            e_b: obs.e_b_f64(),
            e_c: obs.e_c_f64(),
            e_b_exact: obs.e_b.as_ref().map(|v| v.to_string()),
            e_c_exact: obs.e_c.to_string(),
            error_matrix: error_matrix(&d).ok(),
            ed_condition: Some(check_ed_condition(&d)),
            pm_condition: pm(&obs)?,
            sum_rule: Some(d.sum_rule_holds()),
            correspondence_consistent: Some(obs.consistent),
            identity_holds: identity_residual(&d).ok().map(|r| r == BigRational::one()),
        })
    } else {
        let obs = exact_observables(model)?;
        Ok(AnalysisReport {
            n,
            channel: model.label().to_string(),
            bell: None,
            e_b: obs.e_b_f64(),
            e_c: obs.e_c_f64(),
            e_b_exact: obs.e_b.as_ref().map(|v| v.to_string()),
            e_c_exact: obs.e_c.to_string(),
            error_matrix: None,
            ed_condition: None,
            pm_condition: pm(&obs)?,
            sum_rule: None,
            correspondence_consistent: None,
            identity_holds: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelModel;
    use crate::qstates::norm_flip;

    fn model(n: u32, spec: &str) -> ChannelModel {
        ChannelModel::parse(&Field::new(n).unwrap(), spec).unwrap()
    }

    #[test]
    fn statistics_do_not_depend_on_modulus() {
        // x³+x+1 and x³+x²+1 are the two irreducible cubics.
        use crate::field::FieldSpec;
        let a = Field::from_spec(FieldSpec::with_modulus(3, 0b1011).unwrap());
        let b = Field::from_spec(FieldSpec::with_modulus(3, 0b1101).unwrap());
        for spec in ["identity", "z_flip:0.3", "shift_noise:0.2", "full_dephase", "partial_intercept:0.4"] {
            let ma = ChannelModel::parse(&a, spec).unwrap();
            let mb = ChannelModel::parse(&b, spec).unwrap();
            let oa = exact_observables(&ma).unwrap();
            let ob = exact_observables(&mb).unwrap();
            assert_eq!(oa.e_b, ob.e_b, "{spec}");
            assert_eq!(oa.e_c, ob.e_c, "{spec}");
            if ma.is_unitary_mixture() {
                assert_eq!(bell_distribution(&ma).unwrap(), bell_distribution(&mb).unwrap(), "{spec}");
            }
        }
    }

    #[test]
    fn identity_distribution() {
        let d = bell_distribution(&model(2, "identity")).unwrap();
        assert_eq!(*d.get(0, 0), BigRational::one());
        assert_eq!(d.entries().iter().filter(|p| !p.is_zero()).count(), 1);
        let obs = predict_observables(&d);
        assert_eq!(obs.e_b, Some(BigRational::zero()));
        assert_eq!(obs.e_c, BigRational::one());
        let v = check_ed_condition(&d);
        assert!(v.pass && v.e00_dominant);
        let m = error_matrix(&d).unwrap();
        assert_eq!(m, ErrorMatrix::PERFECT);
    }

    #[test]
    fn z_flip_distribution_matches_enumeration() {
        // Oracle: fraction of (λ, β) with N(β) ≠ N(λ + β).
        for n in 2..=4 {
            let f = Field::new(n).unwrap();
            let order = f.order() as u16;
            let mut flips = 0u64;
            for lambda in 1..order {
                for beta in 0..order {
                    flips += norm_flip(&f, lambda, beta, 0) as u64;
                }
            }
            let frac = rat(flips, (order as u64) * (order as u64 - 1));
            if n == 2 {
                assert_eq!(frac, rat(1, 2));
            }
            let d = bell_distribution(&model(n, "z_flip:0.3")).unwrap();
            assert_eq!(*d.get(0, 1), rat(3, 10) * &frac);
            assert_eq!(*d.get(0, 0), BigRational::one() - rat(3, 10) * &frac);
            // Equivalently 2/N: the pairs containing zero.
            assert_eq!(frac, rat(2, order as u64));
        }
        let d = bell_distribution(&model(2, "z_flip:0.3")).unwrap();
        assert_eq!(*d.get(0, 1), rat(15, 100));
        assert!(check_ed_condition(&d).pass);
    }

    #[test]
    fn shift_noise_distribution() {
        for n in 2..=4 {
            let d = bell_distribution(&model(n, "shift_noise:0.2")).unwrap();
            let order = 1u64 << n;
            assert_eq!(*d.get(0, 0), rat(8, 10));
            for a in 1..order as usize {
                assert_eq!(*d.get(a, 0), rat(2, 10) / rat(order - 1, 1));
                assert!(d.get(a, 1).is_zero());
            }
            assert!(d.sum_rule_holds());
        }
        // Full shift noise: nothing flips and only a = 1 stays in the pair.
        for n in 2..=3 {
            let d = bell_distribution(&model(n, "shift_noise:1")).unwrap();
            let obs = predict_observables(&d);
            assert_eq!(obs.e_b, Some(BigRational::zero()));
            assert_eq!(obs.e_c, rat(1, (1 << n) - 1));
            assert!(obs.consistent);
        }
    }

    #[test]
    fn full_dephase_is_half() {
        for n in [2, 3, 5] {
            let d = bell_distribution(&model(n, "full_dephase")).unwrap();
            assert_eq!(*d.get(0, 0), rat(1, 2));
            assert_eq!(*d.get(0, 1), rat(1, 2));
            let obs = predict_observables(&d);
            assert_eq!(obs.e_b, Some(rat(1, 2)));
            assert_eq!(obs.e_c, BigRational::one());
            assert!(!check_ed_condition(&d).pass);
        }
    }

    #[test]
    fn error_matrix_example() {
        let mut probs = vec![BigRational::zero(); 8];
        probs[0] = rat(6, 10);
        probs[1] = rat(1, 10);
        probs[2] = rat(5, 100);
        probs[3] = rat(5, 100);
        probs[4] = rat(1, 10);
        probs[6] = rat(1, 10);
        let d = BellDistribution::from_entries(4, probs);
        assert_eq!(d.acceptance(), rat(8, 10));
        let [i, x, y, z] = error_matrix_exact(&d).unwrap();
        assert_eq!((i, z, x, y), (rat(3, 4), rat(1, 8), rat(1, 16), rat(1, 16)));
        let zero = BellDistribution::from_entries(4, {
            let mut v = vec![BigRational::zero(); 8];
            v[4] = BigRational::one();
            v
        });
        assert_eq!(error_matrix(&zero).unwrap_err(), AnalysisError::ZeroAcceptance);
        assert_eq!(predict_observables(&zero).e_b, None);
    }

    #[test]
    fn ed_condition_boundary() {
        let mut probs = vec![BigRational::zero(); 8];
        probs[0] = rat(1, 2);
        probs[1] = rat(1, 2);
        let d = BellDistribution::from_entries(4, probs);
        let v = check_ed_condition(&d);
        assert!(!v.pass);
        assert!(!v.e00_dominant);
    }

    #[test]
    fn intercept_examples() {
        let f = Field::new(2).unwrap();
        for (eta, want) in [(rat(0, 1), rat(0, 1)), (rat(1, 1), rat(1, 2)), (rat(2, 5), rat(1, 5))] {
            let obs = intercept_distribution(&f, &eta).unwrap();
            assert_eq!(obs.e_b, Some(want));
            assert_eq!(obs.e_c, BigRational::one());
        }
        assert!(matches!(
            bell_distribution(&model(2, "partial_intercept:0.4")),
            Err(AnalysisError::UnsupportedModel(_))
        ));
    }

    #[test]
    fn enumeration_agrees_with_closed_form() {
        for n in 2..=3 {
            for spec in [
                "identity",
                "z_flip:0.3",
                "shift_noise:0.2",
                "shift_noise:1",
                "custom:[(0.7,a=0,f=0x0),(0.2,a=1,f=0x6),(0.1,a=3,f=0x9)]",
            ] {
                let m = model(n, spec);
                let closed = predict_observables(&bell_distribution(&m).unwrap());
                let enumerated = exact_observables(&m).unwrap();
                assert_eq!(closed.e_c, enumerated.e_c, "{spec} n={n}");
                assert_eq!(closed.e_b, enumerated.e_b, "{spec} n={n}");
            }
        }
        let m = model(2, "full_dephase");
        let closed = predict_observables(&bell_distribution(&m).unwrap());
        assert_eq!(closed.e_b, exact_observables(&m).unwrap().e_b);
    }

    #[test]
    fn identity_holds_for_builtins() {
        for n in 2..=4 {
            for spec in ["identity", "z_flip:0.1", "shift_noise:0.35"] {
                let d = bell_distribution(&model(n, spec)).unwrap();
                assert_eq!(identity_residual(&d).unwrap(), BigRational::one());
            }
        }
    }

    #[test]
    fn report_serializes() {
        let r = analyze(&model(2, "z_flip:0.3")).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["bell"]["0,1"], 0.15);
        assert_eq!(json["pm_condition"], true);
        let r = analyze(&model(2, "partial_intercept:0.4")).unwrap();
        assert_eq!(r.e_b, Some(0.2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn sum_rule_structural(
                n in 2u32..=3,
                raw in proptest::collection::vec((1u32..100, 0u32..8, any::<u64>()), 1..5),
            ) {
                let f = Field::new(n).unwrap();
                let order = f.order() as u32;
                let total: u32 = raw.iter().map(|t| t.0).sum();
                let terms: Vec<String> = raw
                    .iter()
                    .map(|(w, a, m)| {
                        let mask = m & ((1u64 << order) - 1);
                        format!("({w}/{total},a={},f={:#x})", a % order, mask)
                    })
                    .collect();
                let spec = format!("custom:[{}]", terms.join(","));
                let m = ChannelModel::parse(&f, &spec).unwrap();
                let d = bell_distribution(&m).unwrap();
                prop_assert!(d.is_normalized());
                prop_assert!(d.sum_rule_holds());
                prop_assert!(predict_observables(&d).consistent);
            }
        }
    }
}
