//! Noise and adversary models for the quantum channel.
//!
//! A [`ChannelModel`] is a finite mixture with exact rational weights. Each
//! term is either a unitary X_a ∘ (diagonal phase), an intercept-resend
//! measurement in the computational basis, or an independent fair sign flip
//! on every index (the large-N form of complete dephasing).

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use thiserror::Error;

use crate::field::{Field, FieldElement};
use crate::qstates::{apply_error, DiagonalPhase, SparseKet};

/// Largest N for which complete dephasing is stored as the explicit uniform
/// mixture over all 2^N masks.
pub const EXPLICIT_DEPHASE_MAX_ORDER: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(String),
    #[error("channel weights sum to {0}, expected exactly 1")]
    NotNormalized(String),
    #[error("cannot parse channel spec {spec:?}: {reason}")]
    Parse { spec: String, reason: String },
}

fn parse_err(spec: &str, reason: impl Into<String>) -> ChannelError {
    ChannelError::Parse {
        spec: spec.to_string(),
        reason: reason.into(),
    }
}

/// Parses a decimal (`0.125`) or fraction (`1/8`) into an exact rational.
pub fn parse_probability(text: &str) -> Result<BigRational, String> {
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let n: BigInt = num.trim().parse().map_err(|_| format!("bad numerator in {t:?}"))?;
        let d: BigInt = den.trim().parse().map_err(|_| format!("bad denominator in {t:?}"))?;
        if d.is_zero() {
            return Err(format!("zero denominator in {t:?}"));
        }
        return Ok(BigRational::new(n, d));
    }
    let (int_part, frac_part) = t.split_once('.').unwrap_or((t, ""));
    let valid = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    if (int_part.is_empty() && frac_part.is_empty()) || !valid(int_part) || !valid(frac_part) {
        return Err(format!("not a decimal probability: {t:?}"));
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().map_err(|_| format!("bad number {t:?}"))?;
    let denom = num_traits::pow(BigInt::from(10), frac_part.len());
    Ok(BigRational::new(numer, denom))
}

fn check_unit(p: &BigRational) -> Result<(), ChannelError> {
    if p.is_negative() || *p > BigRational::one() {
        return Err(ChannelError::OutOfRange(p.to_string()));
    }
    Ok(())
}

/// Named channel families accepted on the command line and in configs.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinChannel {
    Identity,
    ZFlip(BigRational),
    ShiftNoise(BigRational),
    FullDephase,
    PartialIntercept(BigRational),
    Custom(Vec<CustomTerm>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CustomTerm {
    Unitary {
        probability: BigRational,
        shift: u32,
        mask: String,
    },
    Intercept {
        probability: BigRational,
    },
}

impl FromStr for BuiltinChannel {
    type Err = ChannelError;

    /// Accepts `name`, `name:param` or `name(param)`; custom terms are
    /// `(p,a=<shift>,f=<hex mask>)` or `(p,intercept)`.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let s = spec.trim();
        let (name, arg) = if let Some((n, a)) = s.split_once(':') {
            (n.trim(), Some(a.trim()))
        } else if let (Some(open), true) = (s.find('('), s.ends_with(')')) {
            (s[..open].trim(), Some(s[open + 1..s.len() - 1].trim()))
        } else {
            (s, None)
        };
        let prob = |arg: Option<&str>| -> Result<BigRational, ChannelError> {
            let a = arg.ok_or_else(|| parse_err(spec, format!("{name} needs a parameter")))?;
            let p = parse_probability(a).map_err(|e| parse_err(spec, e))?;
            check_unit(&p)?;
            Ok(p)
        };
        let no_arg = |arg: Option<&str>| match arg {
            None => Ok(()),
            Some(_) => Err(parse_err(spec, format!("{name} takes no parameter"))),
        };
        match name {
            "identity" => no_arg(arg).map(|_| Self::Identity),
            "full_dephase" => no_arg(arg).map(|_| Self::FullDephase),
            "z_flip" => Ok(Self::ZFlip(prob(arg)?)),
            "shift_noise" => Ok(Self::ShiftNoise(prob(arg)?)),
            "partial_intercept" => Ok(Self::PartialIntercept(prob(arg)?)),
            "custom" => {
                let body = arg.ok_or_else(|| parse_err(spec, "custom needs a term list"))?;
                parse_custom(spec, body).map(Self::Custom)
            }
            other => Err(parse_err(spec, format!("unknown channel {other:?}"))),
        }
    }
}

fn parse_custom(spec: &str, body: &str) -> Result<Vec<CustomTerm>, ChannelError> {
    let inner = body
        .trim()
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| parse_err(spec, "custom terms must be enclosed in [...]"))?;
    let mut terms = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let start = rest
            .strip_prefix('(')
            .ok_or_else(|| parse_err(spec, "expected '(' to open a term"))?;
        let end = start
            .find(')')
            .ok_or_else(|| parse_err(spec, "unterminated term"))?;
        let fields: Vec<&str> = start[..end].split(',').map(str::trim).collect();
        let probability = parse_probability(fields[0]).map_err(|e| parse_err(spec, e))?;
        check_unit(&probability)?;
        if fields.len() == 2 && fields[1] == "intercept" {
            terms.push(CustomTerm::Intercept { probability });
        } else {
            let mut shift = None;
            let mut mask = None;
            for f in &fields[1..] {
                match f.split_once('=') {
                    Some(("a", v)) => {
                        shift = Some(v.trim().parse::<u32>().map_err(|_| {
                            parse_err(spec, format!("bad shift {v:?}"))
                        })?)
                    }
                    Some(("f", v)) => mask = Some(v.trim().to_string()),
                    _ => return Err(parse_err(spec, format!("unknown term field {f:?}"))),
                }
            }
            terms.push(CustomTerm::Unitary {
                probability,
                shift: shift.unwrap_or(0),
                mask: mask.unwrap_or_else(|| "0x0".into()),
            });
        }
        rest = start[end + 1..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    if terms.is_empty() {
        return Err(parse_err(spec, "custom channel has no terms"));
    }
    Ok(terms)
}

impl fmt::Display for BuiltinChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::ZFlip(q) => write!(f, "z_flip:{q}"),
            Self::ShiftNoise(q) => write!(f, "shift_noise:{q}"),
            Self::FullDephase => write!(f, "full_dephase"),
            Self::PartialIntercept(q) => write!(f, "partial_intercept:{q}"),
            Self::Custom(terms) => {
                write!(f, "custom:[")?;
                for (k, t) in terms.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    match t {
                        CustomTerm::Unitary {
                            probability,
                            shift,
                            mask,
                        } => write!(f, "({probability},a={shift},f={mask})")?,
                        CustomTerm::Intercept { probability } => {
                            write!(f, "({probability},intercept)")?
                        }
                    }
                }
                write!(f, "]")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelAction {
    /// X_shift ∘ phase.
    Unitary {
        shift: FieldElement,
        phase: DiagonalPhase,
    },
    /// Measure in the computational basis and resend the outcome.
    InterceptResend,
    /// Independent fair (-1) phase on every index; equal in distribution
    /// to the uniform mixture over all diagonal masks.
    IndependentPhases,
}

#[derive(Debug, Clone)]
pub struct ChannelTerm {
    pub probability: BigRational,
    pub action: ChannelAction,
}

#[derive(Debug, Clone)]
pub struct ChannelModel {
    field: Field,
    label: String,
    terms: Vec<ChannelTerm>,
    sampler: WeightedIndex<f64>,
}

impl ChannelModel {
    pub fn new(field: &Field, label: impl Into<String>, terms: Vec<ChannelTerm>) -> Result<Self, ChannelError> {
        let mut total = BigRational::zero();
        for t in &terms {
            check_unit(&t.probability)?;
            total += &t.probability;
        }
        if total != BigRational::one() {
            return Err(ChannelError::NotNormalized(total.to_string()));
        }
        let terms: Vec<ChannelTerm> = terms
            .into_iter()
            .filter(|t| !t.probability.is_zero())
            .collect();
        let weights: Vec<f64> = terms
            .iter()
            .map(|t| t.probability.to_f64().unwrap_or(0.0))
            .collect();
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| ChannelError::NotNormalized(e.to_string()))?;
        Ok(Self {
            field: field.clone(),
            label: label.into(),
            terms,
            sampler,
        })
    }

    pub fn parse(field: &Field, spec: &str) -> Result<Self, ChannelError> {
        Self::builtin(field, &spec.parse()?)
    }

    pub fn builtin(field: &Field, which: &BuiltinChannel) -> Result<Self, ChannelError> {
        let order = field.order();
        let one = BigRational::one();
        let identity = ChannelAction::Unitary {
            shift: field.zero(),
            phase: DiagonalPhase::zero(),
        };
        let term = |p: BigRational, action| ChannelTerm {
            probability: p,
            action,
        };
        let terms = match which {
            BuiltinChannel::Identity => vec![term(one, identity)],
            BuiltinChannel::ZFlip(q) => vec![
                term(&one - q, identity),
                term(
                    q.clone(),
                    ChannelAction::Unitary {
                        shift: field.zero(),
                        phase: DiagonalPhase::norm(order),
                    },
                ),
            ],
            BuiltinChannel::ShiftNoise(eta) => {
                let each = eta / BigRational::from_integer(BigInt::from(order - 1));
                std::iter::once(term(&one - eta, identity))
                    .chain(field.nonzero_elements().map(|a| {
                        term(
                            each.clone(),
                            ChannelAction::Unitary {
                                shift: a,
                                phase: DiagonalPhase::zero(),
                            },
                        )
                    }))
                    .collect()
            }
            BuiltinChannel::FullDephase if order <= EXPLICIT_DEPHASE_MAX_ORDER => {
                let count = 1u64 << order;
                let each = BigRational::new(BigInt::from(1), BigInt::from(count));
                (0..count)
                    .map(|m| {
                        term(
                            each.clone(),
                            ChannelAction::Unitary {
                                shift: field.zero(),
                                phase: DiagonalPhase::from_u64(m),
                            },
                        )
                    })
                    .collect()
            }
            BuiltinChannel::FullDephase => vec![term(one, ChannelAction::IndependentPhases)],
            BuiltinChannel::PartialIntercept(eta) => vec![
                term(&one - eta, identity),
                term(eta.clone(), ChannelAction::InterceptResend),
            ],
            BuiltinChannel::Custom(list) => {
                let mut out = Vec::with_capacity(list.len());
                for t in list {
                    out.push(match t {
                        CustomTerm::Unitary {
                            probability,
                            shift,
                            mask,
                        } => {
                            let shift = field.element(*shift).map_err(|e| {
                                parse_err(&which.to_string(), e.to_string())
                            })?;
                            let phase = DiagonalPhase::from_hex(mask, order)
                                .map_err(|e| parse_err(&which.to_string(), e))?;
                            term(probability.clone(), ChannelAction::Unitary { shift, phase })
                        }
                        CustomTerm::Intercept { probability } => {
                            term(probability.clone(), ChannelAction::InterceptResend)
                        }
                    });
                }
                out
            }
        };
        Self::new(field, which.to_string(), terms)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn terms(&self) -> &[ChannelTerm] {
        &self.terms
    }

    pub fn is_unitary_mixture(&self) -> bool {
        self.terms
            .iter()
            .all(|t| !matches!(t.action, ChannelAction::InterceptResend))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelAction {
        self.terms[self.sampler.sample(rng)].action
    }

    /// Sends one ket through the channel.
    pub fn transmit<R: Rng + ?Sized>(&self, ket: &SparseKet, rng: &mut R) -> SparseKet {
        let action = self.sample_action(rng);
        apply_action(&self.field, action, ket, rng)
    }
}

/// Applies one already-sampled channel action.
pub fn apply_action<R: Rng + ?Sized>(
    field: &Field,
    action: ChannelAction,
    ket: &SparseKet,
    rng: &mut R,
) -> SparseKet {
    match action {
        ChannelAction::Unitary { shift, phase } => {
            apply_error(field, shift, &phase, ket).expect("channel built over this field")
        }
        ChannelAction::InterceptResend => {
            let terms = ket.terms();
            SparseKet::basis(terms[rng.gen_range(0..terms.len())].0)
        }
        ChannelAction::IndependentPhases => {
            let flips: Vec<(FieldElement, bool)> = ket
                .terms()
                .iter()
                .map(|&(idx, neg)| (idx, neg ^ rng.gen::<bool>()))
                .collect();
            SparseKet::from_terms(&flips)
        }
    }
}
