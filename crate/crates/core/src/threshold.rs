//! Tolerable bit error rate: the quadratic criterion f(e_b, e_c, e_11), the
//! admissible region R, its minimizer e_c*(e_b), and a grid scan for e_max.

use std::io::{self, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("field degree n = {0} is outside 2..=8")]
    Degree(u32),
    #[error("grid resolution {0} is too small (need at least 2)")]
    Grid(u32),
    #[error("e_b = {0} is outside [0, 1/2)")]
    EbDomain(f64),
}

/// Slack used when a double-precision comparison sits on an equality.
pub const GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityPoint {
    pub e_b: f64,
    pub e_c: f64,
    pub e_11: f64,
    pub n: u32,
}

impl FeasibilityPoint {
    pub fn new(e_b: f64, e_c: f64, e_11: f64, n: u32) -> Self {
        Self { e_b, e_c, e_11, n }
    }
}

fn order(n: u32) -> Result<f64, ThresholdError> {
    if !(2..=8).contains(&n) {
        return Err(ThresholdError::Degree(n));
    }
    Ok((1u32 << n) as f64)
}

fn big(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// [1 - e_b e_c - N(1 - e_c)/(N - 2) + 2 e_11]² - e_b(1 - e_b) e_c².
pub fn f_value(p: &FeasibilityPoint) -> Result<f64, ThresholdError> {
    let nn = order(p.n)?;
    let inner = 1.0 - p.e_b * p.e_c - nn * (1.0 - p.e_c) / (nn - 2.0) + 2.0 * p.e_11;
    Ok(inner * inner - p.e_b * (1.0 - p.e_b) * p.e_c * p.e_c)
}

pub fn f_value_exact(
    e_b: &BigRational,
    e_c: &BigRational,
    e_11: &BigRational,
    n: u32,
) -> Result<BigRational, ThresholdError> {
    let nn = big(order(n)? as i64);
    let one = big(1);
    let two = big(2);
    let inner = &one - e_b * e_c - &nn * (&one - e_c) / (&nn - &two) + &two * e_11;
    Ok(&inner * &inner - e_b * (&one - e_b) * e_c * e_c)
}

/// e_b e_c + (N - 1)(1 - e_c)/(N - 2).
pub fn region_lhs(e_b: f64, e_c: f64, n: u32) -> Result<f64, ThresholdError> {
    let nn = order(n)?;
    Ok(e_b * e_c + (nn - 1.0) * (1.0 - e_c) / (nn - 2.0))
}

pub fn region_lhs_exact(e_b: &BigRational, e_c: &BigRational, n: u32) -> Result<BigRational, ThresholdError> {
    let nn = big(order(n)? as i64);
    let one = big(1);
    Ok(e_b * e_c + (&nn - &one) * (&one - e_c) / (&nn - big(2)))
}

/// Strict membership in R.
pub fn in_region(p: &FeasibilityPoint) -> Result<bool, ThresholdError> {
    Ok(region_lhs(p.e_b, p.e_c, p.n)? < 0.5)
}

/// N / [2(N - 1 - (N - 2) e_b)].
pub fn ec_star(e_b: f64, n: u32) -> Result<f64, ThresholdError> {
    let nn = order(n)?;
    if !(0.0..0.5).contains(&e_b) {
        return Err(ThresholdError::EbDomain(e_b));
    }
    Ok(nn / (2.0 * (nn - 1.0 - (nn - 2.0) * e_b)))
}

/// Same formula without the domain check, exactly. Equals 1 at e_b = 1/2.
pub fn ec_star_exact(e_b: &BigRational, n: u32) -> Result<BigRational, ThresholdError> {
    let nn = big(order(n)? as i64);
    let one = big(1);
    let two = big(2);
    Ok(&nn / (&two * (&nn - &one - (&nn - &two) * e_b)))
}

/// f(e_b, e_c*(e_b), 0) exactly: the infimum of f over the closure of R's slice.
pub fn f_at_minimizer_exact(e_b: &BigRational, n: u32) -> Result<BigRational, ThresholdError> {
    let c = ec_star_exact(e_b, n)?;
    f_value_exact(e_b, &c, &BigRational::zero(), n)
}

fn ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    /// f > 0 everywhere on the slice and on its closure.
    Feasible,
    /// The slice of R is empty but its closure has a point with f = 0.
    Boundary,
    /// Some admissible point has f ≤ 0.
    Infeasible,
    /// No admissible (e_c, e_11) at all.
    Empty,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub e_b: f64,
    pub status: RowStatus,
    /// Minimum of f over sampled admissible points and the closure minimizer.
    pub min_f: Option<f64>,
    pub sampled: u64,
    /// e_c*(e_b) when it lies in [0, 1].
    pub minimizer: Option<f64>,
    /// For infeasible rows: an admissible point with f ≤ 0.
    pub witness: Option<FeasibilityPoint>,
}

impl ScanRow {
    pub fn feasible(&self) -> bool {
        self.status == RowStatus::Feasible
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdScan {
    pub n: u32,
    pub grid: u32,
    pub e11_grid: u32,
    /// Largest feasible grid value of e_b.
    pub e_max: f64,
    /// Bisection refinement of the frontier between the last feasible row
    /// and the next one, in exact arithmetic on f(e_b, e_c*(e_b), 0).
    pub e_max_refined: f64,
    pub resolution: f64,
    /// Every row at or below e_max is feasible.
    pub contiguous: bool,
    /// Admissible sampled points with e_b < 1/2 and f ≤ 0.
    pub counterexamples: u64,
    pub sampled_points: u64,
    pub rows: Vec<ScanRow>,
}

pub const DEFAULT_E11_GRID: u32 = 20;

fn f_sign_positive(e_b: u64, e_c: u64, e_11: u64, grid: u64, e11_grid: u64, n: u32, approx: f64) -> bool {
    if approx.abs() > GUARD {
        return approx > 0.0;
    }
    f_value_exact(&ratio(e_b, grid), &ratio(e_c, grid), &ratio(e_11, e11_grid), n)
        .expect("degree checked by caller")
        .is_positive()
}

fn in_region_exact_or_guarded(e_b: u64, e_c: u64, grid: u64, n: u32) -> bool {
    let approx = region_lhs(e_b as f64 / grid as f64, e_c as f64 / grid as f64, n).unwrap();
    if (approx - 0.5).abs() > GUARD {
        return approx < 0.5;
    }
    region_lhs_exact(&ratio(e_b, grid), &ratio(e_c, grid), n).unwrap() < ratio(1, 2)
}

fn scan_row(n: u32, grid: u32, e11_grid: u32, i: u32) -> ScanRow {
    let (g, g11) = (grid as u64, e11_grid as u64);
    let eb = i as u64;
    let e_b = eb as f64 / g as f64;
    let mut min_f = f64::INFINITY;
    let mut sampled = 0;
    let mut witness = None;
    for j in 0..=g {
        if !in_region_exact_or_guarded(eb, j, g, n) {
            continue;
        }
        let e_c = j as f64 / g as f64;
        for t in 0..=g11 {
            let e_11 = t as f64 / g11 as f64;
            let p = FeasibilityPoint::new(e_b, e_c, e_11, n);
            let f = f_value(&p).unwrap();
            sampled += 1;
            min_f = min_f.min(f);
            if witness.is_none() && !f_sign_positive(eb, j, t, g, g11, n, f) {
                witness = Some(p);
            }
        }
    }
    let e_b_exact = ratio(eb, g);
    let c = ec_star_exact(&e_b_exact, n).unwrap();
    let minimizer = (c <= ratio(1, 1)).then(|| c.to_f64().unwrap());
    let closure_f = minimizer.map(|_| f_at_minimizer_exact(&e_b_exact, n).unwrap());
    if let Some(cf) = &closure_f {
        min_f = min_f.min(cf.to_f64().unwrap());
    }
    let status = match (&closure_f, sampled, &witness) {
        (_, _, Some(_)) => RowStatus::Infeasible,
        (None, 0, None) => RowStatus::Empty,
        (Some(cf), 0, None) => {
            if cf.is_positive() {
                // Slice nonempty but between grid lines.
                RowStatus::Feasible
            } else if region_lhs_exact(&e_b_exact, &c, n).unwrap() == ratio(1, 2) && c == ratio(1, 1) {
                RowStatus::Boundary
            } else {
                RowStatus::Infeasible
            }
        }
        (Some(cf), _, None) => {
            if cf.is_positive() {
                RowStatus::Feasible
            } else {
                RowStatus::Infeasible
            }
        }
        (None, _, None) => RowStatus::Feasible,
    };
    ScanRow {
        e_b,
        status,
        min_f: min_f.is_finite().then_some(min_f),
        sampled,
        minimizer,
        witness,
    }
}

/// Scans e_b = i/grid for i = 0..=grid. Each row samples e_c on the same grid
/// and e_11 on a coarser one, keeps the points in R, and adds the closure
/// minimizer e_c*(e_b) evaluated exactly.
pub fn e_max_scan(n: u32, grid: u32) -> Result<ThresholdScan, ThresholdError> {
    e_max_scan_with(n, grid, DEFAULT_E11_GRID)
}

pub fn e_max_scan_with(n: u32, grid: u32, e11_grid: u32) -> Result<ThresholdScan, ThresholdError> {
    order(n)?;
    if grid < 2 {
        return Err(ThresholdError::Grid(grid));
    }
    let e11_grid = e11_grid.max(1);
    let rows: Vec<ScanRow> = (0..=grid)
        .into_par_iter()
        .map(|i| scan_row(n, grid, e11_grid, i))
        .collect();
    let last = rows.iter().rposition(ScanRow::feasible);
    let e_max = last.map_or(0.0, |k| rows[k].e_b);
    let contiguous = last.is_none_or(|k| rows[..=k].iter().all(ScanRow::feasible));
    let counterexamples = rows
        .iter()
        .filter(|r| r.e_b < 0.5 && r.witness.is_some())
        .count() as u64;
    let sampled_points = rows.iter().map(|r| r.sampled).sum();
    let e_max_refined = match last {
        Some(k) if k < grid as usize => refine(n, k as u64, grid as u64),
        _ => e_max,
    };
    Ok(ThresholdScan {
        n,
        grid,
        e11_grid,
        e_max,
        e_max_refined,
        resolution: 1.0 / grid as f64,
        contiguous,
        counterexamples,
        sampled_points,
        rows,
    })
}

/// Bisection on "f(e_b, e_c*(e_b), 0) > 0 and e_c*(e_b) < 1" between two
/// grid rows.
fn refine(n: u32, lo_index: u64, grid: u64) -> f64 {
    let mut lo = ratio(lo_index, grid);
    let mut hi = ratio(lo_index + 1, grid);
    let one = ratio(1, 1);
    let half = ratio(1, 2);
    for _ in 0..60 {
        let mid = (&lo + &hi) * &half;
        let ok = ec_star_exact(&mid, n).unwrap() < one && f_at_minimizer_exact(&mid, n).unwrap().is_positive();
        if ok {
            lo = mid;
        } else {
            hi = mid;
        }
        // Keep the denominators small.
        let scale: BigInt = BigInt::from(1u64) << 64usize;
        lo = BigRational::new((lo.clone() * BigRational::from_integer(scale.clone())).floor().to_integer(), scale.clone());
        hi = BigRational::new((hi.clone() * BigRational::from_integer(scale.clone())).ceil().to_integer(), scale);
    }
    lo.to_f64().unwrap()
}

/// f(e_b, e_c*(e_b), 0) on e_b = i/(2 points), i = 0..=points, with the sign
/// decided exactly. Returns (e_b, positive) pairs.
pub fn minimizer_scan(n: u32, points: u32) -> Result<Vec<(f64, bool)>, ThresholdError> {
    order(n)?;
    Ok((0..=points)
        .into_par_iter()
        .map(|i| {
            let e_b = ratio(i as u64, 2 * points as u64);
            let f = f_at_minimizer_exact(&e_b, n).unwrap();
            (e_b.to_f64().unwrap(), f.is_positive())
        })
        .collect())
}

pub fn write_csv<W: Write>(scan: &ThresholdScan, mut out: W) -> io::Result<()> {
    writeln!(out, "e_b,min_f,feasible,status")?;
    for row in &scan.rows {
        let min_f = row.min_f.map_or(String::new(), |v| format!("{v:.12e}"));
        let status = serde_json::to_value(row.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        writeln!(out, "{},{},{},{}", row.e_b, min_f, row.feasible() as u8, status)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub n: u32,
    pub grid: u32,
    pub e_max: f64,
    pub e_max_refined: f64,
    pub resolution: f64,
    pub contiguous: bool,
    pub counterexamples: u64,
    pub sampled_points: u64,
    pub boundary_rows: Vec<f64>,
}

impl From<&ThresholdScan> for ScanSummary {
    fn from(s: &ThresholdScan) -> Self {
        Self {
            n: s.n,
            grid: s.grid,
            e_max: s.e_max,
            e_max_refined: s.e_max_refined,
            resolution: s.resolution,
            contiguous: s.contiguous,
            counterexamples: s.counterexamples,
            sampled_points: s.sampled_points,
            boundary_rows: s
                .rows
                .iter()
                .filter(|r| r.status == RowStatus::Boundary)
                .map(|r| r.e_b)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_examples() {
        assert_eq!(f_value(&FeasibilityPoint::new(0.0, 1.0, 0.0, 2)).unwrap(), 1.0);
        assert!(f_value(&FeasibilityPoint::new(0.5, 1.0, 0.0, 3)).unwrap().abs() < 1e-15);
        let v = f_value(&FeasibilityPoint::new(0.3, 5.0 / 6.0, 0.0, 2)).unwrap();
        assert!((v - 1.0 / 36.0).abs() < 1e-14);
        let exact = f_value_exact(&ratio(3, 10), &ratio(5, 6), &BigRational::zero(), 2).unwrap();
        assert_eq!(exact, ratio(1, 36));
        assert_eq!(f_value(&FeasibilityPoint::new(0.0, 1.0, 0.0, 1)), Err(ThresholdError::Degree(1)));
    }

    #[test]
    fn region_examples() {
        assert!(in_region(&FeasibilityPoint::new(0.0, 1.0, 0.0, 2)).unwrap());
        assert_eq!(region_lhs_exact(&ratio(3, 10), &ratio(5, 6), 2).unwrap(), ratio(1, 2));
        for n in 2..=4 {
            let nn = (1u32 << n) as f64;
            // (N-1)(1-e_c)/(N-2) = 1/2
            let e_c = 1.0 - (nn - 2.0) / (2.0 * (nn - 1.0));
            for e_b in [0.0, 0.2, 0.7] {
                assert!(!in_region(&FeasibilityPoint::new(e_b, e_c - 1e-3, 0.0, n)).unwrap());
            }
        }
    }

    #[test]
    fn ec_star_examples() {
        assert!((ec_star(0.0, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((ec_star(0.3, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((ec_star(0.499_999_999, 2).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(ec_star_exact(&ratio(1, 2), 2).unwrap(), ratio(1, 1));
        assert!(ec_star(0.5, 2).is_err());
    }

    #[test]
    fn ec_star_is_grid_minimizer() {
        for n in 2..=4 {
            for k in 0..50 {
                let e_b = k as f64 / 100.0;
                let c = ec_star(e_b, n).unwrap();
                let at_star = f_value(&FeasibilityPoint::new(e_b, c, 0.0, n)).unwrap();
                for j in 0..=1000 {
                    let e_c = j as f64 / 1000.0;
                    let p = FeasibilityPoint::new(e_b, e_c, 0.0, n);
                    if in_region(&p).unwrap() {
                        assert!(f_value(&p).unwrap() >= at_star - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn e11_only_increases_f_in_region() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut seen = 0;
        while seen < 20_000 {
            let n = rng.gen_range(2..=4);
            let p = FeasibilityPoint::new(rng.gen(), rng.gen(), rng.gen(), n);
            if !in_region(&p).unwrap() {
                continue;
            }
            seen += 1;
            let base = FeasibilityPoint { e_11: 0.0, ..p };
            assert!(f_value(&p).unwrap() >= f_value(&base).unwrap() - 1e-12);
        }
    }

    #[test]
    fn iff_on_minimizer() {
        for n in 2..=4 {
            let scan = minimizer_scan(n, 1000).unwrap();
            for (e_b, positive) in scan {
                assert_eq!(positive, e_b < 0.5, "n={n} e_b={e_b}");
            }
        }
    }

    #[test]
    fn scan_small_grid() {
        let s = e_max_scan(2, 200).unwrap();
        assert_eq!(s.e_max, 0.495);
        assert!(s.contiguous);
        assert_eq!(s.counterexamples, 0);
        assert!((s.e_max_refined - 0.5).abs() < 1e-12);
        let half = &s.rows[100];
        assert_eq!(half.e_b, 0.5);
        assert_eq!(half.status, RowStatus::Boundary);
        assert!(s.rows[101..].iter().all(|r| r.status == RowStatus::Empty));
    }

    #[test]
    fn scan_refines_monotonically() {
        let mut prev_gap = f64::INFINITY;
        for grid in [100, 250, 500] {
            let s = e_max_scan_with(3, grid, 4).unwrap();
            let gap = 0.5 - s.e_max;
            assert!(gap > 0.0 && gap < prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn csv_shape() {
        let s = e_max_scan_with(2, 10, 2).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.starts_with("e_b,min_f,feasible,status\n0,"));
    }
}
