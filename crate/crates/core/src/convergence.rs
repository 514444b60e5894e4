//! The convergence parameter `R` and the R-recurrence test.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::TabooRecursion;
use crate::matrix::{ball, period, strongly_connected_component, MatrixSource, StateId};
use crate::tail::{TailEstimate, TailTracker};

pub const DEFAULT_FINITE_TOL: f64 = 1e-8;
pub const DEFAULT_LADDER_TOL: f64 = 1e-4;
/// Horizon cap shared by every adaptive series in the crate.
pub const N_MAX: usize = 1 << 18;
/// Horizon of the recurrence test attached to ladder reports.
pub const LADDER_HORIZON: usize = 1 << 14;

/// Relative bracket below which power iteration always stops; tighter
/// requests cannot be met in double precision.
const BRACKET_FLOOR: f64 = 1e-14;
const MAX_POWER_ITERATIONS: usize = 2_000_000;
/// Radius of the ball used to detect the period of a lazy source.
const PERIOD_PROBE_RADIUS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RMethod {
    DenseOracle,
    TruncationLadder,
    AnalyticModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Recurrence {
    #[serde(rename = "R-recurrent")]
    RRecurrent,
    #[serde(rename = "R-transient")]
    RTransient,
    #[serde(rename = "undetermined")]
    Undetermined,
    /// `S_N > 1`: the candidate exceeds the convergence parameter.
    #[serde(rename = "above convergence parameter")]
    AboveConvergence,
}

impl std::fmt::Display for Recurrence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Recurrence::RRecurrent => "R-recurrent",
            Recurrence::RTransient => "R-transient",
            Recurrence::Undetermined => "undetermined",
            Recurrence::AboveConvergence => "above convergence parameter",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LadderRung {
    pub radius: usize,
    pub states: usize,
    #[serde(rename = "R")]
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    #[serde(rename = "R")]
    pub r: f64,
    pub method: RMethod,
    pub recurrence: Recurrence,
    #[serde(rename = "S_N")]
    pub lemma_partial_sum: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub k: StateId,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<LadderRung>,
    /// Set when the last two ladder rungs differ by more than the tolerance.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub extrapolated: bool,
}

/// Spectral radius of a finite non-negative matrix with its Collatz–Wielandt
/// bracket and positive right Perron vector (max-normalized).
#[derive(Clone, Debug)]
pub struct PerronRoot {
    pub rho: f64,
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
    pub vector: Vec<f64>,
}

/// Power iteration on `A + σI` with `σ` the mean of the extreme row sums.
/// The shift makes every irreducible matrix primitive, periodic ones
/// included, and the bracket `min (Bx)_i/x_i ≤ ρ(B) ≤ max (Bx)_i/x_i`
/// certifies the result.
pub fn perron_root(src: &MatrixSource, tol: f64) -> Result<PerronRoot> {
    let n = src
        .n_states()
        .ok_or_else(|| Error::invalid("power iteration needs a finite source"))?;
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let (mut fmin, mut fmax) = (f64::INFINITY, 0.0f64);
    offsets.push(0);
    for i in 0..n {
        let row = src.row(StateId::from(i))?;
        let mut f = 0.0;
        for &(j, a) in row.iter() {
            cols.push(j.0 as usize);
            vals.push(a);
            f += a;
        }
        fmin = fmin.min(f);
        fmax = fmax.max(f);
        offsets.push(cols.len());
    }
    if fmax == 0.0 {
        return Err(Error::invalid("zero matrix has no Perron root"));
    }
    let sigma = 0.5 * (fmin + fmax);
    let target = tol.max(BRACKET_FLOOR);

    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut gap = f64::INFINITY;
    for it in 1..=MAX_POWER_ITERATIONS {
        let (mut lo, mut hi, mut norm) = (f64::INFINITY, 0.0f64, 0.0f64);
        for i in 0..n {
            let mut s = sigma * x[i];
            for p in offsets[i]..offsets[i + 1] {
                s += vals[p] * x[cols[p]];
            }
            y[i] = s;
            let ratio = s / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
            norm = norm.max(s);
        }
        for v in y.iter_mut() {
            *v /= norm;
        }
        std::mem::swap(&mut x, &mut y);
        let rho = 0.5 * (lo + hi) - sigma;
        if rho.is_nan() || rho <= 0.0 {
            continue;
        }
        gap = (hi - lo) / rho;
        if gap <= target {
            return Ok(PerronRoot {
                rho,
                lower: lo - sigma,
                upper: hi - sigma,
                iterations: it,
                vector: x,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_POWER_ITERATIONS,
        gap,
    })
}

/// Period of the class of `k`: exact on finite sources, probed on a ball
/// around `k` for lazy ones.
pub(crate) fn detect_period(src: &MatrixSource, k: StateId) -> Result<usize> {
    let states = match src.states() {
        Some(s) => s,
        None => ball(src, k, PERIOD_PROBE_RADIUS)?,
    };
    period(src, &states, k)
}

/// Result of the taboo return series `S_N = Σ_{n≤N} Rⁿ·₍k₎a_kk⁽ⁿ⁾`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classification {
    pub recurrence: Recurrence,
    #[serde(rename = "S_N")]
    pub partial_sum: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub tail: TailEstimate,
    /// The verdict rests on the tail extrapolation rather than on `S_N`.
    pub extrapolated: bool,
}

/// Runs the return series until `S_N ≥ stop_at` or `horizon` terms.
fn return_series(
    src: &MatrixSource,
    r: f64,
    k: StateId,
    horizon: usize,
    stop_at: f64,
) -> Result<(TailTracker, usize)> {
    let block = detect_period(src, k)?;
    let mut rec = TabooRecursion::new(src, k, k, r)?;
    let mut tracker = TailTracker::new(block);
    let mut n = 0;
    while n < horizon {
        rec.advance()?;
        n += 1;
        tracker.push(rec.value(k));
        if tracker.total() >= stop_at {
            break;
        }
    }
    Ok((tracker, n))
}

/// Partial sums are monotone in `N`; the verdict is R-recurrent once
/// `S_N ≥ 1 − tol`, above the convergence parameter once `S_N > 1 + tol`,
/// and otherwise follows the tail extrapolation when it is reliable.
pub fn classify_recurrence(
    src: &MatrixSource,
    r: f64,
    k: StateId,
    horizon: usize,
    tol: f64,
) -> Result<Classification> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::invalid(format!("R must be positive, got {r}")));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let (tracker, n) = return_series(src, r, k, horizon, f64::INFINITY)?;
    let partial_sum = tracker.total();
    let tail = tracker.estimate();
    let (recurrence, extrapolated) = if partial_sum > 1.0 + tol {
        (Recurrence::AboveConvergence, false)
    } else if partial_sum >= 1.0 - tol {
        (Recurrence::RRecurrent, false)
    } else if tail.model.is_reliable() {
        if tail.extrapolated() >= 1.0 - tol {
            (Recurrence::RRecurrent, true)
        } else {
            (Recurrence::RTransient, true)
        }
    } else {
        (Recurrence::Undetermined, false)
    };
    Ok(Classification {
        recurrence,
        partial_sum,
        horizon: n,
        tail,
        extrapolated,
    })
}

fn finite_report(src: &MatrixSource, k: StateId, tol: f64) -> Result<ConvergenceReport> {
    if !matches!(src.n_states(), Some(n) if k.index().is_some_and(|i| i < n)) {
        return Err(Error::UnknownState(k));
    }
    let root = perron_root(src, tol)?;
    let r = 1.0 / root.rho;
    let (tracker, n) = return_series(src, r, k, N_MAX, 1.0 - 10.0 * tol)?;
    Ok(ConvergenceReport {
        r,
        method: RMethod::DenseOracle,
        recurrence: Recurrence::RRecurrent,
        lemma_partial_sum: tracker.total(),
        horizon: n,
        k,
        ladder: Vec::new(),
        extrapolated: false,
    })
}

/// `R = 1/ρ(A)` for a finite irreducible source, reported at reference
/// state 0. Finite irreducible matrices are always R-recurrent.
pub fn convergence_parameter_finite(src: &MatrixSource, tol: f64) -> Result<ConvergenceReport> {
    finite_report(src, StateId(0), tol)
}

/// As [`convergence_parameter_finite`] with the return series taken at `k`.
pub fn convergence_parameter_finite_at(
    src: &MatrixSource,
    k: StateId,
    tol: f64,
) -> Result<ConvergenceReport> {
    finite_report(src, k, tol)
}

/// R of the principal submatrix on the strongly connected component of `k`
/// inside `ball(k, radius)`.
pub fn truncated_r(src: &MatrixSource, k: StateId, radius: usize) -> Result<LadderRung> {
    let states = ball(src, k, radius)?;
    let class = strongly_connected_component(src, &states, k)?;
    let restricted = src.restrict(&class)?;
    let root = perron_root(&restricted.source, 1e-13)?;
    Ok(LadderRung {
        radius,
        states: class.len(),
        r: 1.0 / root.rho,
    })
}

/// Ladder of truncated R values over increasing radii. Spectral radii of
/// nested principal submatrices increase, so the ladder must be
/// nonincreasing; the last rung is reported. Finite sources get the exact
/// single-rung answer.
pub fn convergence_parameter_ladder(
    src: &MatrixSource,
    k: StateId,
    radii: &[usize],
    tol: f64,
) -> Result<ConvergenceReport> {
    if src.is_finite() {
        return finite_report(src, k, tol.min(DEFAULT_FINITE_TOL));
    }
    if radii.is_empty() {
        return Err(Error::invalid("ladder needs at least one radius"));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("ladder radii must be strictly increasing"));
    }
    let ladder: Vec<LadderRung> = radii
        .par_iter()
        .map(|&radius| truncated_r(src, k, radius))
        .collect::<Result<_>>()?;
    for w in ladder.windows(2) {
        if w[1].r > w[0].r * (1.0 + tol) {
            return Err(Error::LadderNotMonotone {
                previous_radius: w[0].radius,
                previous: w[0].r,
                radius: w[1].radius,
                current: w[1].r,
            });
        }
    }
    let last = *ladder.last().expect("nonempty ladder");
    let extrapolated = ladder
        .len()
        .checked_sub(2)
        .map(|p| (ladder[p].r - last.r).abs() > tol * last.r)
        .unwrap_or(true);
    let class = classify_recurrence(src, last.r, k, LADDER_HORIZON, tol)?;
    Ok(ConvergenceReport {
        r: last.r,
        method: RMethod::TruncationLadder,
        recurrence: class.recurrence,
        lemma_partial_sum: class.partial_sum,
        horizon: class.horizon,
        k,
        ladder,
        extrapolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn srw(p: f64) -> MatrixSource {
        MatrixSource::lazy(move |i| vec![(StateId(i.0 - 1), 1.0 - p), (StateId(i.0 + 1), p)]).build()
    }

    #[test]
    fn finite_examples() {
        let a = MatrixSource::from_dense(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let rep = convergence_parameter_finite(&a, 1e-10).unwrap();
        assert!((rep.r - 0.5).abs() < 1e-12);
        assert_eq!(rep.recurrence, Recurrence::RRecurrent);
        assert!((rep.lemma_partial_sum - 1.0).abs() < 1e-12);

        let ones = MatrixSource::from_dense(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let rep = convergence_parameter_finite(&ones, 1e-10).unwrap();
        assert!((rep.r - 0.5).abs() < 1e-12);
        assert!(rep.lemma_partial_sum >= 1.0 - 1e-9 && rep.lemma_partial_sum <= 1.0);
        // S_N = 1 − 2^{-N}
        assert!((rep.lemma_partial_sum - (1.0 - 0.5f64.powi(rep.horizon as i32))).abs() < 1e-15);

        let b = MatrixSource::from_dense(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        let rep = convergence_parameter_finite(&b, 1e-12).unwrap();
        assert!((rep.r * (1.0 + 6f64.sqrt()) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn report_json_is_flat() {
        let a = MatrixSource::from_dense(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let rep = convergence_parameter_finite(&a, 1e-10).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        for key in ["R", "method", "recurrence", "S_N", "N", "k"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["recurrence"], "R-recurrent");
        assert_eq!(v["method"], "dense-oracle");
    }

    #[test]
    fn classify_examples() {
        let cycle = MatrixSource::from_dense(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let c = classify_recurrence(&cycle, 1.0, StateId(0), 2, 1e-9).unwrap();
        assert_eq!(c.partial_sum, 1.0);
        assert_eq!(c.recurrence, Recurrence::RRecurrent);

        let ones = MatrixSource::from_dense(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let c = classify_recurrence(&ones, 0.5, StateId(0), 40, 1e-9).unwrap();
        assert!((c.partial_sum - (1.0 - 0.5f64.powi(40))).abs() < 1e-15);
        assert_eq!(c.recurrence, Recurrence::RRecurrent);

        // Below R the return series sums to less than one.
        let c = classify_recurrence(&ones, 0.4, StateId(0), 256, 1e-9).unwrap();
        assert_eq!(c.recurrence, Recurrence::RTransient);
        assert!(c.extrapolated);
    }

    #[test]
    fn srw_is_recurrent_only_through_the_tail() {
        let r = 1.0 / (2.0 * 0.21f64.sqrt());
        let c = classify_recurrence(&srw(0.3), r, StateId(0), 10_000, 1e-4).unwrap();
        assert!(c.partial_sum < 1.0 - 1e-3);
        assert_eq!(c.recurrence, Recurrence::RRecurrent, "{c:?}");
        assert!(c.extrapolated);
        assert!((c.tail.extrapolated() - 1.0).abs() < 1e-4, "{c:?}");
    }

    #[test]
    fn srw_ladder_decreases_towards_reference() {
        let r_ref = 1.0 / (2.0 * 0.21f64.sqrt());
        let rep = convergence_parameter_ladder(&srw(0.3), StateId(0), &[8, 16, 32, 64], 1e-4).unwrap();
        assert_eq!(rep.method, RMethod::TruncationLadder);
        assert!(rep.ladder.windows(2).all(|w| w[1].r <= w[0].r));
        assert!((rep.r - r_ref).abs() < 1e-3, "{}", rep.r);
        assert!(rep.r >= r_ref);

        let rep = convergence_parameter_ladder(&srw(0.5), StateId(0), &[8, 16, 32, 64], 1e-4).unwrap();
        assert!((rep.r - 1.0).abs() < 1e-3);
    }

    #[test]
    fn finite_ladder_is_single_rung() {
        let b = MatrixSource::from_dense(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        let ladder = convergence_parameter_ladder(&b, StateId(0), &[4], 1e-8).unwrap();
        let direct = convergence_parameter_finite(&b, 1e-8).unwrap();
        assert_eq!(ladder, direct);
    }

    #[test]
    fn periodic_power_iteration_converges() {
        let cycle3 = MatrixSource::from_dense(&[[0.0, 2.0, 0.0], [0.0, 0.0, 2.0], [2.0, 0.0, 0.0]]).unwrap();
        let root = perron_root(&cycle3, 1e-12).unwrap();
        assert!((root.rho - 2.0).abs() < 1e-11);
    }
}
