//! Left and right Perron vectors as taboo-power series:
//! `u_i = Σ_{n≥1} Rⁿ·₍k₎a_ki⁽ⁿ⁾` and `y_i = Σ_{n≥1} Rⁿ·₍k₎a_ik⁽ⁿ⁾`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::convergence::{detect_period, N_MAX};
use crate::error::{Error, Result};
use crate::matrix::{MatrixSource, StateId, TabooRecursion};
use crate::tail::{TailEstimate, TailModel, TailTracker};

/// Smallest block count at which the adaptive rule looks at the tail.
const MIN_CHECK_BLOCKS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Horizon {
    /// Exactly `N` terms; values are the plain partial sums.
    Fixed { n: usize },
    /// Doubling until every tracked tail is below `tol` relative to its
    /// value, or the extrapolated value of a power-law tail has settled to
    /// `tol`. Values include the tail estimate.
    Adaptive { tol: f64, n_max: usize },
}

impl Horizon {
    pub fn fixed(n: usize) -> Self {
        Horizon::Fixed { n }
    }

    pub fn adaptive(tol: f64) -> Self {
        Horizon::Adaptive { tol, n_max: N_MAX }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Horizon::Fixed { n: 0 } => Err(Error::invalid("horizon must be at least 1")),
            Horizon::Adaptive { tol, n_max } if !(tol > 0.0) || n_max == 0 => {
                Err(Error::invalid("adaptive horizon needs tol > 0 and n_max ≥ 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesEntry {
    /// Plain partial sum over all computed terms.
    pub partial: f64,
    pub tail: TailEstimate,
    /// Reported value: the partial sum for a fixed horizon, the extrapolated
    /// sum for an adaptive one when the tail model allows it.
    pub value: f64,
}

/// One taboo series evaluated for a set of target states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesVector {
    pub k: StateId,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub converged: bool,
    pub entries: BTreeMap<StateId, SeriesEntry>,
    /// `Σ_{n≤N} Rⁿ·₍k₎a_kk⁽ⁿ⁾`, run alongside.
    pub return_series: SeriesEntry,
}

impl SeriesVector {
    /// Normalized value: 1 at `k`, the series value elsewhere.
    pub fn get(&self, i: StateId) -> Option<f64> {
        if i == self.k {
            Some(1.0)
        } else {
            self.entries.get(&i).map(|e| e.value)
        }
    }

    pub fn values(&self) -> BTreeMap<StateId, f64> {
        self.entries
            .keys()
            .map(|&i| (i, self.get(i).unwrap_or(0.0)))
            .collect()
    }

    /// Largest tail estimate relative to its value over the reported states.
    pub fn max_relative_tail(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(&i, _)| i != self.k)
            .map(|(_, e)| if e.value > 0.0 { e.tail.tail / e.value } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Aitken's Δ² over extrapolated values at successive doublings, accepted
/// only when the differences shrink by a steady factor. Power-law tails leave
/// an error that decays like a power of `N`; this removes its leading term.
fn aitken(x0: f64, x1: f64, x2: f64) -> Option<f64> {
    let (d1, d2) = (x1 - x0, x2 - x1);
    if d2 == 0.0 {
        return Some(x2);
    }
    let ratio = d1 / d2;
    (ratio > 1.2 && ratio < 16.0).then(|| x2 + d2 / (ratio - 1.0))
}

/// Tracks one target inside the shared recursion.
struct Target {
    state: StateId,
    tracker: TailTracker,
    /// Extrapolated values at the last three checkpoints.
    history: Vec<f64>,
    accelerated: Option<f64>,
}

impl Target {
    fn new(state: StateId, block: usize) -> Self {
        Target {
            state,
            tracker: TailTracker::new(block),
            history: Vec::new(),
            accelerated: None,
        }
    }

    /// Checks the adaptive rule at a checkpoint and remembers the estimate.
    fn settled(&mut self, tol: f64) -> bool {
        let est = self.tracker.estimate();
        let ext = est.extrapolated();
        self.history.push(ext);
        if self.history.len() > 3 {
            self.history.remove(0);
        }
        let previous = self.accelerated.take();
        if let (TailModel::PowerLaw { .. }, &[x0, x1, x2]) = (est.model, &self.history[..]) {
            self.accelerated = aitken(x0, x1, x2);
        }
        let ok = match est.model {
            TailModel::Exhausted => true,
            TailModel::Geometric { .. } => est.tail <= tol * ext,
            TailModel::PowerLaw { .. } => {
                est.tail <= tol * ext
                    || matches!((previous, self.accelerated), (Some(p), Some(a)) if (a - p).abs() <= tol * a)
            }
            _ => false,
        };
        ok && ext > 0.0
    }

    fn entry(&self, adaptive: bool) -> SeriesEntry {
        let partial = self.tracker.total();
        let tail = self.tracker.estimate();
        let value = match (adaptive, tail.model) {
            (true, TailModel::PowerLaw { .. }) if self.accelerated.is_some() => {
                self.accelerated.unwrap_or(partial)
            }
            (true, model) if model.is_reliable() => tail.extrapolated(),
            _ => partial,
        };
        SeriesEntry {
            partial,
            tail,
            value,
        }
    }
}

/// Shared driver: one recursion from `k` with taboo `k`, read off at every
/// requested state and at `k` itself.
fn run_series(
    src: &MatrixSource,
    r: f64,
    k: StateId,
    states: &[StateId],
    horizon: Horizon,
    mut per_step: impl FnMut(&TabooRecursion<'_>),
) -> Result<SeriesVector> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::invalid(format!("R must be positive, got {r}")));
    }
    horizon.validate()?;
    let block = detect_period(src, k)?;
    let mut rec = TabooRecursion::new(src, k, k, r)?;
    for &i in states {
        if let Some(n) = src.n_states() {
            if !i.index().is_some_and(|p| p < n) {
                return Err(Error::UnknownState(i));
            }
        }
    }
    let mut targets: Vec<Target> = states
        .iter()
        .filter(|&&i| i != k)
        .map(|&i| Target::new(i, block))
        .collect();
    targets.sort_by_key(|t| t.state);
    targets.dedup_by_key(|t| t.state);
    let mut ret = Target::new(k, block);

    let (limit, tol) = match horizon {
        Horizon::Fixed { n } => (n, None),
        Horizon::Adaptive { tol, n_max } => (n_max, Some(tol)),
    };
    let mut n = 0;
    let mut converged = tol.is_none();
    while n < limit {
        rec.advance()?;
        n += 1;
        per_step(&rec);
        for t in targets.iter_mut() {
            t.tracker.push(rec.value(t.state));
        }
        ret.tracker.push(rec.value(k));
        let Some(tol) = tol else { continue };
        let blocks = n / block;
        if n % block == 0 && blocks >= MIN_CHECK_BLOCKS && blocks.is_power_of_two() {
            let mut all = ret.settled(tol);
            for t in targets.iter_mut() {
                all &= t.settled(tol);
            }
            if all {
                converged = true;
                break;
            }
        }
    }
    let adaptive = tol.is_some();
    Ok(SeriesVector {
        k,
        r,
        horizon: n,
        converged,
        entries: targets
            .iter()
            .map(|t| (t.state, t.entry(adaptive)))
            .chain(std::iter::once((k, ret.entry(adaptive))))
            .collect(),
        return_series: ret.entry(adaptive),
    })
}

/// `u_i = Σ_{n=1}^{N} Rⁿ·₍k₎a_ki⁽ⁿ⁾` for `i ∈ states`, `u_k = 1`.
pub fn left_vector_series(
    src: &MatrixSource,
    r: f64,
    k: StateId,
    states: &[StateId],
    horizon: Horizon,
) -> Result<SeriesVector> {
    run_series(src, r, k, states, horizon, |_| {})
}

/// `y_i = Σ_{n=1}^{N} Rⁿ·₍k₎a_ik⁽ⁿ⁾`, computed as the left series of `Aᵀ`.
pub fn right_vector_series(
    src: &MatrixSource,
    r: f64,
    k: StateId,
    states: &[StateId],
    horizon: Horizon,
) -> Result<SeriesVector> {
    let t = src
        .transpose()
        .ok_or_else(|| Error::invalid("the right series needs column access to the source"))?;
    run_series(&t, r, k, states, horizon, |_| {})
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residuals {
    pub left: Option<f64>,
    pub right: Option<f64>,
    /// Number of states whose full column (left) or row (right) lies inside
    /// the evaluated set; lazy sources are checked on this interior only.
    pub left_checked: usize,
    pub right_checked: usize,
    pub restricted: bool,
}

/// `max_j |Σ_i u_i a_ij − u_j/R| / (u_j/R)` over states whose column is
/// covered by `u`, and the same with rows for `y`.
pub fn residuals(
    src: &MatrixSource,
    u: Option<&BTreeMap<StateId, f64>>,
    y: Option<&BTreeMap<StateId, f64>>,
    r: f64,
) -> Result<Residuals> {
    let mut out = Residuals {
        left: None,
        right: None,
        left_checked: 0,
        right_checked: 0,
        restricted: !src.is_finite(),
    };
    if let Some(u) = u {
        let mut worst: f64 = 0.0;
        'col: for (&j, &uj) in u {
            let col = src.column(j)?;
            let mut s = 0.0;
            for &(i, a) in col.iter() {
                match u.get(&i) {
                    Some(&ui) => s += ui * a,
                    None => continue 'col,
                }
            }
            let target = uj / r;
            worst = worst.max((s - target).abs() / target);
            out.left_checked += 1;
        }
        out.left = (out.left_checked > 0).then_some(worst);
    }
    if let Some(y) = y {
        let mut worst: f64 = 0.0;
        'row: for (&i, &yi) in y {
            let row = src.row(i)?;
            let mut s = 0.0;
            for &(j, a) in row.iter() {
                match y.get(&j) {
                    Some(&yj) => s += a * yj,
                    None => continue 'row,
                }
            }
            let target = yi / r;
            worst = worst.max((s - target).abs() / target);
            out.right_checked += 1;
        }
        out.right = (out.right_checked > 0).then_some(worst);
    }
    Ok(out)
}

/// Whether the representation's hypotheses were confirmed for this run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypotheses {
    Satisfied,
    #[serde(rename = "hypotheses not satisfied")]
    NotSatisfied,
    Unverified,
}

impl Hypotheses {
    /// Reads the verdict off the return series: it must sum to one.
    pub fn from_return_series(ret: &SeriesEntry, tol: f64) -> Self {
        if ret.partial > 1.0 + tol.max(1e-9) {
            // Only possible when R exceeds the convergence parameter.
            Hypotheses::NotSatisfied
        } else if ret.partial >= 1.0 - tol {
            Hypotheses::Satisfied
        } else if ret.tail.model.is_reliable() {
            if ret.tail.extrapolated() >= 1.0 - tol {
                Hypotheses::Satisfied
            } else {
                Hypotheses::NotSatisfied
            }
        } else {
            Hypotheses::Unverified
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenPair {
    pub k: StateId,
    #[serde(rename = "R")]
    pub r: f64,
    pub eigenvalue: f64,
    pub u: BTreeMap<StateId, f64>,
    pub y: BTreeMap<StateId, f64>,
    pub residual_left: Option<f64>,
    pub residual_right: Option<f64>,
    pub restricted_residuals: bool,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub truncation_tail_estimate: f64,
    /// Partial return series `Σ_{n≤N} Rⁿ·₍k₎a_kk⁽ⁿ⁾`.
    pub return_sum: f64,
    pub hypotheses: Hypotheses,
}

/// Left and right vectors with residuals in one call. `states` defaults to
/// every state of a finite source.
pub fn eigen_pair(
    src: &MatrixSource,
    r: f64,
    k: StateId,
    states: Option<&[StateId]>,
    horizon: Horizon,
) -> Result<EigenPair> {
    let states = match (states, src.states()) {
        (Some(s), _) => s.to_vec(),
        (None, Some(all)) => all,
        (None, None) => {
            return Err(Error::invalid("lazy sources need an explicit state set"));
        }
    };
    let left = left_vector_series(src, r, k, &states, horizon)?;
    let right = right_vector_series(src, r, k, &states, horizon)?;
    let u = left.values();
    let y = right.values();
    let res = residuals(src, Some(&u), Some(&y), r)?;
    let tol = match horizon {
        Horizon::Adaptive { tol, .. } => tol,
        Horizon::Fixed { .. } => 1e-6,
    };
    Ok(EigenPair {
        k,
        r,
        eigenvalue: 1.0 / r,
        u,
        y,
        residual_left: res.left,
        residual_right: res.right,
        restricted_residuals: res.restricted,
        horizon: left.horizon.max(right.horizon),
        truncation_tail_estimate: left.max_relative_tail().max(right.max_relative_tail()),
        return_sum: left.return_series.partial,
        hypotheses: Hypotheses::from_return_series(&left.return_series, tol),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TotalMass {
    /// `Σ_i u_i`, including `u_k = 1`; the extrapolated value when the tail
    /// is summable, else the partial sum.
    pub value: f64,
    pub partial: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub divergent: bool,
    pub tail: TailEstimate,
}

/// `Σ_i u_i = 1 + Σ_{n≥1} Rⁿ Σ_{i≠k} ₍k₎a_ki⁽ⁿ⁾`. For a stochastic matrix at
/// `R = 1` this is the mean return time to `k`.
pub fn total_mass(src: &MatrixSource, r: f64, k: StateId, horizon: Horizon) -> Result<TotalMass> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::invalid(format!("R must be positive, got {r}")));
    }
    horizon.validate()?;
    let block = detect_period(src, k)?;
    let mut mass = Target::new(k, block);
    let (limit, tol) = match horizon {
        Horizon::Fixed { n } => (n, None),
        Horizon::Adaptive { tol, n_max } => (n_max, Some(tol)),
    };
    let mut rec = TabooRecursion::new(src, k, k, r)?;
    let mut n = 0;
    let mut converged = false;
    while n < limit {
        rec.advance()?;
        n += 1;
        let step: f64 = rec.entries().filter(|&(s, _)| s != k).map(|(_, v)| v).sum();
        mass.tracker.push(step);
        if let Some(tol) = tol {
            let blocks = n / block;
            if n % block == 0 && blocks >= MIN_CHECK_BLOCKS && blocks.is_power_of_two() {
                let est = mass.tracker.estimate();
                if matches!(est.model, TailModel::Divergent { .. }) && blocks >= 64 {
                    break;
                }
                if mass.settled(tol) {
                    converged = true;
                    break;
                }
            }
        }
    }
    let entry = mass.entry(tol.is_some());
    let divergent = matches!(entry.tail.model, TailModel::Divergent { .. })
        || (tol.is_some() && !converged && !entry.tail.model.is_reliable());
    Ok(TotalMass {
        value: 1.0 + entry.value,
        partial: 1.0 + entry.partial,
        horizon: n,
        divergent,
        tail: entry.tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[[f64; 2]]) -> MatrixSource {
        MatrixSource::from_dense(rows).unwrap()
    }

    fn both() -> [StateId; 2] {
        [StateId(0), StateId(1)]
    }

    #[test]
    fn left_examples() {
        let ones = dense(&[[1.0, 1.0], [1.0, 1.0]]);
        let u = left_vector_series(&ones, 0.5, StateId(0), &both(), Horizon::adaptive(1e-10)).unwrap();
        assert!(u.converged);
        assert!((u.get(StateId(1)).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(u.get(StateId(0)), Some(1.0));

        let swap = dense(&[[0.0, 2.0], [2.0, 0.0]]);
        let u = left_vector_series(&swap, 0.5, StateId(0), &both(), Horizon::adaptive(1e-10)).unwrap();
        assert_eq!(u.get(StateId(1)), Some(1.0));
        assert_eq!(u.return_series.partial, 1.0);
    }

    #[test]
    fn fixed_horizon_is_the_plain_partial_sum() {
        let ones = dense(&[[1.0, 1.0], [1.0, 1.0]]);
        let u = left_vector_series(&ones, 0.5, StateId(0), &both(), Horizon::fixed(10)).unwrap();
        assert_eq!(u.get(StateId(1)), Some(1.0 - 0.5f64.powi(10)));
        assert_eq!(u.horizon, 10);
    }

    #[test]
    fn asymmetric_example_matches_closed_form() {
        // ρ = 1 + √6; left vector (1, √6/2·(2/3)·...) checked via uA = ρu.
        let a = dense(&[[1.0, 2.0], [3.0, 1.0]]);
        let rho = 1.0 + 6f64.sqrt();
        let pair = eigen_pair(&a, 1.0 / rho, StateId(0), None, Horizon::adaptive(1e-12)).unwrap();
        // u_0 + 3u_1 = ρ u_0 ⇒ u_1 = (ρ − 1)/3; a_00 y_0 + 2 y_1 = ρ y_0 ⇒ y_1 = (ρ − 1)/2.
        assert!((pair.u[&StateId(1)] - (rho - 1.0) / 3.0).abs() < 1e-10);
        assert!((pair.y[&StateId(1)] - (rho - 1.0) / 2.0).abs() < 1e-10);
        assert!(pair.residual_left.unwrap() < 1e-9);
        assert!(pair.residual_right.unwrap() < 1e-9);
        assert_eq!(pair.hypotheses, Hypotheses::Satisfied);
    }

    #[test]
    fn symmetric_right_equals_left() {
        let a = MatrixSource::from_dense(&[[0.0, 1.0, 2.0], [1.0, 0.5, 0.0], [2.0, 0.0, 1.0]]).unwrap();
        let rep = crate::convergence::convergence_parameter_finite(&a, 1e-13).unwrap();
        let pair = eigen_pair(&a, rep.r, StateId(0), None, Horizon::adaptive(1e-11)).unwrap();
        for (i, u) in &pair.u {
            assert!((u - pair.y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_pair_has_tiny_residual() {
        let a = dense(&[[0.0, 2.0], [2.0, 0.0]]);
        let u = BTreeMap::from([(StateId(0), 1.0), (StateId(1), 1.0)]);
        let res = residuals(&a, Some(&u), Some(&u), 0.5).unwrap();
        assert!(res.left.unwrap() <= 1e-12 && res.right.unwrap() <= 1e-12);
    }

    #[test]
    fn residual_shrinks_with_horizon() {
        let a = MatrixSource::from_dense(&[[1.0, 2.0, 0.0], [0.5, 0.0, 1.0], [1.0, 1.0, 1.0]]).unwrap();
        let rep = crate::convergence::convergence_parameter_finite(&a, 1e-13).unwrap();
        let states = a.states().unwrap();
        let res: Vec<f64> = [4, 8, 16, 32]
            .iter()
            .map(|&n| {
                let u = left_vector_series(&a, rep.r, StateId(0), &states, Horizon::fixed(n)).unwrap();
                residuals(&a, Some(&u.values()), None, rep.r).unwrap().left.unwrap()
            })
            .collect();
        assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
    }

    fn srw(p: f64) -> MatrixSource {
        MatrixSource::lazy(move |i| vec![(StateId(i.0 - 1), 1.0 - p), (StateId(i.0 + 1), p)])
            .with_columns(move |j| vec![(StateId(j.0 - 1), p), (StateId(j.0 + 1), 1.0 - p)])
            .build()
    }

    #[test]
    fn srw_analytic_vector_has_small_interior_residual() {
        let p: f64 = 0.3;
        let r = 1.0 / (2.0 * (p * (1.0 - p)).sqrt());
        let u: BTreeMap<StateId, f64> = (-10..=10)
            .map(|i| (StateId(i), (p / (1.0 - p)).powf(i as f64 / 2.0)))
            .collect();
        let res = residuals(&srw(p), Some(&u), None, r).unwrap();
        assert_eq!(res.left_checked, 19);
        assert!(res.restricted);
        assert!(res.left.unwrap() <= 1e-10);
    }

    #[test]
    fn srw_series_matches_analytic_ratios() {
        let p: f64 = 0.3;
        let r = 1.0 / (2.0 * (p * (1.0 - p)).sqrt());
        let states: Vec<StateId> = (-5..=5).map(StateId).collect();
        let u = left_vector_series(&srw(p), r, StateId(0), &states, Horizon::adaptive(1e-5)).unwrap();
        for &i in &states {
            let exact = (3.0f64 / 7.0).powf(i.0 as f64 / 2.0);
            let got = u.get(i).unwrap();
            assert!((got - exact).abs() <= 1e-4 * exact, "state {i}: {got} vs {exact} ({u:?})");
        }
    }

    #[test]
    fn total_mass_examples() {
        let cycle = dense(&[[0.0, 1.0], [1.0, 0.0]]);
        let m = total_mass(&cycle, 1.0, StateId(0), Horizon::adaptive(1e-10)).unwrap();
        assert_eq!(m.value, 2.0);
        assert!(!m.divergent);

        let half = dense(&[[0.5, 0.5], [0.5, 0.5]]);
        let m = total_mass(&half, 1.0, StateId(0), Horizon::adaptive(1e-10)).unwrap();
        assert!((m.value - 2.0).abs() < 1e-9);

        let m = total_mass(&srw(0.5), 1.0, StateId(0), Horizon::adaptive(1e-6)).unwrap();
        assert!(m.divergent, "{m:?}");
    }
}
