//! Spectral bound and left eigenvector of an irreducible Metzler matrix `G`
//! through the embedded matrix `m̄_ij = g_ij/(λ − g_ii)` and a
//! continuous-time Monte Carlo estimator on the minimal Q-process.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::convergence::{
    classify_recurrence, convergence_parameter_ladder, perron_root, Classification, LadderRung,
    RMethod,
};
use crate::error::{Error, Result};
use crate::matrix::{ball, MatrixSource, MetzlerSource, StateId};
use crate::mc::sampler::{LocalChain, RowData};
use crate::mc::{
    excursion_rng, run_batches, stream_tag, summarize, BatchAcc, ExcursionEstimate, McConfig,
    Weight,
};
use crate::series::{left_vector_series, Horizon, Hypotheses, SeriesVector};

/// Relative precision of the power iteration behind finite spectral bounds.
const FINITE_ROOT_TOL: f64 = 1e-13;

/// Below this `|d_i − λ|` a holding segment contributes `W·H`.
const FLAT_EXPONENT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetzlerSpectral {
    pub lambda: f64,
    pub d_used: f64,
    #[serde(rename = "R_d")]
    pub r_d: f64,
    pub k: StateId,
    /// `λ > g_ii` on every state that was looked at.
    pub lemma_check: bool,
    pub checked_states: usize,
    pub method: RMethod,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<LadderRung>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub extrapolated: bool,
}

/// Smallest shift that makes `G + dI` non-negative with a positive diagonal
/// on the given states: `max(sup g_ii, sup(−g_ii)) + 1`.
pub fn admissible_shift(g: &MetzlerSource, states: &[StateId]) -> Result<f64> {
    let mut m = g.d_sup().max(0.0);
    for &i in states {
        m = m.max(-g.diagonal(i)?);
    }
    Ok(m + 1.0)
}

fn check_lemma(g: &MetzlerSource, lambda: f64, states: &[StateId], tol: f64) -> Result<bool> {
    let mut strict = true;
    for &i in states {
        let gii = g.diagonal(i)?;
        if lambda <= gii {
            strict = false;
            if gii - lambda > tol * (1.0 + gii.abs()) {
                return Err(Error::LemmaViolated {
                    state: i,
                    diagonal: gii,
                    lambda,
                });
            }
        }
    }
    Ok(strict)
}

/// `λ = 1/R_d − d` at a caller-chosen shift, for finite sources.
pub fn spectral_bound_with_shift(g: &MetzlerSource, shift: f64, tol: f64) -> Result<MetzlerSpectral> {
    let states = g
        .states()
        .ok_or_else(|| Error::invalid("lazy Metzler sources need the ladder variant"))?;
    let a = g.shifted(shift)?;
    let root = perron_root(&a, tol.min(FINITE_ROOT_TOL))?;
    let lambda = root.rho - shift;
    Ok(MetzlerSpectral {
        lambda,
        d_used: shift,
        r_d: 1.0 / root.rho,
        k: StateId(0),
        lemma_check: check_lemma(g, lambda, &states, tol)?,
        checked_states: states.len(),
        method: RMethod::DenseOracle,
        ladder: Vec::new(),
        extrapolated: false,
    })
}

/// Spectral bound of a finite Metzler matrix at the shift `d*`.
pub fn spectral_bound(g: &MetzlerSource, tol: f64) -> Result<MetzlerSpectral> {
    let states = g
        .states()
        .ok_or_else(|| Error::invalid("lazy Metzler sources need the ladder variant"))?;
    spectral_bound_with_shift(g, admissible_shift(g, &states)?, tol)
}

/// Spectral bound of a lazy Metzler source: the shift is taken over the
/// largest truncation ball and `R_d` comes from the truncation ladder of
/// `G + dI`. A row found later with `g_ii < −d` is rejected by the shifted
/// source.
pub fn spectral_bound_ladder(
    g: &MetzlerSource,
    k: StateId,
    radii: &[usize],
    tol: f64,
) -> Result<MetzlerSpectral> {
    if g.n_states().is_some() {
        let mut out = spectral_bound(g, tol)?;
        out.k = k;
        return Ok(out);
    }
    let radius = radii
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::invalid("ladder needs at least one radius"))?;
    let pattern = g.positivity_pattern()?;
    let states = ball(&pattern, k, radius)?;
    let shift = admissible_shift(g, &states)?;
    let a = g.shifted(shift)?;
    let rep = convergence_parameter_ladder(&a, k, radii, tol)?;
    let lambda = 1.0 / rep.r - shift;
    Ok(MetzlerSpectral {
        lambda,
        d_used: shift,
        r_d: rep.r,
        k,
        lemma_check: check_lemma(g, lambda, &states, tol)?,
        checked_states: states.len(),
        method: rep.method,
        ladder: rep.ladder,
        extrapolated: rep.extrapolated,
    })
}

/// `M̄` with `m̄_ij = g_ij/(λ − g_ii)` off the diagonal and a zero diagonal.
#[derive(Clone, Debug)]
pub struct EmbeddedMatrix {
    pub source: MatrixSource,
    pub lambda: f64,
}

pub fn embedded_matrix(g: &MetzlerSource, lambda: f64) -> Result<EmbeddedMatrix> {
    if !lambda.is_finite() {
        return Err(Error::invalid(format!("λ must be finite, got {lambda}")));
    }
    let source = g.map_rows(move |i, row| {
        let gii = row
            .iter()
            .find(|&&(j, _)| j == i)
            .map_or(0.0, |&(_, v)| v);
        let gap = lambda - gii;
        if !(gap > 0.0) {
            return Err(Error::LemmaViolated {
                state: i,
                diagonal: gii,
                lambda,
            });
        }
        Ok(row
            .iter()
            .filter(|&&(j, _)| j != i)
            .map(|&(j, v)| (j, v / gap))
            .collect())
    })?;
    Ok(EmbeddedMatrix { source, lambda })
}

/// Recurrence of `M̄` read off `Σ_n ₍k₎m̄_kk⁽ⁿ⁾` at `R = 1`.
pub fn embedded_recurrence(
    mbar: &EmbeddedMatrix,
    k: StateId,
    horizon: usize,
    tol: f64,
) -> Result<Classification> {
    classify_recurrence(&mbar.source, 1.0, k, horizon, tol)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetzlerSeries {
    pub k: StateId,
    pub lambda: f64,
    /// `u_i = x_i/(λ − g_ii)`.
    pub u: BTreeMap<StateId, f64>,
    /// `x_i = Σ_{n≥1} ₍k₎m̄_ki⁽ⁿ⁾`, with the return series at `k`.
    pub x: BTreeMap<StateId, f64>,
    /// `|uG − λu|_∞/|λu|_∞` over the states whose column is covered.
    pub residual: Option<f64>,
    /// `|xM̄ − x|_∞/|x|_∞` on the same footing.
    pub invariant_residual: Option<f64>,
    pub checked_states: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub converged: bool,
    pub return_sum: f64,
    pub hypotheses: Hypotheses,
}

/// `|vA − c·v|_∞/|c·v|_∞` over the states of `v` whose column lies inside
/// `v`, with `col(j)` returning column `j`.
fn left_residual<C>(v: &BTreeMap<StateId, f64>, c: f64, col: C) -> Result<(Option<f64>, usize)>
where
    C: Fn(StateId) -> Result<Vec<(StateId, f64)>>,
{
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut checked = 0;
    'col: for (&j, &vj) in v {
        let mut s = 0.0;
        for (i, a) in col(j)? {
            match v.get(&i) {
                Some(&vi) => s += vi * a,
                None => continue 'col,
            }
        }
        worst = worst.max((s - c * vj).abs());
        scale = scale.max((c * vj).abs());
        checked += 1;
    }
    Ok(((checked > 0).then(|| worst / scale), checked))
}

/// `u_i = (1/(λ − g_ii))·Σ_{n≥1} ₍k₎m̄_ki⁽ⁿ⁾` for `i ∈ states`; `u_k` takes
/// the return series. `states` defaults to every state of a finite source.
pub fn left_vector_metzler_series(
    g: &MetzlerSource,
    lambda: f64,
    k: StateId,
    states: Option<&[StateId]>,
    horizon: Horizon,
) -> Result<MetzlerSeries> {
    let states = match (states, g.states()) {
        (Some(s), _) => s.to_vec(),
        (None, Some(all)) => all,
        (None, None) => return Err(Error::invalid("lazy sources need an explicit state set")),
    };
    let mbar = embedded_matrix(g, lambda)?;
    let series: SeriesVector = left_vector_series(&mbar.source, 1.0, k, &states, horizon)?;
    let mut x = BTreeMap::new();
    let mut u = BTreeMap::new();
    for (&i, e) in &series.entries {
        let xi = if i == k { series.return_series.value } else { e.value };
        x.insert(i, xi);
        u.insert(i, xi / (lambda - g.diagonal(i)?));
    }
    let (residual, checked_states) = left_residual(&u, lambda, |j| Ok(g.column(j)?.to_vec()))?;
    let (invariant_residual, _) = left_residual(&x, 1.0, |j| Ok(mbar.source.column(j)?.to_vec()))?;
    let tol = match horizon {
        Horizon::Adaptive { tol, .. } => tol,
        Horizon::Fixed { .. } => 1e-6,
    };
    Ok(MetzlerSeries {
        k,
        lambda,
        u,
        x,
        residual,
        invariant_residual,
        checked_states,
        horizon: series.horizon,
        converged: series.converged,
        return_sum: series.return_series.partial,
        hypotheses: Hypotheses::from_return_series(&series.return_series, tol),
    })
}

/// Iterates of the minimal-solution scheme, restricted to the reported states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimalIterates {
    /// `y⁽¹⁾, …, y⁽ᴺ⁺¹⁾`.
    pub iterates: Vec<BTreeMap<StateId, f64>>,
    /// `Σ_{n=2}^{N+1} y⁽ⁿ⁾`, equal to the `N`-term truncation of the series
    /// for `u`.
    pub sums: BTreeMap<StateId, f64>,
    /// `Σ_{n=1}^{N+1} y⁽ⁿ⁾`, the truncated minimal solution.
    pub minimal: BTreeMap<StateId, f64>,
}

/// `y⁽¹⁾_i = δ_ik/(λ − g_kk)`, `y⁽ⁿ⁺¹⁾_i = Σ_{l≠i} y⁽ⁿ⁾_l g_li/(λ − g_ii)`,
/// where `l = k` is allowed only in the first step: afterwards the mass that
/// returned to `k` stays there, so that `y⁽ⁿ⁾_i = ₍k₎m̄_ki⁽ⁿ⁻¹⁾/(λ − g_ii)`.
pub fn minimal_solution_iterates(
    g: &MetzlerSource,
    lambda: f64,
    k: StateId,
    states: Option<&[StateId]>,
    n_iters: usize,
) -> Result<MinimalIterates> {
    let report: Vec<StateId> = match (states, g.states()) {
        (Some(s), _) => s.to_vec(),
        (None, Some(all)) => all,
        (None, None) => return Err(Error::invalid("lazy sources need an explicit state set")),
    };
    let gap = |i: StateId| -> Result<f64> {
        let d = lambda - g.diagonal(i)?;
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::LemmaViolated {
                state: i,
                diagonal: lambda - d,
                lambda,
            })
        }
    };
    let restrict = |y: &HashMap<StateId, f64>| -> BTreeMap<StateId, f64> {
        report.iter().map(|&i| (i, y.get(&i).copied().unwrap_or(0.0))).collect()
    };
    let mut y: HashMap<StateId, f64> = HashMap::from([(k, 1.0 / gap(k)?)]);
    let mut iterates = vec![restrict(&y)];
    let mut sums: BTreeMap<StateId, f64> = report.iter().map(|&i| (i, 0.0)).collect();
    let mut minimal = iterates[0].clone();
    for n in 1..=n_iters {
        let mut next: HashMap<StateId, f64> = HashMap::new();
        for (&l, &yl) in &y {
            if (l == k && n > 1) || yl == 0.0 {
                continue;
            }
            for &(i, gli) in g.row(l)?.iter() {
                if i != l {
                    *next.entry(i).or_insert(0.0) += yl * gli;
                }
            }
        }
        for (&i, v) in next.iter_mut() {
            *v /= gap(i)?;
        }
        y = next;
        let it = restrict(&y);
        for (i, v) in &it {
            *sums.get_mut(i).expect("reported state") += v;
            *minimal.get_mut(i).expect("reported state") += v;
        }
        iterates.push(it);
    }
    Ok(MinimalIterates {
        iterates,
        sums,
        minimal,
    })
}

/// One continuous-time excursion from `k`. Each holding segment at `i` of
/// length `H`, entered with weight `W`, adds `W·(e^{cH} − 1)/c` with
/// `c = d_i − λ`; the weight then picks up `e^{cH}`.
#[allow(clippy::too_many_arguments)]
fn ctmc_excursion<F, R: Rng>(
    chain: &mut LocalChain<F>,
    k: u32,
    cap: usize,
    time_cap: f64,
    rng: &mut R,
    acc: &mut BatchAcc,
) -> Result<bool>
where
    F: Fn(StateId) -> Result<RowData>,
{
    let mut w = Weight::ONE;
    let mut x = k;
    let mut t = 0.0;
    for _ in 0..cap {
        let row = chain.row(x)?;
        let e: f64 = rng.sample(Exp1);
        let mut h = e / row.weight;
        let stop = t + h >= time_cap;
        if stop {
            h = time_cap - t;
        }
        let c = row.aux;
        let factor = if c.abs() <= FLAT_EXPONENT { h } else { (c * h).exp_m1() / c };
        let mut seg = w;
        seg.mul(factor);
        let v = seg.value(&mut acc.overflow);
        if stop {
            acc.add(x, v);
            return Ok(false);
        }
        let next = row.sample(rng);
        acc.add(x, v);
        w.mul_exp(c * h);
        t += h;
        if next == k {
            return Ok(true);
        }
        x = next;
    }
    Ok(false)
}

/// `u_i = E_k ∫_0^{σ_k⁺} e^{−λt + ∫_0^t d_{X_s} ds}·I[X_t = i] dt` on the
/// minimal Q-process, by batch means. Holding rate `q_i = Σ_{j≠i} g_ij`,
/// jumps to `j ≠ i` with probability `g_ij/q_i`. Excursions stop at
/// `horizon_cap` jumps or at `time_cap` elapsed time, whichever comes first.
pub fn estimate_metzler_mc(g: &MetzlerSource, lambda: f64, cfg: &McConfig) -> Result<ExcursionEstimate> {
    if !lambda.is_finite() {
        return Err(Error::invalid(format!("λ must be finite, got {lambda}")));
    }
    let time_cap = cfg.time_cap.unwrap_or(f64::INFINITY);
    let tag = stream_tag(2, cfg.k);
    let batches = run_batches(cfg, |b, first, count| {
        let mut chain = LocalChain::new(g.n_states(), |s| {
            let row = g.row(s)?;
            let q: f64 = row.iter().filter(|&&(j, _)| j != s).map(|&(_, v)| v).sum();
            if !(q > 0.0) {
                return Err(Error::invalid(format!("state {s} has no off-diagonal entries")));
            }
            let d: f64 = row.iter().map(|&(_, v)| v).sum();
            Ok(RowData {
                probabilities: row
                    .iter()
                    .filter(|&&(j, _)| j != s)
                    .map(|&(j, v)| (j, v / q))
                    .collect(),
                weight: q,
                aux: d - lambda,
            })
        });
        let k = chain.index_of(cfg.k)?;
        let mut acc = BatchAcc::with_states(chain.len());
        for e in first..first + count {
            let mut rng = excursion_rng(cfg.seed, tag, b, e);
            if ctmc_excursion(&mut chain, k, cfg.horizon_cap, time_cap, &mut rng, &mut acc)? {
                acc.completed += 1;
            } else {
                acc.truncated += 1;
            }
        }
        acc.ids = chain.ids().to_vec();
        Ok(acc)
    })?;
    let mut est = summarize(cfg, lambda, &batches, false);
    if est.n_completed == 0 {
        return Err(Error::AllTruncated {
            start: cfg.k,
            n_excursions: cfg.n_excursions,
        });
    }
    if est.n_truncated > 0 {
        est.truncation_note = Some(format!(
            "{} excursions hit the cap ({} jumps or time {}); their partial contributions are kept, so estimates are biased low",
            est.n_truncated, cfg.horizon_cap, time_cap
        ));
    }
    Ok(est)
}
