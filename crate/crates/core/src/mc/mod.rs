//! Regenerative Monte Carlo for the probabilistic representation: excursions
//! of the row-normalized chain from `k`, weighted by `Wₙ = Rⁿ·∏ f(X_m)`.

pub(crate) mod sampler;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{StateId, TransitionKernel};
use crate::scaled::{frexp, ldexp};
use sampler::{LocalChain, RowData};

pub const DEFAULT_SEED: u64 = 0x5EED;
pub const DEFAULT_BATCHES: usize = 32;
pub const DEFAULT_HORIZON_CAP: usize = 100_000;

/// Weights are renormalized once they leave `[2^-600, 2^600]`.
const WEIGHT_HIGH: f64 = 4.149515568880993e180;
const WEIGHT_LOW: f64 = 2.409919865102884e-181;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McConfig {
    pub seed: u64,
    pub n_excursions: u64,
    /// Maximum number of jumps per excursion.
    pub horizon_cap: usize,
    pub k: StateId,
    pub batches: usize,
    /// Elapsed-time cap for continuous-time excursions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_cap: Option<f64>,
}

impl McConfig {
    pub fn new(k: StateId, n_excursions: u64) -> Self {
        McConfig {
            seed: DEFAULT_SEED,
            n_excursions,
            horizon_cap: DEFAULT_HORIZON_CAP,
            k,
            batches: DEFAULT_BATCHES,
            time_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_excursions == 0 {
            return Err(Error::invalid("n_excursions must be at least 1"));
        }
        if self.horizon_cap == 0 {
            return Err(Error::invalid("horizon_cap must be at least 1"));
        }
        if self.batches == 0 || !self.n_excursions.is_multiple_of(self.batches as u64) {
            return Err(Error::invalid(format!(
                "batches ({}) must divide n_excursions ({})",
                self.batches, self.n_excursions
            )));
        }
        if matches!(self.time_cap, Some(t) if t.is_nan() || t <= 0.0) {
            return Err(Error::invalid("time_cap must be positive"));
        }
        Ok(())
    }

    fn per_batch(&self) -> u64 {
        self.n_excursions / self.batches as u64
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for excursion `e` of batch `b` in stream `tag`.
/// Depends only on these values, so results do not depend on scheduling.
pub(crate) fn excursion_rng(seed: u64, tag: u64, batch: usize, e: u64) -> Xoshiro256PlusPlus {
    let h = splitmix(seed ^ splitmix(tag ^ splitmix(batch as u64 ^ splitmix(e))));
    Xoshiro256PlusPlus::seed_from_u64(h)
}

pub(crate) fn stream_tag(kind: u64, state: StateId) -> u64 {
    splitmix(kind.wrapping_mul(0x1000_0000_01B3) ^ state.0 as u64)
}

/// Weight `m·2^e`, kept in range by renormalizing the mantissa.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Weight {
    m: f64,
    e: i64,
}

impl Weight {
    pub(crate) const ONE: Weight = Weight { m: 1.0, e: 0 };

    #[inline]
    pub(crate) fn mul(&mut self, x: f64) {
        self.m *= x;
        if self.m > WEIGHT_HIGH || self.m < WEIGHT_LOW {
            self.renormalize();
        }
    }

    #[cold]
    fn renormalize(&mut self) {
        if self.m > 0.0 && self.m.is_finite() {
            let (m, de) = frexp(self.m);
            self.m = m;
            self.e += de;
        }
    }

    /// Multiplies by `e^x` without forming `e^x` when it would overflow.
    #[inline]
    pub(crate) fn mul_exp(&mut self, x: f64) {
        if x.abs() < 600.0 {
            self.mul(x.exp());
        } else {
            let e = (x / std::f64::consts::LN_2).floor();
            self.mul((x - e * std::f64::consts::LN_2).exp());
            self.e += e as i64;
        }
    }

    /// Plain value; out-of-range weights are clamped and counted.
    #[inline]
    pub(crate) fn value(&self, overflow: &mut u64) -> f64 {
        let v = if self.e == 0 { self.m } else { ldexp(self.m, self.e) };
        if v.is_finite() {
            v
        } else {
            *overflow += 1;
            f64::MAX
        }
    }
}

/// Per-batch sums, indexed by the batch's local state numbers.
#[derive(Clone, Debug, Default)]
pub(crate) struct BatchAcc {
    pub ids: Vec<StateId>,
    /// `(Σ weight, visits)` per local state.
    pub cells: Vec<(f64, u64)>,
    pub total: f64,
    pub returns: f64,
    pub completed: u64,
    pub truncated: u64,
    pub overflow: u64,
}

impl BatchAcc {
    pub(crate) fn with_states(n: usize) -> Self {
        BatchAcc {
            cells: vec![(0.0, 0); n],
            ..Default::default()
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, i: u32, v: f64) {
        let i = i as usize;
        if i >= self.cells.len() {
            self.cells.resize(i + 1, (0.0, 0));
        }
        let cell = &mut self.cells[i];
        cell.0 += v;
        cell.1 += 1;
        self.total += v;
    }
}

/// Runs `f(batch, first_excursion, count)` for every batch, in parallel,
/// returning results in batch order.
pub(crate) fn run_batches<T, F>(cfg: &McConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64, u64) -> Result<T> + Sync,
{
    cfg.validate()?;
    let per = cfg.per_batch();
    (0..cfg.batches)
        .into_par_iter()
        .map(|b| f(b, b as u64 * per, per))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalarEstimate {
    pub estimate: f64,
    /// Batch-means standard error.
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StateEstimate {
    pub state: StateId,
    pub estimate: f64,
    pub se: f64,
    pub visits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcursionEstimate {
    pub k: StateId,
    #[serde(rename = "R")]
    pub r: f64,
    pub seed: u64,
    pub n_excursions: u64,
    pub n_completed: u64,
    pub n_truncated: u64,
    pub overflow_count: u64,
    pub states: Vec<StateEstimate>,
    /// Estimate of `Σ_i u_i` from the same excursions (left estimator only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_mass: Option<ScalarEstimate>,
    /// Estimate of the return weight `E_k[W at τ_k⁺]`, which must be 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub return_weight: Option<ScalarEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_note: Option<String>,
}

impl ExcursionEstimate {
    pub fn get(&self, s: StateId) -> Option<&StateEstimate> {
        self.states
            .binary_search_by_key(&s, |e| e.state)
            .ok()
            .map(|p| &self.states[p])
    }
}

fn batch_means(values: &[f64], per: u64) -> ScalarEstimate {
    let b = values.len() as f64;
    let means: Vec<f64> = values.iter().map(|v| v / per as f64).collect();
    let estimate = means.iter().sum::<f64>() / b;
    let se = if values.len() > 1 {
        let var = means.iter().map(|m| (m - estimate).powi(2)).sum::<f64>() / (b - 1.0);
        (var / b).sqrt()
    } else {
        f64::NAN
    };
    ScalarEstimate { estimate, se }
}

/// Merges batches in index order into per-state batch-means estimates.
pub(crate) fn summarize(
    cfg: &McConfig,
    r: f64,
    batches: &[BatchAcc],
    with_returns: bool,
) -> ExcursionEstimate {
    let per = cfg.per_batch();
    let nb = batches.len();
    let mut by_state: BTreeMap<StateId, (Vec<f64>, u64)> = BTreeMap::new();
    for (b, acc) in batches.iter().enumerate() {
        for (p, &s) in acc.ids.iter().enumerate() {
            let Some(&(sum, visits)) = acc.cells.get(p) else { continue };
            if visits == 0 {
                continue;
            }
            let slot = by_state.entry(s).or_insert_with(|| (vec![0.0; nb], 0));
            slot.0[b] += sum;
            slot.1 += visits;
        }
    }
    let states = by_state
        .into_iter()
        .map(|(state, (sums, visits))| {
            let est = batch_means(&sums, per);
            StateEstimate {
                state,
                estimate: est.estimate,
                se: est.se,
                visits,
            }
        })
        .collect();
    let totals: Vec<f64> = batches.iter().map(|a| a.total).collect();
    let returns: Vec<f64> = batches.iter().map(|a| a.returns).collect();
    let n_truncated: u64 = batches.iter().map(|a| a.truncated).sum();
    ExcursionEstimate {
        k: cfg.k,
        r,
        seed: cfg.seed,
        n_excursions: cfg.n_excursions,
        n_completed: batches.iter().map(|a| a.completed).sum(),
        n_truncated,
        overflow_count: batches.iter().map(|a| a.overflow).sum(),
        states,
        total_mass: with_returns.then(|| batch_means(&totals, per)),
        return_weight: with_returns.then(|| batch_means(&returns, per)),
        truncation_note: (n_truncated > 0).then(|| {
            format!(
                "{n_truncated} excursions hit the cap of {} jumps; their partial contributions are kept, so estimates are biased low",
                cfg.horizon_cap
            )
        }),
    }
}

fn discrete_chain(
    kernel: &TransitionKernel,
    r: f64,
) -> LocalChain<impl Fn(StateId) -> Result<RowData> + '_> {
    LocalChain::new(kernel.n_states(), move |s| {
        let row = kernel.row(s)?;
        Ok(RowData {
            probabilities: row.probabilities.to_vec(),
            weight: r * row.f,
            aux: 0.0,
        })
    })
}

fn check_r(r: f64) -> Result<()> {
    if r.is_nan() || r <= 0.0 || r.is_infinite() {
        Err(Error::invalid(format!("R must be positive and finite, got {r}")))
    } else {
        Ok(())
    }
}

/// One excursion from `k`: calls `visit(X_n, W_n)` for `n < τ_k⁺` and returns
/// the weight at the return, or `None` when the cap was hit first.
#[inline]
fn left_excursion<F, G>(
    chain: &mut LocalChain<F>,
    k: u32,
    cap: usize,
    rng: &mut Xoshiro256PlusPlus,
    overflow: &mut u64,
    mut visit: G,
) -> Result<Option<f64>>
where
    F: Fn(StateId) -> Result<RowData>,
    G: FnMut(u32, f64),
{
    let mut w = Weight::ONE;
    let mut x = k;
    for _ in 0..cap {
        visit(x, w.value(overflow));
        let row = chain.row(x)?;
        w.mul(row.weight);
        x = row.sample(rng);
        if x == k {
            return Ok(Some(w.value(overflow)));
        }
    }
    Ok(None)
}

/// Contributions of a single excursion, as produced inside the estimators.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Excursion {
    /// `(X_n, W_n)` for `0 ≤ n < τ_k⁺`.
    pub path: Vec<(StateId, f64)>,
    /// `W` at the return to `k`; `None` if the cap was hit.
    pub return_weight: Option<f64>,
}

/// Simulates excursion `index` of `batch` exactly as [`estimate_left`] does.
pub fn sample_excursion(
    kernel: &TransitionKernel,
    r: f64,
    cfg: &McConfig,
    batch: usize,
    index: u64,
) -> Result<Excursion> {
    check_r(r)?;
    cfg.validate()?;
    let mut chain = discrete_chain(kernel, r);
    let k = chain.index_of(cfg.k)?;
    let mut rng = excursion_rng(cfg.seed, stream_tag(0, cfg.k), batch, index);
    let mut visits = Vec::new();
    let mut overflow = 0;
    let ret = left_excursion(&mut chain, k, cfg.horizon_cap, &mut rng, &mut overflow, |i, w| {
        visits.push((i, w))
    })?;
    Ok(Excursion {
        path: visits.into_iter().map(|(i, w)| (chain.id(i), w)).collect(),
        return_weight: ret,
    })
}

/// `u_i = E_k[Σ_{n<τ_k⁺} I[X_n = i]·Wₙ]` by batch means. The estimate at `k`
/// is exactly 1: only `n = 0` visits it.
pub fn estimate_left(kernel: &TransitionKernel, r: f64, cfg: &McConfig) -> Result<ExcursionEstimate> {
    check_r(r)?;
    let tag = stream_tag(0, cfg.k);
    let batches = run_batches(cfg, |b, first, count| {
        let mut chain = discrete_chain(kernel, r);
        let k = chain.index_of(cfg.k)?;
        let mut acc = BatchAcc::with_states(chain.len());
        for e in first..first + count {
            let mut rng = excursion_rng(cfg.seed, tag, b, e);
            let mut overflow = 0;
            let ret = left_excursion(&mut chain, k, cfg.horizon_cap, &mut rng, &mut overflow, |i, w| {
                acc.add(i, w)
            })?;
            acc.overflow += overflow;
            match ret {
                Some(w) => {
                    acc.returns += w;
                    acc.completed += 1;
                }
                None => acc.truncated += 1,
            }
        }
        acc.ids = chain.ids().to_vec();
        Ok(acc)
    })?;
    let est = summarize(cfg, r, &batches, true);
    if est.n_completed == 0 {
        return Err(Error::AllTruncated {
            start: cfg.k,
            n_excursions: cfg.n_excursions,
        });
    }
    Ok(est)
}

/// `y_i = E_i[W at the first hit of k]` for every start `i`, each with its
/// own `n_excursions` excursions.
pub fn estimate_right(
    kernel: &TransitionKernel,
    r: f64,
    cfg: &McConfig,
    starts: &[StateId],
) -> Result<ExcursionEstimate> {
    check_r(r)?;
    let mut states = Vec::with_capacity(starts.len());
    let (mut completed, mut truncated, mut overflow_total) = (0, 0, 0);
    let mut sorted = starts.to_vec();
    sorted.sort();
    sorted.dedup();
    for &start in &sorted {
        let tag = stream_tag(1, start);
        let batches = run_batches(cfg, |b, first, count| {
            let mut chain = discrete_chain(kernel, r);
            let k = chain.index_of(cfg.k)?;
            let s = chain.index_of(start)?;
            let mut acc = BatchAcc::default();
            for e in first..first + count {
                let mut rng = excursion_rng(cfg.seed, tag, b, e);
                let mut w = Weight::ONE;
                let mut x = s;
                let mut hit = false;
                for _ in 0..cfg.horizon_cap {
                    let row = chain.row(x)?;
                    w.mul(row.weight);
                    x = row.sample(&mut rng);
                    if x == k {
                        hit = true;
                        break;
                    }
                }
                if hit {
                    acc.returns += w.value(&mut acc.overflow);
                    acc.completed += 1;
                } else {
                    acc.truncated += 1;
                }
            }
            Ok(acc)
        })?;
        let c: u64 = batches.iter().map(|a| a.completed).sum();
        if c == 0 {
            return Err(Error::AllTruncated {
                start,
                n_excursions: cfg.n_excursions,
            });
        }
        let returns: Vec<f64> = batches.iter().map(|a| a.returns).collect();
        let est = batch_means(&returns, cfg.per_batch());
        states.push(StateEstimate {
            state: start,
            estimate: est.estimate,
            se: est.se,
            visits: c,
        });
        completed += c;
        truncated += batches.iter().map(|a| a.truncated).sum::<u64>();
        overflow_total += batches.iter().map(|a| a.overflow).sum::<u64>();
    }
    Ok(ExcursionEstimate {
        k: cfg.k,
        r,
        seed: cfg.seed,
        n_excursions: cfg.n_excursions * sorted.len() as u64,
        n_completed: completed,
        n_truncated: truncated,
        overflow_count: overflow_total,
        states,
        total_mass: None,
        return_weight: None,
        truncation_note: (truncated > 0).then(|| {
            format!("{truncated} excursions never reached the reference state within the cap")
        }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MassEstimate {
    pub estimate: f64,
    pub se: f64,
    pub n_excursions: u64,
    pub n_truncated: u64,
}

/// `Σ_i u_i = E_k[Σ_{n<τ_k⁺} Wₙ]`; for a stochastic matrix at `R = 1` this
/// is the mean return time.
pub fn estimate_total_mass(kernel: &TransitionKernel, r: f64, cfg: &McConfig) -> Result<MassEstimate> {
    let est = estimate_left(kernel, r, cfg)?;
    let mass = est.total_mass.unwrap_or(ScalarEstimate {
        estimate: f64::NAN,
        se: f64::NAN,
    });
    Ok(MassEstimate {
        estimate: mass.estimate,
        se: mass.se,
        n_excursions: est.n_excursions,
        n_truncated: est.n_truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{build_kernel, MatrixSource};

    fn kernel(rows: &[[f64; 2]]) -> TransitionKernel {
        build_kernel(&MatrixSource::from_dense(rows).unwrap()).unwrap()
    }

    fn cfg(n: u64) -> McConfig {
        McConfig::new(StateId(0), n)
    }

    #[test]
    fn config_validation() {
        assert!(cfg(64).validate().is_ok());
        assert!(cfg(0).validate().is_err());
        assert!(McConfig { batches: 3, ..cfg(64) }.validate().is_err());
        assert!(McConfig { horizon_cap: 0, ..cfg(64) }.validate().is_err());
    }

    #[test]
    fn deterministic_two_cycle() {
        let m = kernel(&[[0.0, 2.0], [2.0, 0.0]]);
        let ex = sample_excursion(&m, 0.5, &cfg(32), 0, 0).unwrap();
        assert_eq!(ex.path, vec![(StateId(0), 1.0), (StateId(1), 1.0)]);
        assert_eq!(ex.return_weight, Some(1.0));

        let est = estimate_left(&m, 0.5, &cfg(10_016)).unwrap();
        let u1 = est.get(StateId(1)).unwrap();
        assert_eq!((u1.estimate, u1.se), (1.0, 0.0));
        assert_eq!(est.get(StateId(0)).unwrap().estimate, 1.0);
        assert_eq!(est.n_completed, 10_016);

        let y = estimate_right(&m, 0.5, &cfg(64), &[StateId(0), StateId(1)]).unwrap();
        assert_eq!(y.get(StateId(0)).unwrap().estimate, 1.0);
        assert_eq!(y.get(StateId(1)).unwrap().estimate, 1.0);
    }

    #[test]
    fn ones_matrix_weights_stay_one() {
        let m = kernel(&[[1.0, 1.0], [1.0, 1.0]]);
        let est = estimate_left(&m, 0.5, &cfg(64_000)).unwrap();
        let u1 = est.get(StateId(1)).unwrap();
        assert!((u1.estimate - 1.0).abs() < 4.0 * u1.se, "{u1:?}");
        let mass = est.total_mass.unwrap();
        assert!((mass.estimate - 2.0).abs() < 4.0 * mass.se);
        let ret = est.return_weight.unwrap();
        assert_eq!(ret.estimate, 1.0);
    }

    #[test]
    fn mean_return_times() {
        let cycle = kernel(&[[0.0, 1.0], [1.0, 0.0]]);
        let m = estimate_total_mass(&cycle, 1.0, &cfg(320)).unwrap();
        assert_eq!((m.estimate, m.se), (2.0, 0.0));
        let half = kernel(&[[0.5, 0.5], [0.5, 0.5]]);
        let m = estimate_total_mass(&half, 1.0, &cfg(64_000)).unwrap();
        assert!((m.estimate - 2.0).abs() < 4.0 * m.se);
    }

    #[test]
    fn reproducible_bit_for_bit() {
        let m = kernel(&[[1.0, 2.0], [3.0, 1.0]]);
        let r = 1.0 / (1.0 + 6f64.sqrt());
        let a = estimate_left(&m, r, &cfg(32_000)).unwrap();
        let b = estimate_left(&m, r, &cfg(32_000)).unwrap();
        assert_eq!(a, b);
        let c = estimate_left(&m, r, &McConfig { seed: 1, ..cfg(32_000) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_truncated_is_an_error() {
        // A drifting walk that essentially never returns within two steps.
        let walk = build_kernel(
            &MatrixSource::lazy(|i| vec![(StateId(i.0 + 1), 1.0)]).build(),
        )
        .unwrap();
        let err = estimate_left(&walk, 1.0, &McConfig { horizon_cap: 2, ..cfg(32) }).unwrap_err();
        assert!(matches!(err, Error::AllTruncated { .. }));
    }

    #[test]
    fn large_weights_do_not_overflow() {
        let mut w = Weight::ONE;
        let mut overflow = 0;
        for _ in 0..2000 {
            w.mul(10.0);
        }
        for _ in 0..2000 {
            w.mul(0.1);
        }
        assert!((w.value(&mut overflow) - 1.0).abs() < 1e-9);
        assert_eq!(overflow, 0);
    }
}
