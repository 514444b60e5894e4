//! Property suite over built-in random corpora: oracle equivalence, eigen
//! identities, return sums, Monte Carlo consistency, the random-walk
//! references, the Metzler pipeline and reproducibility.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convergence::{convergence_parameter_finite_at, convergence_parameter_ladder};
use crate::error::Result;
use crate::matrix::{build_kernel, MatrixSource, MetzlerSource, StateId};
use crate::mc::{estimate_left, McConfig, DEFAULT_SEED};
use crate::metzler::{
    admissible_shift, estimate_metzler_mc, left_vector_metzler_series, minimal_solution_iterates,
    spectral_bound, spectral_bound_with_shift,
};
use crate::models::srw_line;
use crate::oracle::{dense_oracle, spectral_abscissa};
use crate::series::{eigen_pair, left_vector_series, Horizon};

const CORPUS_SEED: u64 = 0xC0_2B05;
const SERIES_TOL: f64 = 1e-10;
const VECTOR_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-6;
const RETURN_LOW: f64 = 1e-6;
const RETURN_HIGH: f64 = 1e-9;
const SE_FACTOR: f64 = 3.0;
const MC_MATRIX_SHARE: f64 = 0.95;
const LAMBDA_TOL: f64 = 1e-8;
const ITERATION_TOL: f64 = 1e-12;
const ITERATION_TERMS: usize = 256;
const SRW_P: f64 = 0.3;
const SRW_RADII: [usize; 4] = [8, 16, 32, 64];
const SRW_R_TOL: f64 = 1e-3;
const SRW_RATIO_TOL: f64 = 1e-4;
const SERIES_SECONDS: f64 = 60.0;
const MC_SECONDS: f64 = 300.0;
const VERIFY_SECONDS: f64 = 600.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub excursions: u64,
    pub batches: usize,
    pub seeds: Vec<u64>,
    pub metzler_excursions: u64,
    pub metzler_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            excursions: 1_000_000,
            batches: 32,
            seeds: (0..20).map(|s| DEFAULT_SEED + s).collect(),
            metzler_excursions: 1_000_000,
            metzler_seed: DEFAULT_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub seconds: f64,
    pub config: VerifyConfig,
    pub criteria: Vec<CriterionResult>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Structure {
    Dense,
    Sparse,
    Periodic { period: usize },
}

#[derive(Clone, Debug)]
pub struct CorpusMatrix {
    pub name: String,
    pub structure: Structure,
    pub dense: Vec<Vec<f64>>,
    pub source: MatrixSource,
    /// State of largest stationary mass of the row-normalized chain, which
    /// gives the shortest excursions.
    pub k: StateId,
}

#[derive(Clone, Debug)]
pub struct MetzlerCase {
    pub name: String,
    pub dense: Vec<Vec<f64>>,
    pub source: MetzlerSource,
    pub k: StateId,
}

fn argmax(v: &[f64]) -> StateId {
    let (i, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty vector");
    StateId::from(i)
}

/// Stationary law of the chain `p_ij = w_ij / Σ_j w_ij` over the given
/// weights.
fn stationary(weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p: Vec<Vec<f64>> = weights
        .iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|w| w / s).collect()
        })
        .collect();
    Ok(dense_oracle(&p)?.left)
}

/// A random cyclic order on `0..n` with one edge `σ(i) → σ(i+1)` each.
fn cycle_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (0..n).map(|p| (order[p], order[(p + 1) % n])).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, structure: Structure) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    let weight = |rng: &mut ChaCha8Rng| rng.random_range(0.05..1.0);
    match structure {
        Structure::Dense => {
            for row in a.iter_mut() {
                for x in row.iter_mut() {
                    *x = weight(rng);
                }
            }
        }
        Structure::Sparse => {
            let density = rng.random_range(0.05..0.3);
            for row in a.iter_mut() {
                for x in row.iter_mut() {
                    if rng.random_bool(density) {
                        *x = weight(rng);
                    }
                }
            }
            for (i, j) in cycle_edges(rng, n) {
                a[i][j] = weight(rng);
            }
        }
        Structure::Periodic { period } => {
            // Class of state i is i mod d; edges only advance the class.
            for (i, row) in a.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    if j % period == (i + 1) % period && rng.random_bool(0.4) {
                        *v = weight(rng);
                    }
                }
                row[(i + 1) % n] = weight(rng);
            }
        }
    }
    a
}

/// 36 irreducible non-negative matrices with `n` from 2 to 50: dense,
/// sparse and periodic (period 2 or 3).
pub fn discrete_corpus() -> Result<Vec<CorpusMatrix>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    let sizes = [2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20, 22, 24, 27, 30, 33, 36, 40, 44, 47, 50];
    let mut out = Vec::new();
    for (p, &n) in sizes.iter().enumerate() {
        let structure = match p % 3 {
            0 => Structure::Dense,
            1 => Structure::Sparse,
            _ => Structure::Periodic { period: 2 + (p / 3) % 2 },
        };
        out.push(corpus_entry(&mut rng, n, structure)?);
    }
    for &(n, period) in &[(4, 2), (6, 3), (12, 2), (15, 3), (24, 2), (30, 3), (36, 2), (48, 3)] {
        out.push(corpus_entry(&mut rng, n, Structure::Periodic { period })?);
    }
    for &n in &[11, 25, 38, 49] {
        out.push(corpus_entry(&mut rng, n, Structure::Sparse)?);
    }
    Ok(out)
}

fn corpus_entry(rng: &mut ChaCha8Rng, n: usize, structure: Structure) -> Result<CorpusMatrix> {
    let n = match structure {
        Structure::Periodic { period } => (n / period).max(1) * period,
        _ => n,
    };
    let dense = random_matrix(rng, n, structure);
    let k = argmax(&stationary(&dense)?);
    let kind = match structure {
        Structure::Dense => "dense".to_string(),
        Structure::Sparse => "sparse".to_string(),
        Structure::Periodic { period } => format!("period{period}"),
    };
    Ok(CorpusMatrix {
        name: format!("{kind}-n{n}"),
        structure,
        source: MatrixSource::from_dense(&dense)?,
        dense,
        k,
    })
}

/// Smallest `λ − g_ii` accepted in the Metzler corpus.
pub const MIN_DIAGONAL_GAP: f64 = 1e-3;

/// 24 irreducible Metzler matrices with `n` from 2 to 30, diagonals drawn
/// from `[−4, 1]` and redrawn until every `λ − g_ii ≥ MIN_DIAGONAL_GAP`.
pub fn metzler_corpus() -> Result<Vec<MetzlerCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ 0x3E7A);
    let sizes = [2, 2, 3, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 14, 16, 18, 20, 22, 24, 25, 26, 28, 29, 30];
    let mut out = Vec::new();
    for (p, &n) in sizes.iter().enumerate() {
        let structure = if p % 2 == 0 { Structure::Dense } else { Structure::Sparse };
        let mut g = random_matrix(&mut rng, n, structure);
        // A diagonal entry that nearly decouples its state puts λ within
        // rounding of g_ii, and M̄ then has entries of order 1/ε.
        loop {
            for (i, row) in g.iter_mut().enumerate() {
                row[i] = rng.random_range(-4.0..1.0);
            }
            let lambda = spectral_abscissa(&g)?;
            if (0..n).all(|i| lambda - g[i][i] >= MIN_DIAGONAL_GAP) {
                break;
            }
        }
        let off: Vec<Vec<f64>> = g
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().map(|(j, &x)| if i == j { 0.0 } else { x }).collect())
            .collect();
        let k = argmax(&stationary(&off)?);
        out.push(MetzlerCase {
            name: format!("metzler-{}-n{n}", if p % 2 == 0 { "dense" } else { "sparse" }),
            source: MetzlerSource::from_dense(&g)?,
            dense: g,
            k,
        });
    }
    Ok(out)
}

fn max_rel_error(got: &BTreeMap<StateId, f64>, want: &[f64]) -> f64 {
    want.iter()
        .enumerate()
        .map(|(i, &w)| {
            let g = got.get(&StateId::from(i)).copied().unwrap_or(f64::NAN);
            let e = (g - w).abs() / w.abs();
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}

fn without(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, r)| r.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &v)| v).collect())
        .collect()
}

/// Spectral radius of `R²·a_ij·f_i` with state `k` removed. The excursion
/// weights of the discrete estimator have a finite second moment exactly
/// when this is below 1.
pub fn discrete_second_moment(m: &CorpusMatrix, r: f64) -> Result<f64> {
    let f: Vec<f64> = m.dense.iter().map(|row| row.iter().sum()).collect();
    let b: Vec<Vec<f64>> = m
        .dense
        .iter()
        .zip(&f)
        .map(|(row, &fi)| row.iter().map(|&a| r * r * a * fi).collect())
        .collect();
    let k = m.k.index().expect("finite");
    if b.len() == 1 {
        return Ok(0.0);
    }
    spectral_abscissa(&without(&b, k))
}

/// The CTMC estimator has a finite second moment when this is negative: the
/// larger of the spectral bound of `G + D − 2λI` off `k` (`D` the row sums)
/// and `2(d_k − λ) − q_k` for the holding segments at `k`.
pub fn metzler_second_moment(m: &MetzlerCase, lambda: f64) -> Result<f64> {
    let n = m.dense.len();
    let d: Vec<f64> = m.dense.iter().map(|row| row.iter().sum()).collect();
    let k = m.k.index().expect("finite");
    let q_k = d[k] - m.dense[k][k];
    let at_k = 2.0 * (d[k] - lambda) - q_k;
    if n == 1 {
        return Ok(at_k);
    }
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m.dense[i][j] + if i == j { d[i] - 2.0 * lambda } else { 0.0 }).collect())
        .collect();
    Ok(spectral_abscissa(&without(&b, k))?.max(at_k))
}

/// Per-state miss tallies split by whether the estimator has a finite
/// second moment on the matrix.
#[derive(Default)]
struct MissTally {
    heavy_matrices: usize,
    light: (usize, usize),
    heavy: (usize, usize),
}

impl MissTally {
    fn record(&mut self, heavy: bool, miss: bool) {
        let cell = if heavy { &mut self.heavy } else { &mut self.light };
        cell.0 += miss as usize;
        cell.1 += 1;
    }

    fn describe(&self, matrices: usize) -> String {
        format!(
            "{} of {matrices} matrices have an infinite second moment, where {}/{} states miss; {}/{} miss elsewhere",
            self.heavy_matrices, self.heavy.0, self.heavy.1, self.light.0, self.light.1
        )
    }
}

/// Series data of one discrete corpus matrix, shared by criteria 1–4.
#[derive(Clone, Debug)]
pub struct DiscreteCase {
    pub r: f64,
    pub u: BTreeMap<StateId, f64>,
    pub u_error: f64,
    pub y_error: f64,
    pub residual: f64,
    pub return_sum: f64,
}

pub fn discrete_case(m: &CorpusMatrix) -> Result<DiscreteCase> {
    let oracle = dense_oracle(&m.dense)?;
    let k = m.k.index().expect("finite state");
    let r = convergence_parameter_finite_at(&m.source, m.k, 1e-13)?.r;
    let ep = eigen_pair(&m.source, r, m.k, None, Horizon::adaptive(SERIES_TOL))?;
    Ok(DiscreteCase {
        r,
        u_error: max_rel_error(&ep.u, &oracle.left_at(k)),
        y_error: max_rel_error(&ep.y, &oracle.right_at(k)),
        residual: ep.residual_left.unwrap_or(f64::INFINITY).max(ep.residual_right.unwrap_or(f64::INFINITY)),
        return_sum: ep.return_sum,
        u: ep.u,
    })
}

fn result(id: u32, name: &str, passed: bool, summary: String, start: Instant) -> CriterionResult {
    CriterionResult {
        id,
        name: name.to_string(),
        passed,
        summary,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn failure(id: u32, name: &str, e: crate::Error, start: Instant) -> CriterionResult {
    result(id, name, false, format!("error: {e}"), start)
}

fn worst_by<T>(items: &[(String, T)], key: impl Fn(&T) -> f64) -> (String, f64) {
    items
        .iter()
        .map(|(n, t)| (n.clone(), key(t)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_default()
}

/// Criteria 1–3; returns the per-matrix series data for criterion 4.
pub fn check_series(corpus: &[CorpusMatrix]) -> (Vec<CriterionResult>, Option<Vec<DiscreteCase>>) {
    let start = Instant::now();
    let cases: Result<Vec<(String, DiscreteCase)>> = corpus
        .iter()
        .map(|m| Ok((m.name.clone(), discrete_case(m)?)))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let cases = match cases {
        Ok(c) => c,
        Err(e) => {
            let fail = |id, name: &str| failure(id, name, crate::Error::invalid(e.to_string()), start);
            return (
                vec![fail(1, "oracle equivalence"), fail(2, "eigen identity"), fail(3, "return sums")],
                None,
            );
        }
    };
    let n = cases.len();
    let periodic = corpus.iter().filter(|m| matches!(m.structure, Structure::Periodic { .. })).count();
    let (wu_name, wu) = worst_by(&cases, |c| c.u_error);
    let (wy_name, wy) = worst_by(&cases, |c| c.y_error);
    let ok1 = n >= 30 && wu <= VECTOR_TOL && wy <= VECTOR_TOL && secs <= SERIES_SECONDS;
    let c1 = CriterionResult {
        id: 1,
        name: "oracle equivalence".into(),
        passed: ok1,
        summary: format!(
            "{n} matrices ({periodic} periodic); max rel error u {wu:.2e} ({wu_name}), y {wy:.2e} ({wy_name}); tol {VECTOR_TOL:e}; {secs:.1} s of {SERIES_SECONDS} s"
        ),
        seconds: secs,
    };
    let (wr_name, wr) = worst_by(&cases, |c| c.residual);
    let c2 = CriterionResult {
        id: 2,
        name: "eigen identity".into(),
        passed: wr <= RESIDUAL_TOL,
        summary: format!("max residual {wr:.2e} ({wr_name}); tol {RESIDUAL_TOL:e}"),
        seconds: 0.0,
    };
    let lo = cases.iter().map(|(_, c)| c.return_sum).fold(f64::INFINITY, f64::min);
    let hi = cases.iter().map(|(_, c)| c.return_sum).fold(f64::NEG_INFINITY, f64::max);
    let c3 = CriterionResult {
        id: 3,
        name: "return sums".into(),
        passed: lo >= 1.0 - RETURN_LOW && hi <= 1.0 + RETURN_HIGH,
        summary: format!(
            "partial sums in [1 − {:.2e}, 1 + {:.2e}]; need ≥ 1 − {RETURN_LOW:e} and ≤ 1 + {RETURN_HIGH:e}",
            1.0 - lo,
            hi - 1.0
        ),
        seconds: 0.0,
    };
    (vec![c1, c2, c3], Some(cases.into_iter().map(|(_, c)| c).collect()))
}

/// Criterion 4: per seed, the share of matrices on which every state's MC
/// estimate is within 3 SE of the series value.
pub fn check_mc(corpus: &[CorpusMatrix], cases: &[DiscreteCase], cfg: &VerifyConfig) -> CriterionResult {
    const NAME: &str = "Monte Carlo consistency";
    let start = Instant::now();
    let mut heavy = Vec::with_capacity(corpus.len());
    for (m, case) in corpus.iter().zip(cases) {
        match discrete_second_moment(m, case.r) {
            Ok(rho) => heavy.push(rho >= 1.0),
            Err(e) => return failure(4, NAME, e, start),
        }
    }
    let mut tally = MissTally {
        heavy_matrices: heavy.iter().filter(|&&h| h).count(),
        ..Default::default()
    };
    let mut worst_share: f64 = 1.0;
    let mut seeds_ok = 0;
    let mut truncated = 0u64;
    for &seed in &cfg.seeds {
        let mut matrices_ok = 0;
        for ((m, case), &h) in corpus.iter().zip(cases).zip(&heavy) {
            let kernel = match build_kernel(&m.source) {
                Ok(k) => k,
                Err(e) => return failure(4, NAME, e, start),
            };
            let mut mc = McConfig::new(m.k, cfg.excursions);
            mc.seed = seed;
            mc.batches = cfg.batches;
            let est = match estimate_left(&kernel, case.r, &mc) {
                Ok(e) => e,
                Err(e) => return failure(4, NAME, e, start),
            };
            truncated += est.n_truncated;
            let mut all = true;
            for (&i, &u) in &case.u {
                if i == m.k {
                    continue;
                }
                let ok = est
                    .get(i)
                    .is_some_and(|s| (s.estimate - u).abs() <= SE_FACTOR * s.se);
                tally.record(h, !ok);
                all &= ok;
            }
            matrices_ok += all as usize;
        }
        let share = matrices_ok as f64 / corpus.len() as f64;
        worst_share = worst_share.min(share);
        seeds_ok += (share >= MC_MATRIX_SHARE) as usize;
        log::info!("criterion 4: seed {seed}: {matrices_ok}/{} matrices within 3 SE", corpus.len());
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = seeds_ok == cfg.seeds.len() && secs <= MC_SECONDS;
    result(
        4,
        NAME,
        passed,
        format!(
            "{seeds_ok}/{} seeds with ≥ {:.0}% of matrices fully within {SE_FACTOR} SE (worst seed {:.1}%); {}; {truncated} truncated; {secs:.0} s of {MC_SECONDS} s",
            cfg.seeds.len(),
            MC_MATRIX_SHARE * 100.0,
            worst_share * 100.0,
            tally.describe(corpus.len())
        ),
        start,
    )
}

/// Criterion 5: ladder R and series ratios of the random walk with p = 0.3.
pub fn check_srw() -> CriterionResult {
    const NAME: &str = "random walk example";
    let start = Instant::now();
    let run = || -> Result<(f64, f64)> {
        let model = srw_line(SRW_P)?;
        let a = model.matrix().expect("srw is non-negative");
        let r_ref = model.reference.r.expect("srw reference R");
        let rep = convergence_parameter_ladder(a, StateId(0), &SRW_RADII, 1e-4)?;
        let states: Vec<StateId> = (-5..=5).map(StateId).collect();
        let u = left_vector_series(a, r_ref, StateId(0), &states, Horizon::adaptive(1e-6))?;
        let worst = states
            .iter()
            .map(|&i| {
                let want = model.reference.left(i.0).expect("srw reference vector");
                (u.get(i).unwrap_or(f64::NAN) - want).abs() / want
            })
            .fold(0.0, f64::max);
        Ok(((rep.r - r_ref).abs(), worst))
    };
    match run() {
        Ok((r_err, ratio_err)) => result(
            5,
            NAME,
            r_err <= SRW_R_TOL && ratio_err <= SRW_RATIO_TOL,
            format!(
                "ladder R error {r_err:.2e} at radius 64 (tol {SRW_R_TOL:e}); max rel error of u_i/u_0 over |i| ≤ 5 {ratio_err:.2e} (tol {SRW_RATIO_TOL:e})"
            ),
            start,
        ),
        Err(e) => failure(5, NAME, e, start),
    }
}

#[derive(Clone, Debug)]
pub struct MetzlerData {
    pub lambda: f64,
    pub u: BTreeMap<StateId, f64>,
}

/// Criterion 6 over the Metzler corpus; returns λ and u for 7 and 8.
pub fn check_metzler(corpus: &[MetzlerCase]) -> (CriterionResult, Option<Vec<MetzlerData>>) {
    const NAME: &str = "Metzler pipeline";
    let start = Instant::now();
    let mut data = Vec::new();
    let (mut lam_err, mut res, mut shift_err, mut u_err): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut lemma = true;
    for m in corpus {
        let run = || -> Result<_> {
            let oracle = dense_oracle(&m.dense)?;
            let s = spectral_bound(&m.source, 1e-13)?;
            let states = m.source.states().expect("finite");
            let other = spectral_bound_with_shift(&m.source, admissible_shift(&m.source, &states)? + 3.5, 1e-13)?;
            let ser = left_vector_metzler_series(&m.source, s.lambda, m.k, None, Horizon::adaptive(SERIES_TOL))?;
            let uk = ser.u[&m.k];
            let scaled: BTreeMap<StateId, f64> = ser.u.iter().map(|(&i, &v)| (i, v / uk)).collect();
            let k = m.k.index().expect("finite");
            Ok((
                (s.lambda - oracle.eigenvalue).abs(),
                ser.residual.unwrap_or(f64::INFINITY),
                (s.lambda - other.lambda).abs(),
                max_rel_error(&scaled, &oracle.left_at(k)),
                s.lemma_check && other.lemma_check,
                MetzlerData {
                    lambda: s.lambda,
                    u: ser.u,
                },
            ))
        };
        match run() {
            Ok((a, b, c, d, ok, md)) => {
                lam_err = lam_err.max(a);
                res = res.max(b);
                shift_err = shift_err.max(c);
                u_err = u_err.max(d);
                lemma &= ok;
                data.push(md);
            }
            Err(e) => return (failure(6, NAME, e, start), None),
        }
    }
    let passed = corpus.len() >= 20
        && lam_err <= LAMBDA_TOL
        && res <= RESIDUAL_TOL
        && shift_err <= LAMBDA_TOL
        && u_err <= VECTOR_TOL
        && lemma;
    (
        result(
            6,
            NAME,
            passed,
            format!(
                "{} matrices; |λ − oracle| {lam_err:.2e} (tol {LAMBDA_TOL:e}); residual {res:.2e} (tol {RESIDUAL_TOL:e}); shift invariance {shift_err:.2e}; u vs oracle {u_err:.2e}; λ > g_ii {}",
                corpus.len(),
                if lemma { "everywhere" } else { "VIOLATED" }
            ),
            start,
        ),
        Some(data),
    )
}

/// Criterion 7: every state's CTMC estimate within 3 SE of the series.
pub fn check_metzler_mc(corpus: &[MetzlerCase], data: &[MetzlerData], cfg: &VerifyConfig) -> CriterionResult {
    const NAME: &str = "Metzler Monte Carlo";
    let start = Instant::now();
    let (mut misses, mut worst, mut truncated) = (Vec::new(), 0.0f64, 0u64);
    let mut tally = MissTally::default();
    for (m, d) in corpus.iter().zip(data) {
        let heavy = match metzler_second_moment(m, d.lambda) {
            Ok(x) => x >= 0.0,
            Err(e) => return failure(7, NAME, e, start),
        };
        tally.heavy_matrices += heavy as usize;
        let mut mc = McConfig::new(m.k, cfg.metzler_excursions);
        mc.seed = cfg.metzler_seed;
        mc.batches = cfg.batches;
        let est = match estimate_metzler_mc(&m.source, d.lambda, &mc) {
            Ok(e) => e,
            Err(e) => return failure(7, NAME, e, start),
        };
        truncated += est.n_truncated;
        for (&i, &u) in &d.u {
            let z = est.get(i).map_or(f64::INFINITY, |s| (s.estimate - u).abs() / s.se);
            worst = worst.max(z);
            let miss = !(z <= SE_FACTOR);
            tally.record(heavy, miss);
            if miss {
                misses.push(format!("{}:{i}", m.name));
            }
        }
    }
    let states = tally.light.1 + tally.heavy.1;
    result(
        7,
        NAME,
        misses.is_empty(),
        format!(
            "{} of {states} states outside {SE_FACTOR} SE{}; largest |MC − series|/SE {worst:.2}; {}; {truncated} truncated",
            misses.len(),
            match misses.len() {
                0 => String::new(),
                1..=8 => format!(" ({})", misses.join(", ")),
                n => format!(" ({}, … {} more)", misses[..8].join(", "), n - 8),
            },
            tally.describe(corpus.len())
        ),
        start,
    )
}

/// Criterion 8: partial sums of the minimal-solution iterates against the
/// truncated series.
pub fn check_iterates(corpus: &[MetzlerCase], data: &[MetzlerData]) -> CriterionResult {
    const NAME: &str = "iteration identity";
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (m, d) in corpus.iter().zip(data) {
        let run = || -> Result<f64> {
            let it = minimal_solution_iterates(&m.source, d.lambda, m.k, None, ITERATION_TERMS)?;
            let ser = left_vector_metzler_series(&m.source, d.lambda, m.k, None, Horizon::fixed(ITERATION_TERMS))?;
            Ok(it
                .sums
                .iter()
                .map(|(i, s)| (s - ser.u[i]).abs() / ser.u[i].abs())
                .fold(0.0, f64::max))
        };
        match run() {
            Ok(e) => worst = worst.max(e),
            Err(e) => return failure(8, NAME, e, start),
        }
    }
    result(
        8,
        NAME,
        worst <= ITERATION_TOL,
        format!("{} matrices, {ITERATION_TERMS} terms; max rel difference {worst:.2e} (tol {ITERATION_TOL:e})", corpus.len()),
        start,
    )
}

/// Criterion 9 (reproducibility part): repeated runs and runs on pools of
/// different sizes give bit-identical reports.
pub fn check_reproducibility(corpus: &[CorpusMatrix], metzler: &[MetzlerCase], data: &[MetzlerData]) -> CriterionResult {
    const NAME: &str = "reproducibility";
    let start = Instant::now();
    let run = || -> Result<(usize, usize)> {
        let (mut same, mut total) = (0, 0);
        let pools = [1, 3].map(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build());
        for m in corpus.iter().take(4) {
            let kernel = build_kernel(&m.source)?;
            let r = convergence_parameter_finite_at(&m.source, m.k, 1e-13)?.r;
            let mc = McConfig::new(m.k, 64_000);
            let a = serde_json::to_string(&estimate_left(&kernel, r, &mc)?)?;
            let b = serde_json::to_string(&estimate_left(&kernel, r, &mc)?)?;
            total += 1;
            same += (a == b) as usize;
            for pool in pools.iter().flatten() {
                let c = pool.install(|| estimate_left(&kernel, r, &mc))?;
                total += 1;
                same += (a == serde_json::to_string(&c)?) as usize;
            }
        }
        for (m, d) in metzler.iter().zip(data).take(4) {
            let mc = McConfig::new(m.k, 64_000);
            let a = serde_json::to_string(&estimate_metzler_mc(&m.source, d.lambda, &mc)?)?;
            let b = serde_json::to_string(&estimate_metzler_mc(&m.source, d.lambda, &mc)?)?;
            total += 1;
            same += (a == b) as usize;
        }
        Ok((same, total))
    };
    match run() {
        Ok((same, total)) => result(
            9,
            NAME,
            same == total,
            format!("{same}/{total} repeated Monte Carlo runs bit-identical (including 1- and 3-thread pools)"),
            start,
        ),
        Err(e) => failure(9, NAME, e, start),
    }
}

/// Runs every check. Criterion 9 also requires the whole run to finish in
/// ten minutes.
pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let start = Instant::now();
    let corpus = discrete_corpus()?;
    let metzler = metzler_corpus()?;
    let mut criteria = Vec::new();

    let (mut first, cases) = check_series(&corpus);
    criteria.append(&mut first);
    log::info!("criteria 1-3 done after {:.1} s", start.elapsed().as_secs_f64());
    criteria.push(match &cases {
        Some(cases) => check_mc(&corpus, cases, cfg),
        None => failure(4, "Monte Carlo consistency", crate::Error::invalid("series data unavailable"), start),
    });
    log::info!("criterion 4 done after {:.1} s", start.elapsed().as_secs_f64());
    criteria.push(check_srw());
    let (c6, data) = check_metzler(&metzler);
    criteria.push(c6);
    let data = data.unwrap_or_default();
    if data.len() == metzler.len() {
        criteria.push(check_metzler_mc(&metzler, &data, cfg));
        criteria.push(check_iterates(&metzler, &data));
    } else {
        let missing = || crate::Error::invalid("Metzler data unavailable");
        criteria.push(failure(7, "Metzler Monte Carlo", missing(), start));
        criteria.push(failure(8, "iteration identity", missing(), start));
    }
    let mut c9 = check_reproducibility(&corpus, &metzler, &data);
    let total = start.elapsed().as_secs_f64();
    c9.passed &= total <= VERIFY_SECONDS;
    c9.summary = format!("{}; whole suite {total:.0} s of {VERIFY_SECONDS} s", c9.summary);
    criteria.push(c9);
    Ok(VerifyReport {
        passed: criteria.iter().all(|c| c.passed),
        seconds: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        criteria,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{is_irreducible, period};

    #[test]
    fn corpora_are_irreducible_with_the_promised_shape() {
        let corpus = discrete_corpus().unwrap();
        assert!(corpus.len() >= 30);
        assert!(corpus.iter().all(|m| (2..=50).contains(&m.dense.len())));
        let mut periodic = 0;
        for m in &corpus {
            assert!(is_irreducible(&m.source, StateId(0), 0).unwrap().holds(), "{}", m.name);
            let states = m.source.states().unwrap();
            let d = period(&m.source, &states, StateId(0)).unwrap();
            if let Structure::Periodic { period: p } = m.structure {
                assert_eq!(d % p, 0, "{}", m.name);
                periodic += 1;
            }
        }
        assert!(periodic >= 8);
        let metzler = metzler_corpus().unwrap();
        assert!(metzler.len() >= 20);
        for m in &metzler {
            assert!(m.dense.len() <= 30);
            let pattern = m.source.positivity_pattern().unwrap();
            assert!(is_irreducible(&pattern, StateId(0), 0).unwrap().holds(), "{}", m.name);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = discrete_corpus().unwrap();
        let b = discrete_corpus().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.dense == y.dense && x.k == y.k));
    }

    #[test]
    fn small_run_of_each_check() {
        let corpus: Vec<CorpusMatrix> = discrete_corpus().unwrap().into_iter().take(3).collect();
        let (res, cases) = check_series(&corpus);
        // Criterion 1 needs 30 matrices; the numeric parts are what matter here.
        assert!(res[1].passed && res[2].passed, "{res:?}");
        let cfg = VerifyConfig {
            excursions: 3_200,
            seeds: vec![1],
            metzler_excursions: 3_200,
            ..VerifyConfig::default()
        };
        let c4 = check_mc(&corpus, &cases.unwrap(), &cfg);
        assert!(c4.summary.contains("seeds"), "{c4:?}");
        let metzler: Vec<MetzlerCase> = metzler_corpus().unwrap().into_iter().take(3).collect();
        let (c6, data) = check_metzler(&metzler);
        assert!(c6.summary.contains("3 matrices"), "{c6:?}");
        let data = data.unwrap();
        assert!(check_iterates(&metzler, &data).passed);
        assert!(check_reproducibility(&corpus, &metzler, &data).passed);
    }
}
