//! State spaces and sparse non-negative matrices.
//!
//! A [`MatrixSource`] is either finite and explicit (sorted sparse rows over
//! states `0..n`) or lazily generated over integer-coded states, in which case
//! rows are produced on demand and memoized up to a state budget.

mod graph;
mod kernel;
mod metzler;
mod store;
mod taboo;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use graph::{ball, is_irreducible, period, strongly_connected_component, Irreducibility};
pub use kernel::{build_kernel, row_sums, KernelRow, RowSums, TransitionKernel};
pub use metzler::{build_qmatrix, MetzlerSource, QMatrix};
pub use taboo::{taboo_powers, TabooPowerTable};

pub(crate) use store::{EntryPolicy, LazyCache, RowFn, RowStore};
pub(crate) use taboo::TabooRecursion;

/// Default cap on the number of memoized states of a lazy source.
pub const DEFAULT_STATE_BUDGET: usize = 1_000_000;
/// Default cap on the number of entries a single lazy row may produce.
pub const DEFAULT_ROW_TERM_BUDGET: usize = 1 << 16;

/// Integer code of a state. Finite sources use `0..n`; lazy sources choose
/// their own embedding (the line walk uses negative ids).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub i64);

impl StateId {
    pub fn index(self) -> Option<usize> {
        usize::try_from(self.0).ok()
    }
}

impl From<i64> for StateId {
    fn from(id: i64) -> Self {
        StateId(id)
    }
}

impl From<usize> for StateId {
    fn from(id: usize) -> Self {
        StateId(id as i64)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A sparse row: `(column, weight)` pairs sorted by column, zeros absent.
pub type Row = Arc<[(StateId, f64)]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    FiniteExplicit,
    InfiniteLazy,
}

/// An irreducible non-negative matrix over a countable state space.
#[derive(Clone)]
pub struct MatrixSource {
    pub(crate) store: RowStore,
}

impl fmt::Debug for MatrixSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixSource")
            .field("kind", &self.kind())
            .field("n_states", &self.n_states())
            .finish()
    }
}

/// Builder for lazily generated sources.
pub struct LazyBuilder {
    rows: Arc<RowFn>,
    cols: Option<Arc<RowFn>>,
    state_budget: usize,
    row_term_budget: usize,
}

impl LazyBuilder {
    /// Column generator: `col(j)` lists `(i, a_ij)`. Enables transposition,
    /// which the right-vector series uses.
    pub fn with_columns<F>(mut self, cols: F) -> Self
    where
        F: Fn(StateId) -> Vec<(StateId, f64)> + Send + Sync + 'static,
    {
        self.cols = Some(Arc::new(move |j| Ok(cols(j))));
        self
    }

    pub fn state_budget(mut self, budget: usize) -> Self {
        self.state_budget = budget;
        self
    }

    pub fn row_term_budget(mut self, budget: usize) -> Self {
        self.row_term_budget = budget;
        self
    }

    pub fn build(self) -> MatrixSource {
        MatrixSource {
            store: RowStore::lazy(
                self.rows,
                self.cols,
                EntryPolicy::NonNegative,
                self.state_budget,
                self.row_term_budget,
            ),
        }
    }
}

impl MatrixSource {
    /// Starts a lazy source from a row generator `row(i) -> [(j, a_ij)]`.
    pub fn lazy<F>(rows: F) -> LazyBuilder
    where
        F: Fn(StateId) -> Vec<(StateId, f64)> + Send + Sync + 'static,
    {
        LazyBuilder {
            rows: Arc::new(move |i| Ok(rows(i))),
            cols: None,
            state_budget: DEFAULT_STATE_BUDGET,
            row_term_budget: DEFAULT_ROW_TERM_BUDGET,
        }
    }

    pub(crate) fn lazy_derived(
        rows: Arc<RowFn>,
        cols: Option<Arc<RowFn>>,
        state_budget: usize,
    ) -> Self {
        MatrixSource {
            store: RowStore::lazy(
                rows,
                cols,
                EntryPolicy::NonNegative,
                state_budget,
                DEFAULT_ROW_TERM_BUDGET,
            ),
        }
    }

    /// Finite source from dense rows. Zeros are structural and not stored.
    pub fn from_dense<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 {
                    triplets.push((i, j, a));
                }
            }
        }
        Self::from_triplets(n, triplets)
    }

    /// Finite source from 0-based `(row, col, value)` triplets. Explicit zeros
    /// are dropped with a warning; duplicates are rejected.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        Ok(MatrixSource {
            store: RowStore::finite(n, triplets, EntryPolicy::NonNegative)?,
        })
    }

    pub(crate) fn from_store(store: RowStore) -> Self {
        MatrixSource { store }
    }

    pub fn kind(&self) -> SourceKind {
        match self.store {
            RowStore::Finite(_) => SourceKind::FiniteExplicit,
            RowStore::Lazy(_) => SourceKind::InfiniteLazy,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.kind() == SourceKind::FiniteExplicit
    }

    /// Number of states of a finite source.
    pub fn n_states(&self) -> Option<usize> {
        self.store.n_states()
    }

    /// States `0..n` of a finite source.
    pub fn states(&self) -> Option<Vec<StateId>> {
        self.n_states().map(|n| (0..n).map(StateId::from).collect())
    }

    pub fn row(&self, i: StateId) -> Result<Row> {
        self.store.row(i)
    }

    /// Column `j` as `(i, a_ij)` pairs, when column access is available.
    pub fn column(&self, j: StateId) -> Result<Row> {
        self.store.column(j)
    }

    pub fn has_columns(&self) -> bool {
        self.store.has_columns()
    }

    /// Entry `a_ij` (zero when structurally absent).
    pub fn entry(&self, i: StateId, j: StateId) -> Result<f64> {
        let row = self.row(i)?;
        Ok(row
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|pos| row[pos].1)
            .unwrap_or(0.0))
    }

    /// Aᵀ, available for finite sources and lazy sources with columns.
    pub fn transpose(&self) -> Option<MatrixSource> {
        self.store.transposed().map(MatrixSource::from_store)
    }

    /// Number of memoized rows (all rows for finite sources).
    pub fn materialized_states(&self) -> usize {
        self.store.materialized()
    }

    pub fn to_dense(&self) -> Option<Vec<Vec<f64>>> {
        let n = self.n_states()?;
        let mut dense = vec![vec![0.0; n]; n];
        for (i, out) in dense.iter_mut().enumerate() {
            let row = self.row(StateId::from(i)).ok()?;
            for &(j, a) in row.iter() {
                out[j.0 as usize] = a;
            }
        }
        Some(dense)
    }

    /// Principal submatrix on `states`, re-indexed to `0..states.len()` in the
    /// given order. Entries leaving the set are dropped.
    pub fn restrict(&self, states: &[StateId]) -> Result<Restriction> {
        let position: std::collections::HashMap<StateId, usize> =
            states.iter().enumerate().map(|(p, &s)| (s, p)).collect();
        if position.len() != states.len() {
            return Err(Error::invalid("restriction states must be distinct"));
        }
        let mut triplets = Vec::new();
        for (p, &s) in states.iter().enumerate() {
            for &(j, a) in self.row(s)?.iter() {
                if let Some(&q) = position.get(&j) {
                    triplets.push((p, q, a));
                }
            }
        }
        Ok(Restriction {
            source: MatrixSource::from_triplets(states.len(), triplets)?,
            states: states.to_vec(),
        })
    }
}

/// A finite principal submatrix together with the original ids of its states.
#[derive(Clone, Debug)]
pub struct Restriction {
    pub source: MatrixSource,
    pub states: Vec<StateId>,
}

/// `ã_ij = a_ij · α_j`. The transformed matrix feeds the same pipeline
/// (kernel, series, Monte Carlo) unchanged.
pub fn scale_columns<F>(src: &MatrixSource, alpha: F) -> Result<MatrixSource>
where
    F: Fn(StateId) -> f64 + Send + Sync + 'static,
{
    let check = |j: StateId, value: f64| {
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonPositiveScale { state: j, value })
        }
    };
    match &src.store {
        RowStore::Finite(_) => {
            let n = src.n_states().unwrap_or(0);
            let mut triplets = Vec::new();
            for i in 0..n {
                for &(j, a) in src.row(StateId::from(i))?.iter() {
                    triplets.push((i, j.0 as usize, a * check(j, alpha(j))?));
                }
            }
            MatrixSource::from_triplets(n, triplets)
        }
        RowStore::Lazy(lazy) => {
            let alpha = Arc::new(alpha);
            let base = src.clone();
            let scale = alpha.clone();
            let rows: Arc<RowFn> = Arc::new(move |i| {
                base.row(i)?
                    .iter()
                    .map(|&(j, a)| Ok((j, a * check(j, scale(j))?)))
                    .collect()
            });
            let cols: Option<Arc<RowFn>> = src.has_columns().then(|| {
                let base = src.clone();
                let f: Arc<RowFn> = Arc::new(move |j| {
                    let s = check(j, alpha(j))?;
                    Ok(base.column(j)?.iter().map(|&(i, a)| (i, a * s)).collect())
                });
                f
            });
            Ok(MatrixSource::lazy_derived(rows, cols, lazy.state_budget()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip_drops_zeros() {
        let a = MatrixSource::from_dense(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        assert_eq!(a.row(StateId(0)).unwrap().len(), 1);
        assert_eq!(a.to_dense().unwrap(), vec![vec![0.0, 2.0], vec![2.0, 0.0]]);
    }

    #[test]
    fn scale_identity_and_direct() {
        let a = MatrixSource::from_dense(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let same = scale_columns(&a, |_| 1.0).unwrap();
        assert_eq!(same.to_dense(), a.to_dense());
        let half = scale_columns(&a, |j| if j.0 == 1 { 0.5 } else { 1.0 }).unwrap();
        assert_eq!(half.to_dense().unwrap(), vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        let ones = MatrixSource::from_dense(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let doubled = scale_columns(&ones, |_| 2.0).unwrap();
        assert_eq!(doubled.to_dense().unwrap(), vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
    }

    #[test]
    fn scale_rejects_non_positive() {
        let a = MatrixSource::from_dense(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        let err = scale_columns(&a, |j| if j.0 == 0 { 0.0 } else { 1.0 }).unwrap_err();
        assert!(matches!(err, Error::NonPositiveScale { state: StateId(0), .. }));
    }

    #[test]
    fn lazy_scaling_applies_per_column() {
        let walk = MatrixSource::lazy(|i| vec![(StateId(i.0 - 1), 0.5), (StateId(i.0 + 1), 0.5)])
            .with_columns(|j| vec![(StateId(j.0 - 1), 0.5), (StateId(j.0 + 1), 0.5)])
            .build();
        let scaled = scale_columns(&walk, |j| if j.0 > 0 { 2.0 } else { 1.0 }).unwrap();
        let row = scaled.row(StateId(0)).unwrap();
        assert_eq!(&row[..], &[(StateId(-1), 0.5), (StateId(1), 1.0)]);
        let col = scaled.column(StateId(3)).unwrap();
        assert_eq!(&col[..], &[(StateId(2), 1.0), (StateId(4), 1.0)]);
    }

    #[test]
    fn restriction_reindexes() {
        let a = MatrixSource::from_dense(&[[1.0, 2.0, 0.0], [3.0, 0.0, 4.0], [0.0, 5.0, 6.0]]).unwrap();
        let r = a.restrict(&[StateId(2), StateId(1)]).unwrap();
        assert_eq!(r.source.to_dense().unwrap(), vec![vec![6.0, 5.0], vec![4.0, 0.0]]);
    }
}
