use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use log::warn;

use super::{Row, StateId};
use crate::error::{Error, Result};

pub(crate) type RowFn = dyn Fn(StateId) -> Result<Vec<(StateId, f64)>> + Send + Sync;

/// Sign rule applied to every stored entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EntryPolicy {
    NonNegative,
    /// Off-diagonal entries non-negative, diagonal of any sign.
    Metzler,
}

/// Memo table shared between threads. Fills are idempotent: a racing second
/// writer keeps the first value.
pub(crate) struct LazyCache<V> {
    map: RwLock<HashMap<StateId, V>>,
    budget: usize,
}

impl<V: Clone> LazyCache<V> {
    pub(crate) fn new(budget: usize) -> Self {
        LazyCache {
            map: RwLock::new(HashMap::new()),
            budget,
        }
    }

    pub(crate) fn get_or_try_insert_with<F>(&self, key: StateId, fill: F) -> Result<V>
    where
        F: FnOnce() -> Result<V>,
    {
        if let Some(v) = self.map.read().expect("cache lock poisoned").get(&key) {
            return Ok(v.clone());
        }
        let value = fill()?;
        let mut map = self.map.write().expect("cache lock poisoned");
        if let Some(existing) = map.get(&key) {
            return Ok(existing.clone());
        }
        if map.len() >= self.budget {
            return Err(Error::StateBudgetExhausted {
                budget: self.budget,
            });
        }
        map.insert(key, value.clone());
        Ok(value)
    }

    pub(crate) fn len(&self) -> usize {
        self.map.read().expect("cache lock poisoned").len()
    }

    pub(crate) fn budget(&self) -> usize {
        self.budget
    }
}

#[derive(Clone)]
struct CachedRow {
    entries: Row,
    sum: f64,
}

pub(crate) struct FiniteRows {
    rows: Vec<Row>,
    sums: Vec<f64>,
    cols: OnceLock<Vec<Row>>,
}

pub(crate) struct LazyRows {
    rows: Arc<RowFn>,
    cols: Option<Arc<RowFn>>,
    policy: EntryPolicy,
    row_term_budget: usize,
    row_cache: LazyCache<CachedRow>,
    col_cache: LazyCache<Row>,
}

impl LazyRows {
    pub(crate) fn state_budget(&self) -> usize {
        self.row_cache.budget()
    }
}

#[derive(Clone)]
pub(crate) enum RowStore {
    Finite(Arc<FiniteRows>),
    Lazy(Arc<LazyRows>),
}

/// Sorts, validates and sums one generated row.
fn normalize_row(
    state: StateId,
    mut entries: Vec<(StateId, f64)>,
    policy: EntryPolicy,
    term_budget: usize,
    is_column: bool,
) -> Result<(Row, f64)> {
    if entries.len() > term_budget {
        return Err(Error::NonFiniteRowSum {
            state,
            terms: entries.len(),
            sum: f64::INFINITY,
        });
    }
    entries.retain(|&(_, a)| a != 0.0);
    entries.sort_by_key(|&(j, _)| j);
    let mut sum = 0.0;
    for (pos, &(j, a)) in entries.iter().enumerate() {
        let (row, col) = if is_column { (j, state) } else { (state, j) };
        if pos > 0 && entries[pos - 1].0 == j {
            return Err(Error::DuplicateEntry { row, col });
        }
        if !a.is_finite() {
            return Err(Error::NonFiniteRowSum {
                state,
                terms: pos + 1,
                sum: a,
            });
        }
        check_sign(row, col, a, policy)?;
        sum += a;
    }
    if !sum.is_finite() {
        return Err(Error::NonFiniteRowSum {
            state,
            terms: entries.len(),
            sum,
        });
    }
    Ok((entries.into(), sum))
}

fn check_sign(row: StateId, col: StateId, a: f64, policy: EntryPolicy) -> Result<()> {
    if a >= 0.0 {
        return Ok(());
    }
    match policy {
        EntryPolicy::NonNegative if row == col => Err(Error::NegativeEntry { row, col, value: a }),
        EntryPolicy::Metzler if row == col => Ok(()),
        _ => Err(Error::NegativeOffDiagonal { row, col, value: a }),
    }
}

impl RowStore {
    pub(crate) fn finite<I>(n: usize, triplets: I, policy: EntryPolicy) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut rows: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); n];
        for (i, j, a) in triplets {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            if a == 0.0 {
                warn!("dropping explicit zero at ({i}, {j})");
                continue;
            }
            rows[i].push((StateId::from(j), a));
        }
        let mut stored = Vec::with_capacity(n);
        let mut sums = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let (row, sum) = normalize_row(StateId::from(i), row, policy, usize::MAX, false)?;
            stored.push(row);
            sums.push(sum);
        }
        Ok(RowStore::Finite(Arc::new(FiniteRows {
            rows: stored,
            sums,
            cols: OnceLock::new(),
        })))
    }

    pub(crate) fn lazy(
        rows: Arc<RowFn>,
        cols: Option<Arc<RowFn>>,
        policy: EntryPolicy,
        state_budget: usize,
        row_term_budget: usize,
    ) -> Self {
        RowStore::Lazy(Arc::new(LazyRows {
            rows,
            cols,
            policy,
            row_term_budget,
            row_cache: LazyCache::new(state_budget),
            col_cache: LazyCache::new(state_budget),
        }))
    }

    pub(crate) fn n_states(&self) -> Option<usize> {
        match self {
            RowStore::Finite(f) => Some(f.rows.len()),
            RowStore::Lazy(_) => None,
        }
    }

    fn finite_index(f: &FiniteRows, i: StateId) -> Result<usize> {
        i.index()
            .filter(|&idx| idx < f.rows.len())
            .ok_or(Error::UnknownState(i))
    }

    fn cached(lazy: &LazyRows, i: StateId) -> Result<CachedRow> {
        lazy.row_cache.get_or_try_insert_with(i, || {
            let generated = (lazy.rows)(i)?;
            let (entries, sum) =
                normalize_row(i, generated, lazy.policy, lazy.row_term_budget, false)?;
            Ok(CachedRow { entries, sum })
        })
    }

    pub(crate) fn row(&self, i: StateId) -> Result<Row> {
        match self {
            RowStore::Finite(f) => Ok(f.rows[Self::finite_index(f, i)?].clone()),
            RowStore::Lazy(lazy) => Ok(Self::cached(lazy, i)?.entries),
        }
    }

    /// Σ_j a_ij over the stored row.
    pub(crate) fn row_sum(&self, i: StateId) -> Result<f64> {
        match self {
            RowStore::Finite(f) => Ok(f.sums[Self::finite_index(f, i)?]),
            RowStore::Lazy(lazy) => Ok(Self::cached(lazy, i)?.sum),
        }
    }

    pub(crate) fn has_columns(&self) -> bool {
        match self {
            RowStore::Finite(_) => true,
            RowStore::Lazy(lazy) => lazy.cols.is_some(),
        }
    }

    pub(crate) fn column(&self, j: StateId) -> Result<Row> {
        match self {
            RowStore::Finite(f) => {
                let idx = Self::finite_index(f, j)?;
                Ok(Self::finite_columns(f)[idx].clone())
            }
            RowStore::Lazy(lazy) => {
                let cols = lazy
                    .cols
                    .as_ref()
                    .ok_or_else(|| Error::invalid("lazy source has no column generator"))?;
                lazy.col_cache.get_or_try_insert_with(j, || {
                    let generated = cols(j)?;
                    Ok(normalize_row(j, generated, lazy.policy, lazy.row_term_budget, true)?.0)
                })
            }
        }
    }

    fn finite_columns(f: &FiniteRows) -> &Vec<Row> {
        f.cols.get_or_init(|| {
            let mut cols: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); f.rows.len()];
            for (i, row) in f.rows.iter().enumerate() {
                for &(j, a) in row.iter() {
                    cols[j.0 as usize].push((StateId::from(i), a));
                }
            }
            cols.into_iter().map(Row::from).collect()
        })
    }

    pub(crate) fn transposed(&self) -> Option<RowStore> {
        match self {
            RowStore::Finite(f) => {
                let cols = Self::finite_columns(f).clone();
                let sums = cols.iter().map(|c| c.iter().map(|&(_, a)| a).sum()).collect();
                Some(RowStore::Finite(Arc::new(FiniteRows {
                    rows: cols,
                    sums,
                    cols: OnceLock::from(f.rows.clone()),
                })))
            }
            RowStore::Lazy(lazy) => {
                let cols = lazy.cols.clone()?;
                Some(RowStore::lazy(
                    cols,
                    Some(lazy.rows.clone()),
                    lazy.policy,
                    lazy.row_cache.budget(),
                    lazy.row_term_budget,
                ))
            }
        }
    }

    pub(crate) fn materialized(&self) -> usize {
        match self {
            RowStore::Finite(f) => f.rows.len(),
            RowStore::Lazy(lazy) => lazy.row_cache.len(),
        }
    }

    pub(crate) fn state_budget(&self) -> usize {
        match self {
            RowStore::Finite(f) => f.rows.len(),
            RowStore::Lazy(lazy) => lazy.state_budget(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk_rows() -> Arc<RowFn> {
        Arc::new(|i: StateId| Ok(vec![(StateId(i.0 + 1), 0.3), (StateId(i.0 - 1), 0.7)]))
    }

    #[test]
    fn lazy_rows_are_sorted_and_cached() {
        let store = RowStore::lazy(walk_rows(), None, EntryPolicy::NonNegative, 10, 8);
        let row = store.row(StateId(5)).unwrap();
        assert_eq!(&row[..], &[(StateId(4), 0.7), (StateId(6), 0.3)]);
        assert!((store.row_sum(StateId(5)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(store.materialized(), 1);
        store.row(StateId(5)).unwrap();
        assert_eq!(store.materialized(), 1);
    }

    #[test]
    fn state_budget_is_a_hard_error() {
        let store = RowStore::lazy(walk_rows(), None, EntryPolicy::NonNegative, 3, 8);
        for i in 0..3 {
            store.row(StateId(i)).unwrap();
        }
        assert!(matches!(
            store.row(StateId(3)),
            Err(Error::StateBudgetExhausted { budget: 3 })
        ));
    }

    #[test]
    fn oversized_row_is_not_summable() {
        let wide: Arc<RowFn> =
            Arc::new(|_| Ok((0..100).map(|j| (StateId(j), 1.0 / (j + 1) as f64)).collect()));
        let store = RowStore::lazy(wide, None, EntryPolicy::NonNegative, 10, 50);
        assert!(matches!(
            store.row(StateId(0)),
            Err(Error::NonFiniteRowSum { terms: 100, .. })
        ));
    }

    #[test]
    fn duplicates_and_signs_are_rejected() {
        let dup = RowStore::finite(2, [(0, 1, 1.0), (0, 1, 2.0)], EntryPolicy::NonNegative);
        assert!(matches!(dup, Err(Error::DuplicateEntry { .. })));
        let neg = RowStore::finite(2, [(0, 1, -1.0)], EntryPolicy::Metzler);
        assert!(matches!(neg, Err(Error::NegativeOffDiagonal { .. })));
        let diag = RowStore::finite(2, [(0, 0, -1.0), (0, 1, 1.0)], EntryPolicy::Metzler);
        assert!(diag.is_ok());
        let diag = RowStore::finite(2, [(0, 0, -1.0)], EntryPolicy::NonNegative);
        assert!(matches!(diag, Err(Error::NegativeEntry { .. })));
    }

    #[test]
    fn finite_transpose_swaps_rows_and_columns() {
        let store = RowStore::finite(2, [(0, 1, 2.0), (1, 0, 3.0), (1, 1, 1.0)], EntryPolicy::NonNegative).unwrap();
        let t = store.transposed().unwrap();
        assert_eq!(&t.row(StateId(0)).unwrap()[..], &[(StateId(1), 3.0)]);
        assert_eq!(t.row_sum(StateId(1)).unwrap(), 3.0);
    }
}
