use std::fmt;
use std::sync::Arc;

use super::{
    EntryPolicy, MatrixSource, Row, RowFn, RowStore, SourceKind, DEFAULT_ROW_TERM_BUDGET,
    DEFAULT_STATE_BUDGET,
};
use super::StateId;
use crate::error::{Error, Result};

/// Real matrix `G` with non-negative off-diagonal entries and a diagonal of
/// any sign, bounded above.
#[derive(Clone)]
pub struct MetzlerSource {
    pub(crate) store: RowStore,
    diag_bound: f64,
}

impl fmt::Debug for MetzlerSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetzlerSource")
            .field("kind", &self.kind())
            .field("n_states", &self.n_states())
            .field("d_sup", &self.diag_bound)
            .finish()
    }
}

impl MetzlerSource {
    pub fn from_dense<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::invalid(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            triplets.extend(row.iter().enumerate().filter(|(_, &g)| g != 0.0).map(|(j, &g)| (i, j, g)));
        }
        Self::from_triplets(n, triplets)
    }

    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let store = RowStore::finite(n, triplets, EntryPolicy::Metzler)?;
        let mut diag_bound = f64::NEG_INFINITY;
        for i in 0..n {
            let i = StateId::from(i);
            diag_bound = diag_bound.max(diagonal_of(&store.row(i)?, i));
        }
        Ok(MetzlerSource { store, diag_bound })
    }

    /// Lazy Metzler source. `diag_bound` is the declared `sup_i g_ii`; a
    /// generated row exceeding it is a domain error.
    pub fn lazy<F>(rows: F, diag_bound: f64) -> Result<Self>
    where
        F: Fn(StateId) -> Vec<(StateId, f64)> + Send + Sync + 'static,
    {
        Self::lazy_with(Arc::new(move |i| Ok(rows(i))), None, diag_bound)
    }

    /// As [`MetzlerSource::lazy`] with a column generator.
    pub fn lazy_with_columns<F, C>(rows: F, cols: C, diag_bound: f64) -> Result<Self>
    where
        F: Fn(StateId) -> Vec<(StateId, f64)> + Send + Sync + 'static,
        C: Fn(StateId) -> Vec<(StateId, f64)> + Send + Sync + 'static,
    {
        Self::lazy_with(
            Arc::new(move |i| Ok(rows(i))),
            Some(Arc::new(move |j| Ok(cols(j)))),
            diag_bound,
        )
    }

    pub(crate) fn lazy_with(rows: Arc<RowFn>, cols: Option<Arc<RowFn>>, diag_bound: f64) -> Result<Self> {
        if !diag_bound.is_finite() {
            return Err(Error::Domain(format!("diagonal bound must be finite, got {diag_bound}")));
        }
        let checked: Arc<RowFn> = Arc::new(move |i| {
            let row = rows(i)?;
            for &(j, g) in &row {
                if j == i && g > diag_bound {
                    return Err(Error::Domain(format!(
                        "diagonal entry {g} at state {i} exceeds the declared bound {diag_bound}"
                    )));
                }
            }
            Ok(row)
        });
        Ok(MetzlerSource {
            store: RowStore::lazy(
                checked,
                cols,
                EntryPolicy::Metzler,
                DEFAULT_STATE_BUDGET,
                DEFAULT_ROW_TERM_BUDGET,
            ),
            diag_bound,
        })
    }

    pub fn kind(&self) -> SourceKind {
        match self.store {
            RowStore::Finite(_) => SourceKind::FiniteExplicit,
            RowStore::Lazy(_) => SourceKind::InfiniteLazy,
        }
    }

    pub fn n_states(&self) -> Option<usize> {
        self.store.n_states()
    }

    pub fn states(&self) -> Option<Vec<StateId>> {
        self.n_states().map(|n| (0..n).map(StateId::from).collect())
    }

    pub fn row(&self, i: StateId) -> Result<Row> {
        self.store.row(i)
    }

    pub fn column(&self, j: StateId) -> Result<Row> {
        self.store.column(j)
    }

    pub fn has_columns(&self) -> bool {
        self.store.has_columns()
    }

    /// `g_ii`.
    pub fn diagonal(&self, i: StateId) -> Result<f64> {
        Ok(diagonal_of(&self.row(i)?, i))
    }

    /// `d_i = Σ_j g_ij`.
    pub fn d_row(&self, i: StateId) -> Result<f64> {
        self.store.row_sum(i)
    }

    /// `sup_i g_ii`: exact for finite sources, the declared bound otherwise.
    pub fn d_sup(&self) -> f64 {
        self.diag_bound
    }

    pub fn materialized_states(&self) -> usize {
        self.store.materialized()
    }

    pub fn to_dense(&self) -> Option<Vec<Vec<f64>>> {
        let n = self.n_states()?;
        let mut dense = vec![vec![0.0; n]; n];
        for (i, out) in dense.iter_mut().enumerate() {
            for &(j, g) in self.row(StateId::from(i)).ok()?.iter() {
                out[j.0 as usize] = g;
            }
        }
        Some(dense)
    }

    /// The off-diagonal part as a non-negative matrix, for graph checks.
    pub fn positivity_pattern(&self) -> Result<MatrixSource> {
        self.map_rows(|i, row| Ok(row.iter().filter(|&&(j, _)| j != i).copied().collect()))
    }

    /// `G + shift·I`, which must be entrywise non-negative.
    pub fn shifted(&self, shift: f64) -> Result<MatrixSource> {
        let check = move |i: StateId, row: &Row| -> Result<Vec<(StateId, f64)>> {
            let mut out: Vec<(StateId, f64)> = row
                .iter()
                .map(|&(j, g)| (j, if j == i { g + shift } else { g }))
                .collect();
            if !out.iter().any(|&(j, _)| j == i) {
                out.push((i, shift));
            }
            if let Some(&(_, g)) = row.iter().find(|&&(j, _)| j == i) {
                if g + shift < 0.0 {
                    return Err(Error::ShiftInadmissible {
                        state: i,
                        diagonal: g,
                        shift,
                    });
                }
            } else if shift < 0.0 {
                return Err(Error::ShiftInadmissible {
                    state: i,
                    diagonal: 0.0,
                    shift,
                });
            }
            Ok(out)
        };
        self.map_rows(check)
    }

    fn finite_map<F>(&self, f: F) -> Result<MatrixSource>
    where
        F: Fn(StateId, &Row) -> Result<Vec<(StateId, f64)>>,
    {
        let n = self.n_states().unwrap_or(0);
        let mut triplets = Vec::new();
        for i in 0..n {
            let id = StateId::from(i);
            for (j, a) in f(id, &self.row(id)?)? {
                triplets.push((i, j.0 as usize, a));
            }
        }
        MatrixSource::from_triplets(n, triplets)
    }

    /// Non-negative matrix with rows `f(i, row_i(G))`. Columns are derived
    /// from rows of the column's entries when the source has columns.
    pub(crate) fn map_rows<F>(&self, f: F) -> Result<MatrixSource>
    where
        F: Fn(StateId, &Row) -> Result<Vec<(StateId, f64)>> + Send + Sync + 'static,
    {
        if self.n_states().is_some() {
            return self.finite_map(&f);
        }
        let f = Arc::new(f);
        let base = self.clone();
        let map = f.clone();
        let rows: Arc<RowFn> = Arc::new(move |i| map(i, &base.row(i)?));
        let cols: Option<Arc<RowFn>> = self.has_columns().then(|| {
            let base = self.clone();
            let c: Arc<RowFn> = Arc::new(move |j| {
                let mut out = Vec::new();
                for &(i, _) in base.column(j)?.iter() {
                    let mapped = f(i, &base.row(i)?)?;
                    if let Some(&(_, a)) = mapped.iter().find(|&&(c, _)| c == j) {
                        out.push((i, a));
                    }
                }
                if !base.column(j)?.iter().any(|&(i, _)| i == j) {
                    let mapped = f(j, &base.row(j)?)?;
                    if let Some(&(_, a)) = mapped.iter().find(|&&(c, _)| c == j) {
                        out.push((j, a));
                    }
                }
                Ok(out)
            });
            c
        });
        Ok(MatrixSource::lazy_derived(rows, cols, self.store.state_budget()))
    }
}

fn diagonal_of(row: &Row, i: StateId) -> f64 {
    row.binary_search_by_key(&i, |&(j, _)| j)
        .map(|pos| row[pos].1)
        .unwrap_or(0.0)
}

/// Conservative generator `q_ij = g_ij − d_i δ_ij` of the minimal Q-process.
#[derive(Clone, Debug)]
pub struct QMatrix {
    g: MetzlerSource,
}

pub fn build_qmatrix(g: &MetzlerSource) -> QMatrix {
    QMatrix { g: g.clone() }
}

impl QMatrix {
    /// Row `i`: off-diagonal `g_ij`, diagonal `−q_i`.
    pub fn row(&self, i: StateId) -> Result<Vec<(StateId, f64)>> {
        let row = self.g.row(i)?;
        let q = self.q(i)?;
        let mut out: Vec<(StateId, f64)> = row.iter().filter(|&&(j, _)| j != i).copied().collect();
        let pos = out.partition_point(|&(j, _)| j < i);
        out.insert(pos, (i, -q));
        Ok(out)
    }

    /// `q_i = −q_ii = Σ_{j≠i} g_ij`.
    pub fn q(&self, i: StateId) -> Result<f64> {
        Ok(self
            .g
            .row(i)?
            .iter()
            .filter(|&&(j, _)| j != i)
            .map(|&(_, g)| g)
            .sum())
    }

    pub fn to_dense(&self) -> Option<Vec<Vec<f64>>> {
        let n = self.g.n_states()?;
        let mut dense = vec![vec![0.0; n]; n];
        for (i, out) in dense.iter_mut().enumerate() {
            for (j, q) in self.row(StateId::from(i)).ok()? {
                out[j.0 as usize] = q;
            }
        }
        Some(dense)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qmatrix_of_worked_examples() {
        let g = MetzlerSource::from_dense(&[[-2.0, 1.0], [1.0, -2.0]]).unwrap();
        assert_eq!(g.d_row(StateId(0)).unwrap(), -1.0);
        assert_eq!(build_qmatrix(&g).to_dense().unwrap(), vec![vec![-1.0, 1.0], vec![1.0, -1.0]]);
        let g = MetzlerSource::from_dense(&[[0.0, 1.0], [4.0, 0.0]]).unwrap();
        assert_eq!(build_qmatrix(&g).to_dense().unwrap(), vec![vec![-1.0, 1.0], vec![4.0, -4.0]]);
        assert_eq!(g.d_sup(), 0.0);
    }

    #[test]
    fn shift_makes_non_negative() {
        let g = MetzlerSource::from_dense(&[[-2.0, 1.0], [1.0, -2.0]]).unwrap();
        let a = g.shifted(3.0).unwrap();
        assert_eq!(a.to_dense().unwrap(), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(g.shifted(1.0), Err(Error::ShiftInadmissible { .. })));
    }

    #[test]
    fn lazy_diag_bound_enforced() {
        let g = MetzlerSource::lazy(|i| vec![(i, i.0 as f64), (StateId(i.0 + 1), 1.0)], 3.0).unwrap();
        assert!(g.row(StateId(2)).is_ok());
        assert!(matches!(g.row(StateId(4)), Err(Error::Domain(_))));
    }

    #[test]
    fn lazy_shift_columns_include_diagonal() {
        let g = MetzlerSource::lazy_with_columns(
            |i| vec![(StateId(i.0 - 1), 1.0), (i, -2.0), (StateId(i.0 + 1), 1.0)],
            |j| vec![(StateId(j.0 - 1), 1.0), (j, -2.0), (StateId(j.0 + 1), 1.0)],
            -2.0,
        )
        .unwrap();
        let a = g.shifted(3.0).unwrap();
        assert_eq!(&a.row(StateId(0)).unwrap()[..], &[(StateId(-1), 1.0), (StateId(0), 1.0), (StateId(1), 1.0)]);
        assert_eq!(&a.column(StateId(0)).unwrap()[..], &[(StateId(-1), 1.0), (StateId(0), 1.0), (StateId(1), 1.0)]);
    }
}
