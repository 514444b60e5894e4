use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::{LazyCache, MatrixSource, Row, StateId};
use crate::error::{Error, Result};

/// `f_i = Σ_j a_ij` per requested state.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RowSums(pub BTreeMap<StateId, f64>);

impl RowSums {
    pub fn get(&self, i: StateId) -> Option<f64> {
        self.0.get(&i).copied()
    }
}

fn positive_sum(src: &MatrixSource, i: StateId) -> Result<f64> {
    let f = src.store.row_sum(i)?;
    if f > 0.0 {
        Ok(f)
    } else {
        Err(Error::invalid(format!(
            "row {i} is empty, so the matrix is not irreducible"
        )))
    }
}

/// Row sums for `states`. Lazy sources memoize the sum with the row.
pub fn row_sums(src: &MatrixSource, states: &[StateId]) -> Result<RowSums> {
    states
        .iter()
        .map(|&i| Ok((i, positive_sum(src, i)?)))
        .collect::<Result<_>>()
        .map(RowSums)
}

/// One row of the stochastic kernel `m_ij = a_ij / f_i`, with `f_i` kept.
#[derive(Clone, Debug)]
pub struct KernelRow {
    pub probabilities: Row,
    pub f: f64,
}

impl KernelRow {
    fn build(src: &MatrixSource, i: StateId) -> Result<Self> {
        let f = positive_sum(src, i)?;
        let probabilities = src.row(i)?.iter().map(|&(j, a)| (j, a / f)).collect();
        Ok(KernelRow { probabilities, f })
    }
}

/// Row-normalized chain of a non-negative matrix. Finite kernels are built
/// eagerly; lazy kernels normalize rows on first use.
#[derive(Clone)]
pub struct TransitionKernel {
    source: MatrixSource,
    rows: KernelRows,
}

#[derive(Clone)]
enum KernelRows {
    Finite(Arc<Vec<KernelRow>>),
    Lazy(Arc<LazyCache<KernelRow>>),
}

pub fn build_kernel(src: &MatrixSource) -> Result<TransitionKernel> {
    let rows = match src.states() {
        Some(states) => KernelRows::Finite(Arc::new(
            states
                .into_iter()
                .map(|i| KernelRow::build(src, i))
                .collect::<Result<_>>()?,
        )),
        None => KernelRows::Lazy(Arc::new(LazyCache::new(src.store.state_budget()))),
    };
    Ok(TransitionKernel {
        source: src.clone(),
        rows,
    })
}

impl TransitionKernel {
    pub fn source(&self) -> &MatrixSource {
        &self.source
    }

    pub fn n_states(&self) -> Option<usize> {
        self.source.n_states()
    }

    pub fn row(&self, i: StateId) -> Result<KernelRow> {
        match &self.rows {
            KernelRows::Finite(rows) => i
                .index()
                .and_then(|idx| rows.get(idx))
                .cloned()
                .ok_or(Error::UnknownState(i)),
            KernelRows::Lazy(cache) => {
                cache.get_or_try_insert_with(i, || KernelRow::build(&self.source, i))
            }
        }
    }

    /// `f_i` of the underlying matrix.
    pub fn row_sum(&self, i: StateId) -> Result<f64> {
        Ok(self.row(i)?.f)
    }

    pub fn to_dense(&self) -> Option<Vec<Vec<f64>>> {
        let n = self.n_states()?;
        let mut dense = vec![vec![0.0; n]; n];
        for (i, out) in dense.iter_mut().enumerate() {
            for &(j, m) in self.row(StateId::from(i)).ok()?.probabilities.iter() {
                out[j.0 as usize] = m;
            }
        }
        Some(dense)
    }
}
