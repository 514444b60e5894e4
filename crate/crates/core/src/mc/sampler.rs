//! Per-batch compiled view of a chain: local `u32` state numbers, one row
//! sampler per visited state, and the per-state weight factor.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::matrix::StateId;

/// Rows at least this long are sampled through an alias table.
pub(crate) const ALIAS_MIN_ENTRIES: usize = 8;

enum Pick {
    One,
    Cdf(Box<[f64]>),
    Alias(WeightedAliasIndex<f64>),
}

/// What a loader returns for one state.
pub(crate) struct RowData {
    /// Jump distribution, probabilities summing to 1.
    pub probabilities: Vec<(StateId, f64)>,
    /// Multiplicative weight factor (`R·f_i` for the discrete chain) or rate.
    pub weight: f64,
    /// Extra per-state constant (the CTMC exponent `d_i − λ`).
    pub aux: f64,
}

pub(crate) struct LocalRow {
    targets: Box<[u32]>,
    pick: Pick,
    pub weight: f64,
    pub aux: f64,
}

impl LocalRow {
    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.pick {
            Pick::One => self.targets[0],
            Pick::Cdf(cdf) => {
                let u: f64 = rng.random();
                let last = cdf.len() - 1;
                let mut p = 0;
                while p < last && u >= cdf[p] {
                    p += 1;
                }
                self.targets[p]
            }
            Pick::Alias(alias) => self.targets[alias.sample(rng)],
        }
    }
}

pub(crate) struct LocalChain<F> {
    finite: bool,
    ids: Vec<StateId>,
    index: HashMap<StateId, u32>,
    rows: Vec<Option<LocalRow>>,
    load: F,
}

impl<F> LocalChain<F>
where
    F: Fn(StateId) -> Result<RowData>,
{
    /// Finite chains number states `0..n` directly; lazy ones on first sight.
    pub(crate) fn new(n_states: Option<usize>, load: F) -> Self {
        let (finite, ids) = match n_states {
            Some(n) => (true, (0..n).map(StateId::from).collect()),
            None => (false, Vec::new()),
        };
        let rows = (0..ids.len()).map(|_| None).collect();
        LocalChain {
            finite,
            ids,
            index: HashMap::new(),
            rows,
            load,
        }
    }

    pub(crate) fn index_of(&mut self, s: StateId) -> Result<u32> {
        if self.finite {
            return s
                .index()
                .filter(|&i| i < self.ids.len())
                .map(|i| i as u32)
                .ok_or(Error::UnknownState(s));
        }
        if let Some(&i) = self.index.get(&s) {
            return Ok(i);
        }
        let i = u32::try_from(self.ids.len())
            .map_err(|_| Error::invalid("too many states for one Monte Carlo batch"))?;
        self.ids.push(s);
        self.index.insert(s, i);
        self.rows.push(None);
        Ok(i)
    }

    pub(crate) fn id(&self, i: u32) -> StateId {
        self.ids[i as usize]
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }

    pub(crate) fn ids(&self) -> &[StateId] {
        &self.ids
    }

    fn build(&mut self, i: u32) -> Result<LocalRow> {
        let state = self.ids[i as usize];
        let data = (self.load)(state)?;
        if data.probabilities.is_empty() {
            return Err(Error::invalid(format!("state {state} has no outgoing transitions")));
        }
        let mut targets = Vec::with_capacity(data.probabilities.len());
        for &(j, _) in &data.probabilities {
            targets.push(self.index_of(j)?);
        }
        let probs: Vec<f64> = data.probabilities.iter().map(|&(_, p)| p).collect();
        let pick = match probs.len() {
            1 => Pick::One,
            n if n >= ALIAS_MIN_ENTRIES => Pick::Alias(
                WeightedAliasIndex::new(probs).map_err(|e| Error::invalid(format!("alias table: {e}")))?,
            ),
            _ => {
                let total: f64 = probs.iter().sum();
                let mut acc = 0.0;
                Pick::Cdf(
                    probs
                        .iter()
                        .map(|p| {
                            acc += p;
                            acc / total
                        })
                        .collect(),
                )
            }
        };
        Ok(LocalRow {
            targets: targets.into_boxed_slice(),
            pick,
            weight: data.weight,
            aux: data.aux,
        })
    }

    #[inline(always)]
    pub(crate) fn row(&mut self, i: u32) -> Result<&LocalRow> {
        if self.rows[i as usize].is_none() {
            self.fill(i)?;
        }
        match &self.rows[i as usize] {
            Some(row) => Ok(row),
            None => unreachable!("row was just built"),
        }
    }

    #[cold]
    #[inline(never)]
    fn fill(&mut self, i: u32) -> Result<()> {
        let row = self.build(i)?;
        self.rows[i as usize] = Some(row);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn frequencies(n: usize) -> Vec<f64> {
        let probs: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let total: f64 = probs.iter().sum();
        let mut chain = LocalChain::new(Some(n), |_| {
            Ok(RowData {
                probabilities: probs.iter().enumerate().map(|(j, &p)| (StateId::from(j), p / total)).collect(),
                weight: 1.0,
                aux: 0.0,
            })
        });
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let mut counts = vec![0.0; n];
        let draws = 200_000;
        for _ in 0..draws {
            let j = chain.row(0).unwrap().sample(&mut rng);
            counts[j as usize] += 1.0;
        }
        counts.iter().map(|c| c / draws as f64).collect()
    }

    #[test]
    fn cdf_and_alias_rows_follow_the_distribution() {
        for n in [3, 12] {
            let total = (n * (n + 1) / 2) as f64;
            for (j, f) in frequencies(n).iter().enumerate() {
                let p = (j + 1) as f64 / total;
                assert!((f - p).abs() < 5.0 * (p / 200_000.0).sqrt() + 1e-4, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn lazy_states_are_numbered_on_sight() {
        let mut chain = LocalChain::new(None, |s: StateId| {
            Ok(RowData {
                probabilities: vec![(StateId(s.0 + 1), 1.0)],
                weight: 1.0,
                aux: 0.0,
            })
        });
        let a = chain.index_of(StateId(-7)).unwrap();
        let next = chain.row(a).unwrap().sample(&mut Xoshiro256PlusPlus::seed_from_u64(1));
        assert_eq!(chain.id(next), StateId(-6));
        assert_eq!(chain.len(), 2);
    }
}
