//! Taboo powers `₍r₎a_kj⁽ⁿ⁾`: total weight of length-`n` paths from `k` to
//! `j` whose intermediate states avoid `r`.

use std::collections::HashMap;

use serde::Serialize;

use super::{MatrixSource, StateId};
use crate::error::{Error, Result};
use crate::scaled::{frexp, ldexp, pow2};

type Row = Box<[(usize, f64)]>;

/// Dense local numbering of the states a recursion has touched. Finite
/// sources use the identity numbering with every row preloaded.
pub(crate) struct LocalIndex<'a> {
    src: &'a MatrixSource,
    ids: Vec<StateId>,
    index: HashMap<StateId, usize>,
    finite: bool,
    rows: Vec<Option<Row>>,
}

impl<'a> LocalIndex<'a> {
    pub(crate) fn new(src: &'a MatrixSource) -> Result<Self> {
        let mut local = LocalIndex {
            src,
            ids: Vec::new(),
            index: HashMap::new(),
            finite: false,
            rows: Vec::new(),
        };
        if let Some(n) = src.n_states() {
            local.finite = true;
            local.ids = (0..n).map(StateId::from).collect();
            local.rows = vec![None; n];
            for i in 0..n {
                local.load_row(i)?;
            }
        }
        Ok(local)
    }

    pub(crate) fn index_of(&mut self, s: StateId) -> Result<usize> {
        if self.finite {
            return s
                .index()
                .filter(|&i| i < self.ids.len())
                .ok_or(Error::UnknownState(s));
        }
        if let Some(&i) = self.index.get(&s) {
            return Ok(i);
        }
        let i = self.ids.len();
        self.ids.push(s);
        self.index.insert(s, i);
        self.rows.push(None);
        Ok(i)
    }

    pub(crate) fn lookup(&self, s: StateId) -> Option<usize> {
        if self.finite {
            s.index().filter(|&i| i < self.ids.len())
        } else {
            self.index.get(&s).copied()
        }
    }

    pub(crate) fn id(&self, i: usize) -> StateId {
        self.ids[i]
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }

    fn load_row(&mut self, i: usize) -> Result<()> {
        if self.rows[i].is_some() {
            return Ok(());
        }
        let row = self.src.row(self.ids[i])?;
        let mut local = Vec::with_capacity(row.len());
        for &(j, a) in row.iter() {
            local.push((self.index_of(j)?, a));
        }
        self.rows[i] = Some(local.into_boxed_slice());
        Ok(())
    }
}

/// Streaming forward recursion `v⁽ⁿ⁾ = mask_r(v⁽ⁿ⁻¹⁾)·(c·A)` started from
/// `v⁽⁰⁾ = e_k`, where `mask_r` zeroes the taboo entry for `n ≥ 2` only: the
/// origin is not an intermediate state. Each entry carries its own binary
/// exponent, so states whose values differ by more than the f64 range (the
/// far side of a drifting walk, say) coexist without flushing the small
/// ones to zero.
pub(crate) struct TabooRecursion<'a> {
    local: LocalIndex<'a>,
    taboo: usize,
    factor: f64,
    mant: Vec<f64>,
    exp: Vec<i64>,
    next_mant: Vec<f64>,
    next_exp: Vec<i64>,
    active: Vec<usize>,
    stamp: Vec<usize>,
    step: usize,
}

impl<'a> TabooRecursion<'a> {
    pub(crate) fn new(
        src: &'a MatrixSource,
        taboo: StateId,
        origin: StateId,
        factor: f64,
    ) -> Result<Self> {
        let mut local = LocalIndex::new(src)?;
        let origin = local.index_of(origin)?;
        let taboo = local.index_of(taboo)?;
        // Fail early on an origin whose row cannot be produced.
        local.load_row(origin)?;
        let n = local.len();
        let mut mant = vec![0.0; n];
        mant[origin] = 0.5;
        let mut exp = vec![0; n];
        exp[origin] = 1;
        Ok(TabooRecursion {
            local,
            taboo,
            factor,
            mant,
            exp,
            next_mant: vec![0.0; n],
            next_exp: vec![0; n],
            active: vec![origin],
            stamp: vec![usize::MAX; n],
            step: 0,
        })
    }

    pub(crate) fn step(&self) -> usize {
        self.step
    }

    fn grow(&mut self) {
        let n = self.local.len();
        if self.mant.len() < n {
            self.mant.resize(n, 0.0);
            self.exp.resize(n, 0);
            self.next_mant.resize(n, 0.0);
            self.next_exp.resize(n, 0);
            self.stamp.resize(n, usize::MAX);
        }
    }

    pub(crate) fn advance(&mut self) -> Result<()> {
        let mask = self.step >= 1;
        let mut next_active = Vec::with_capacity(self.active.len() + 4);
        let active = std::mem::take(&mut self.active);
        for &l in &active {
            let (m, e) = (self.mant[l], self.exp[l]);
            self.mant[l] = 0.0;
            if (mask && l == self.taboo) || m == 0.0 {
                continue;
            }
            self.local.load_row(l)?;
            self.grow();
            let weight = m * self.factor;
            let row = self.local.rows[l].as_deref().unwrap_or(&[]);
            for &(j, a) in row {
                let c = weight * a;
                if self.stamp[j] != self.step {
                    self.stamp[j] = self.step;
                    next_active.push(j);
                    self.next_mant[j] = c;
                    self.next_exp[j] = e;
                    continue;
                }
                let d = e - self.next_exp[j];
                if d > 0 {
                    self.next_mant[j] = self.next_mant[j] * pow2(-d) + c;
                    self.next_exp[j] = e;
                } else {
                    self.next_mant[j] += c * pow2(d);
                }
            }
        }
        for &j in &next_active {
            let m = self.next_mant[j];
            if !m.is_finite() {
                return Err(Error::HorizonOverflow {
                    step: self.step + 1,
                });
            }
            if m > 0.0 {
                let (m, de) = frexp(m);
                self.next_mant[j] = m;
                self.next_exp[j] += de;
            }
        }
        std::mem::swap(&mut self.mant, &mut self.next_mant);
        std::mem::swap(&mut self.exp, &mut self.next_exp);
        self.active = next_active;
        self.step += 1;
        Ok(())
    }

    /// Value at local index `i` in plain f64 (saturates outside the range).
    pub(crate) fn value_at(&self, i: usize) -> f64 {
        match self.mant.get(i) {
            Some(&m) if m != 0.0 => ldexp(m, self.exp[i]),
            _ => 0.0,
        }
    }

    pub(crate) fn value(&self, s: StateId) -> f64 {
        self.local.lookup(s).map_or(0.0, |i| self.value_at(i))
    }

    /// Natural log of the value at `s`, `-∞` when it is zero.
    #[cfg(test)]
    pub(crate) fn ln_value(&self, s: StateId) -> f64 {
        match self.local.lookup(s).map(|i| (self.mant[i], self.exp[i])) {
            Some((m, e)) if m != 0.0 => m.ln() + e as f64 * std::f64::consts::LN_2,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Nonzero entries of the current step, in plain f64.
    pub(crate) fn entries(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.active
            .iter()
            .filter(|&&j| self.mant[j] != 0.0)
            .map(move |&j| (self.local.id(j), ldexp(self.mant[j], self.exp[j])))
    }
}

/// Exact table `t[n][j] = ₍r₎a_kj⁽ⁿ⁾` for `1 ≤ n ≤ horizon`, sparse in `j`.
#[derive(Clone, Debug, Serialize)]
pub struct TabooPowerTable {
    pub taboo: StateId,
    pub origin: StateId,
    pub horizon: usize,
    /// `values[n - 1]` holds step `n`, sorted by state.
    pub values: Vec<Vec<(StateId, f64)>>,
}

impl TabooPowerTable {
    pub fn get(&self, n: usize, j: StateId) -> f64 {
        if n == 0 || n > self.horizon {
            return 0.0;
        }
        let step = &self.values[n - 1];
        step.binary_search_by_key(&j, |&(s, _)| s)
            .map(|p| step[p].1)
            .unwrap_or(0.0)
    }
}

pub fn taboo_powers(
    src: &MatrixSource,
    taboo: StateId,
    origin: StateId,
    horizon: usize,
) -> Result<TabooPowerTable> {
    if horizon == 0 {
        return Err(Error::invalid("taboo horizon must be at least 1"));
    }
    let mut rec = TabooRecursion::new(src, taboo, origin, 1.0)?;
    let mut values = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        rec.advance()?;
        let mut step: Vec<(StateId, f64)> = rec.entries().collect();
        if step.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(Error::HorizonOverflow { step: rec.step() });
        }
        step.sort_by_key(|&(s, _)| s);
        values.push(step);
    }
    Ok(TabooPowerTable {
        taboo,
        origin,
        horizon,
        values,
    })
}
