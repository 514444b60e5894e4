//! Positivity-graph checks: irreducibility, truncation balls, strongly
//! connected components and periods.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use super::{MatrixSource, StateId};
use crate::error::Result;

/// Outcome of an irreducibility check. Lazy sources can only be checked on a
/// finite ball, and the verdict says so.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Irreducibility {
    Irreducible,
    IrreducibleWithinBall {
        root: StateId,
        radius: usize,
        states: usize,
    },
    /// `to` cannot be reached from `from`.
    Reducible { from: StateId, to: StateId },
}

impl Irreducibility {
    pub fn holds(&self) -> bool {
        !matches!(self, Irreducibility::Reducible { .. })
    }
}

/// States within graph distance `radius` of `root`, following positive
/// entries forward. Sorted by id.
pub fn ball(src: &MatrixSource, root: StateId, radius: usize) -> Result<Vec<StateId>> {
    let mut dist: HashMap<StateId, usize> = HashMap::from([(root, 0)]);
    let mut queue = VecDeque::from([root]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        if d == radius {
            continue;
        }
        for &(j, _) in src.row(s)?.iter() {
            dist.entry(j).or_insert_with(|| {
                queue.push_back(j);
                d + 1
            });
        }
    }
    let mut states: Vec<StateId> = dist.into_keys().collect();
    states.sort();
    Ok(states)
}

/// Induced subgraph on a finite state set.
struct Subgraph {
    ids: Vec<StateId>,
    fwd: Vec<Vec<usize>>,
    bwd: Vec<Vec<usize>>,
}

impl Subgraph {
    fn new(src: &MatrixSource, states: &[StateId]) -> Result<Self> {
        let index: HashMap<StateId, usize> =
            states.iter().enumerate().map(|(p, &s)| (s, p)).collect();
        let mut fwd = vec![Vec::new(); states.len()];
        let mut bwd = vec![Vec::new(); states.len()];
        for (p, &s) in states.iter().enumerate() {
            for &(j, _) in src.row(s)?.iter() {
                if let Some(&q) = index.get(&j) {
                    fwd[p].push(q);
                    bwd[q].push(p);
                }
            }
        }
        Ok(Subgraph {
            ids: states.to_vec(),
            fwd,
            bwd,
        })
    }

    fn reach(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
        let mut seen = vec![false; adj.len()];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    fn position(&self, s: StateId) -> Option<usize> {
        self.ids.iter().position(|&x| x == s)
    }
}

/// Exact for finite sources. For lazy sources the check runs on
/// `ball(root, radius)` and the verdict is qualified accordingly.
pub fn is_irreducible(src: &MatrixSource, root: StateId, radius: usize) -> Result<Irreducibility> {
    let (states, finite) = match src.states() {
        Some(states) => (states, true),
        None => (ball(src, root, radius)?, false),
    };
    if states.is_empty() {
        return Ok(Irreducibility::Irreducible);
    }
    let graph = Subgraph::new(src, &states)?;
    let start = graph.position(root).unwrap_or(0);
    let origin = graph.ids[start];
    let forward = Subgraph::reach(&graph.fwd, start);
    if let Some(miss) = forward.iter().position(|&r| !r) {
        return Ok(Irreducibility::Reducible {
            from: origin,
            to: graph.ids[miss],
        });
    }
    let backward = Subgraph::reach(&graph.bwd, start);
    if let Some(miss) = backward.iter().position(|&r| !r) {
        return Ok(Irreducibility::Reducible {
            from: graph.ids[miss],
            to: origin,
        });
    }
    // A single state without a self-loop has no return path.
    if states.len() == 1 && graph.fwd[0].is_empty() {
        return Ok(Irreducibility::Reducible {
            from: origin,
            to: origin,
        });
    }
    Ok(if finite {
        Irreducibility::Irreducible
    } else {
        Irreducibility::IrreducibleWithinBall {
            root,
            radius,
            states: states.len(),
        }
    })
}

/// The strongly connected component of `root` inside the subgraph induced by
/// `states`. Sorted by id.
pub fn strongly_connected_component(
    src: &MatrixSource,
    states: &[StateId],
    root: StateId,
) -> Result<Vec<StateId>> {
    let graph = Subgraph::new(src, states)?;
    let Some(start) = graph.position(root) else {
        return Ok(Vec::new());
    };
    let forward = Subgraph::reach(&graph.fwd, start);
    let backward = Subgraph::reach(&graph.bwd, start);
    let mut scc: Vec<StateId> = (0..graph.ids.len())
        .filter(|&p| forward[p] && backward[p])
        .map(|p| graph.ids[p])
        .collect();
    scc.sort();
    Ok(scc)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Period of the class of `root` within the subgraph induced by `states`:
/// the gcd of `level(u) + 1 - level(v)` over edges of the class, with BFS
/// levels from `root`.
pub fn period(src: &MatrixSource, states: &[StateId], root: StateId) -> Result<usize> {
    let class = strongly_connected_component(src, states, root)?;
    let graph = Subgraph::new(src, &class)?;
    let Some(start) = graph.position(root) else {
        return Ok(1);
    };
    let mut level = vec![usize::MAX; class.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &w in &graph.fwd[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let mut d = 0;
    for (v, out) in graph.fwd.iter().enumerate() {
        for &w in out {
            d = gcd(d, (level[v] + 1).abs_diff(level[w]));
        }
    }
    Ok(d.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn srw(p: f64) -> MatrixSource {
        MatrixSource::lazy(move |i| vec![(StateId(i.0 - 1), 1.0 - p), (StateId(i.0 + 1), p)]).build()
    }

    #[test]
    fn two_cycle_is_irreducible() {
        let a = MatrixSource::from_dense(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(is_irreducible(&a, StateId(0), 0).unwrap(), Irreducibility::Irreducible);
    }

    #[test]
    fn identity_is_reducible_with_witness() {
        let a = MatrixSource::from_dense(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(
            is_irreducible(&a, StateId(0), 0).unwrap(),
            Irreducibility::Reducible { from: StateId(0), to: StateId(1) }
        );
    }

    #[test]
    fn srw_irreducible_within_ball() {
        let verdict = is_irreducible(&srw(0.3), StateId(0), 10).unwrap();
        assert_eq!(
            verdict,
            Irreducibility::IrreducibleWithinBall { root: StateId(0), radius: 10, states: 21 }
        );
    }

    #[test]
    fn one_way_chain_reports_backward_witness() {
        let a = MatrixSource::from_dense(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(
            is_irreducible(&a, StateId(0), 0).unwrap(),
            Irreducibility::Reducible { from: StateId(1), to: StateId(0) }
        );
    }

    #[test]
    fn periods() {
        let cycle3 = MatrixSource::from_dense(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        let all = cycle3.states().unwrap();
        assert_eq!(period(&cycle3, &all, StateId(0)).unwrap(), 3);
        let ones = MatrixSource::from_dense(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(period(&ones, &ones.states().unwrap(), StateId(0)).unwrap(), 1);
        let walk = srw(0.3);
        let b = ball(&walk, StateId(0), 6).unwrap();
        assert_eq!(period(&walk, &b, StateId(0)).unwrap(), 2);
    }

    #[test]
    fn scc_of_truncated_ball() {
        let a = MatrixSource::from_dense(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 0.0, 1.0]]).unwrap();
        let scc = strongly_connected_component(&a, &a.states().unwrap(), StateId(0)).unwrap();
        assert_eq!(scc, vec![StateId(0), StateId(1)]);
    }
}
