//! Tail extrapolation for non-negative term sequences.
//!
//! Terms are grouped into blocks of the chain's period so that interleaved
//! zeros of periodic matrices do not disturb ratios. At every power-of-two
//! block count `M` the tracker compares the window sums `S_A` over blocks
//! `(M/2, 3M/4]` and `S_B` over `(3M/4, M]`. Under geometric decay the window
//! ratio squares from one checkpoint to the next; under power-law decay
//! `t_m ~ c·m^(-α)` it stays fixed, and the ratio determines `α`. Whichever
//! model predicts the current ratio better supplies the tail.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum TailModel {
    /// The last two windows are exactly zero.
    Exhausted,
    /// Per-block ratio of a geometric tail.
    Geometric { ratio: f64 },
    /// Decay exponent `α > 1` of a summable power-law tail.
    PowerLaw { exponent: f64 },
    /// Power-law decay with `α ≤ 1`: the series diverges.
    Divergent { exponent: f64 },
    /// Too few terms, or terms not yet decaying.
    Unknown,
}

impl TailModel {
    /// Whether the tail value is a usable finite extrapolation.
    pub fn is_reliable(&self) -> bool {
        matches!(
            self,
            TailModel::Exhausted | TailModel::Geometric { .. } | TailModel::PowerLaw { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    /// Partial sum through the checkpoint the estimate was taken at.
    pub partial: f64,
    /// Estimated remainder after that checkpoint (infinite when divergent or unknown).
    pub tail: f64,
    pub model: TailModel,
    /// Number of terms covered by `partial`.
    pub terms: usize,
}

impl TailEstimate {
    pub fn extrapolated(&self) -> f64 {
        self.partial + self.tail
    }
}

/// Window ratio `S_B/S_A` for a power law with exponent `α = 1 + x`.
fn power_ratio(x: f64) -> f64 {
    let (ln43, ln2) = ((4.0f64 / 3.0).ln(), 2f64.ln());
    if x == 0.0 {
        return ln43 / (ln2 - ln43);
    }
    (x * ln43).exp_m1() / ((x * ln43).exp() * (x * (ln2 - ln43)).exp_m1())
}

/// Inverts [`power_ratio`]; it is strictly decreasing in `x`.
fn power_exponent(ratio: f64) -> f64 {
    let (mut lo, mut hi) = (-30.0, 80.0);
    if ratio >= power_ratio(lo) {
        return lo + 1.0;
    }
    if ratio <= power_ratio(hi) {
        return hi + 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if power_ratio(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 + 0.5 * (lo + hi)
}

#[derive(Clone, Debug)]
pub(crate) struct TailTracker {
    block_len: usize,
    in_block: usize,
    terms: usize,
    blocks: usize,
    total: f64,
    /// Cumulative sums at block counts `2^j` and `3·2^j`.
    marks: Vec<(usize, f64)>,
}

fn is_mark(blocks: usize) -> bool {
    blocks.is_power_of_two() || (blocks.is_multiple_of(3) && (blocks / 3).is_power_of_two())
}

impl TailTracker {
    pub(crate) fn new(block_len: usize) -> Self {
        TailTracker {
            block_len: block_len.max(1),
            in_block: 0,
            terms: 0,
            blocks: 0,
            total: 0.0,
            marks: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, term: f64) {
        self.total += term;
        self.terms += 1;
        self.in_block += 1;
        if self.in_block == self.block_len {
            self.in_block = 0;
            self.blocks += 1;
            if is_mark(self.blocks) {
                self.marks.push((self.blocks, self.total));
            }
        }
    }

    pub(crate) fn total(&self) -> f64 {
        self.total
    }

    fn cumulative(&self, blocks: usize) -> Option<f64> {
        self.marks
            .iter()
            .find(|&&(b, _)| b == blocks)
            .map(|&(_, c)| c)
    }

    /// `(S_A, S_B)` for checkpoint `m` (a power of two, at least 4).
    fn windows(&self, m: usize) -> Option<(f64, f64)> {
        let half = self.cumulative(m / 2)?;
        let three_q = self.cumulative(3 * m / 4)?;
        let full = self.cumulative(m)?;
        Some(((three_q - half).max(0.0), (full - three_q).max(0.0)))
    }

    /// Estimate at the largest power-of-two checkpoint reached so far.
    pub(crate) fn estimate(&self) -> TailEstimate {
        let unknown = |partial: f64, terms: usize| TailEstimate {
            partial,
            tail: f64::INFINITY,
            model: TailModel::Unknown,
            terms,
        };
        if self.blocks < 4 {
            return unknown(self.total, self.terms);
        }
        let m = 1usize << (usize::BITS - 1 - self.blocks.leading_zeros());
        let partial = self.cumulative(m).unwrap_or(self.total);
        let terms = m * self.block_len;
        let Some((s_a, s_b)) = self.windows(m) else {
            return unknown(partial, terms);
        };
        if s_a == 0.0 && s_b == 0.0 {
            return if partial > 0.0 {
                TailEstimate {
                    partial,
                    tail: 0.0,
                    model: TailModel::Exhausted,
                    terms,
                }
            } else {
                unknown(partial, terms)
            };
        }
        if s_a == 0.0 {
            return unknown(partial, terms);
        }
        let ratio = s_b / s_a;
        let previous = if m >= 8 {
            self.windows(m / 2)
                .filter(|&(a, _)| a > 0.0)
                .map(|(a, b)| b / a)
        } else {
            None
        };
        let power_law = previous
            .map(|prev| (ratio - prev).abs() < (ratio - prev * prev).abs())
            .unwrap_or(false);
        if power_law {
            let exponent = power_exponent(ratio);
            if exponent > 1.0 {
                let tail = s_b / (((exponent - 1.0) * (4.0f64 / 3.0).ln()).exp() - 1.0);
                TailEstimate {
                    partial,
                    tail,
                    model: TailModel::PowerLaw { exponent },
                    terms,
                }
            } else {
                TailEstimate {
                    partial,
                    tail: f64::INFINITY,
                    model: TailModel::Divergent { exponent },
                    terms,
                }
            }
        } else if ratio < 1.0 {
            let window = (m / 4) as f64;
            TailEstimate {
                partial,
                tail: s_b * ratio / (1.0 - ratio),
                model: TailModel::Geometric {
                    ratio: ratio.powf(1.0 / window),
                },
                terms,
            }
        } else {
            unknown(partial, terms)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(terms: impl Iterator<Item = f64>, block: usize) -> TailEstimate {
        let mut t = TailTracker::new(block);
        terms.for_each(|x| t.push(x));
        t.estimate()
    }

    #[test]
    fn geometric_tail_is_exact() {
        let est = run((1..=256).map(|n| 0.9f64.powi(n)), 1);
        assert!(matches!(est.model, TailModel::Geometric { .. }));
        assert!((est.extrapolated() - 9.0).abs() < 1e-12, "{est:?}");
    }

    #[test]
    fn power_law_tail_recovers_exponent() {
        let est = run((1..=4096).map(|n| (n as f64).powf(-1.5)), 1);
        let TailModel::PowerLaw { exponent } = est.model else {
            panic!("{est:?}");
        };
        assert!((exponent - 1.5).abs() < 1e-3);
        // ζ(3/2)
        assert!((est.extrapolated() - 2.612375348685488).abs() < 1e-4, "{est:?}");
    }

    #[test]
    fn slow_power_law_is_divergent() {
        let est = run((1..=4096).map(|n| (n as f64).powf(-0.5)), 1);
        assert!(matches!(est.model, TailModel::Divergent { .. }), "{est:?}");
        assert!(!est.model.is_reliable());
    }

    #[test]
    fn periodic_zeros_are_blocked() {
        let est = run((1..=512).map(|n| if n % 2 == 0 { 0.8f64.powi(n) } else { 0.0 }), 2);
        let exact = 0.64 / (1.0 - 0.64);
        assert!((est.extrapolated() - exact).abs() < 1e-12, "{est:?}");
    }

    #[test]
    fn finite_sequences_are_exhausted() {
        let est = run((1..=64).map(|n| if n < 5 { 1.0 } else { 0.0 }), 1);
        assert_eq!(est.model, TailModel::Exhausted);
        assert_eq!(est.extrapolated(), 4.0);
    }

    #[test]
    fn exponent_inversion_round_trips() {
        for alpha in [-1.0, 0.0, 0.5, 1.0, 1.5, 3.0, 10.0] {
            let r = power_ratio(alpha - 1.0);
            assert!((power_exponent(r) - alpha).abs() < 1e-8, "alpha {alpha}");
        }
    }
}
