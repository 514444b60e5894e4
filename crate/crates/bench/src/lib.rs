//! Fixtures shared by the benchmarks.

use perron_chain::MatrixSource;

/// Dense `n × n` matrix with entries from a fixed xorshift stream; every
/// entry is positive, so the matrix is irreducible and aperiodic.
pub fn dense_fixture(n: usize) -> MatrixSource {
    let mut s = 0x9E37_79B9_7F4A_7C15u64;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    s ^= s << 13;
                    s ^= s >> 7;
                    s ^= s << 17;
                    0.05 + (s >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect()
        })
        .collect();
    MatrixSource::from_dense(&rows).expect("positive entries")
}

/// Cycle `i → i+1` with one chord `i → 7i+3` per state.
pub fn sparse_fixture(n: usize) -> MatrixSource {
    let mut triplets = Vec::with_capacity(2 * n);
    for i in 0..n {
        let next = (i + 1) % n;
        let chord = (i * 7 + 3) % n;
        triplets.push((i, next, 1.0));
        if chord != next {
            triplets.push((i, chord, 0.5));
        }
    }
    MatrixSource::from_triplets(n, triplets).expect("valid triplets")
}
