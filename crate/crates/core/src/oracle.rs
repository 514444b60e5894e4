//! Dense eigen-oracle for small finite matrices, independent of the series
//! and power-iteration code paths: Schur eigenvalues for the rightmost
//! eigenvalue, SVD null vectors for the Perron vectors.

use nalgebra::{DMatrix, Schur, SVD};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct DenseOracle {
    /// Eigenvalue with the largest real part (the Perron root, or the
    /// spectral bound of a Metzler matrix).
    pub eigenvalue: f64,
    /// Positive left eigenvector, normalized to sum 1.
    pub left: Vec<f64>,
    /// Positive right eigenvector, normalized to sum 1.
    pub right: Vec<f64>,
}

impl DenseOracle {
    /// Left vector scaled so that entry `k` is 1.
    pub fn left_at(&self, k: usize) -> Vec<f64> {
        let s = self.left[k];
        self.left.iter().map(|x| x / s).collect()
    }

    pub fn right_at(&self, k: usize) -> Vec<f64> {
        let s = self.right[k];
        self.right.iter().map(|x| x / s).collect()
    }
}

/// Iteration cap for the Schur and SVD sweeps; the unbounded defaults can
/// spin forever on some inputs.
const MAX_SWEEPS: usize = 20_000;

fn null_vector(m: DMatrix<f64>) -> Result<Vec<f64>> {
    let svd = SVD::try_new(m, false, true, f64::EPSILON, MAX_SWEEPS)
        .ok_or_else(|| Error::invalid("SVD did not converge"))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::invalid("SVD did not return singular vectors"))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::invalid("empty matrix"))?;
    let v: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let sum: f64 = v.iter().sum();
    if sum == 0.0 {
        return Err(Error::invalid("degenerate null vector"));
    }
    Ok(v.iter().map(|x| (x / sum).abs()).collect())
}

/// Fixed pseudo-random orthogonal matrix (xorshift entries, QR factor).
fn random_orthogonal(n: usize) -> DMatrix<f64> {
    let mut x = 0x2545_F491_4F6C_DD1Du64;
    let r = DMatrix::from_fn(n, n, |_, _| {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    });
    r.qr().q()
}

/// Largest real part over the spectrum of a dense square matrix. For
/// non-negative and Metzler matrices this is the Perron root or spectral
/// bound.
pub fn spectral_abscissa(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("oracle needs a non-empty square matrix"));
    }
    let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    // Eigenvalues on a common circle (permutation-like matrices) stall the
    // QR iteration; shifting by the row-sum norm gives them distinct moduli
    // and moves the rightmost eigenvalue by exactly `sigma`. Some sparse
    // patterns still stall, so the last attempt runs on an orthogonal
    // similarity that fills in the zeros.
    let norm = a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let rightmost = |m: &DMatrix<f64>, c: f64| {
        let sigma = c * norm;
        let shifted = m + DMatrix::identity(n, n) * sigma;
        let schur = Schur::try_new(shifted, f64::EPSILON, MAX_SWEEPS)?;
        Some(schur.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max) - sigma)
    };
    let x = [1.0, 0.37, 2.9]
        .iter()
        .find_map(|&c| rightmost(&a, c))
        .or_else(|| {
            let q = random_orthogonal(n);
            rightmost(&(q.transpose() * &a * &q), 1.0)
        })
        .ok_or_else(|| Error::invalid("Schur decomposition did not converge"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::invalid("eigenvalue computation failed"))
    }
}

/// Perron data of a dense square matrix (rows as given).
pub fn dense_oracle(rows: &[Vec<f64>]) -> Result<DenseOracle> {
    let eigenvalue = spectral_abscissa(rows)?;
    let n = rows.len();
    let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let shifted = &a - DMatrix::identity(n, n) * eigenvalue;
    let right = null_vector(shifted.clone())?;
    let left = null_vector(shifted.transpose())?;
    let normalize = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    };
    Ok(DenseOracle {
        eigenvalue,
        left: normalize(left),
        right: normalize(right),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_examples() {
        let o = dense_oracle(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let rho = 1.0 + 6f64.sqrt();
        assert!((o.eigenvalue - rho).abs() < 1e-13);
        let u = o.left_at(0);
        assert!((u[1] - (rho - 1.0) / 3.0).abs() < 1e-12);
        let y = o.right_at(0);
        assert!((y[1] - (rho - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn metzler_rightmost_eigenvalue() {
        let o = dense_oracle(&[vec![-2.0, 1.0], vec![1.0, -2.0]]).unwrap();
        assert!((o.eigenvalue + 1.0).abs() < 1e-13);
        let o = dense_oracle(&[vec![0.0, 1.0], vec![4.0, 0.0]]).unwrap();
        assert!((o.eigenvalue - 2.0).abs() < 1e-13);
        let u = o.left_at(0);
        assert!((u[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn permutation_cycles_do_not_stall() {
        for n in [4, 6, 12] {
            let p: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| if j == (i + 1) % n { 1.0 } else { 0.0 }).collect())
                .collect();
            let o = dense_oracle(&p).unwrap();
            assert!((o.eigenvalue - 1.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn periodic_matrix_picks_real_root() {
        let o = dense_oracle(&[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0], vec![2.0, 0.0, 0.0]]).unwrap();
        assert!((o.eigenvalue - 2.0).abs() < 1e-12);
        for x in o.left {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
