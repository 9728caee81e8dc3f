//! Fit matrices `C` for the solver: a plain dense matrix or a vertical stack
//! of lower-triangular Toeplitz blocks (one per channel).

use super::banded::BandedSym;
use crate::error::{input, Result};

/// Stack of `P × P` lower-triangular Toeplitz blocks; block `m` has entry
/// `(p, q) = taps[m][p − q]` for `0 ≤ p − q < taps[m].len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedToeplitz {
    size: usize,
    taps: Vec<Vec<f64>>,
}

impl StackedToeplitz {
    pub fn new(taps: Vec<Vec<f64>>, size: usize) -> Result<Self> {
        if taps.is_empty() {
            return input("no channel blocks");
        }
        for (m, t) in taps.iter().enumerate() {
            if t.is_empty() {
                return input(format!("channel {m} has no taps"));
            }
            if t.len() > size {
                return input(format!(
                    "channel {m}: {} taps exceed {size} frames",
                    t.len()
                ));
            }
        }
        Ok(StackedToeplitz { size, taps })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[Vec<f64>] {
        &self.taps
    }

    /// Dense `P × P` block of channel `m`.
    pub fn block(&self, m: usize) -> Vec<Vec<f64>> {
        let a = &self.taps[m];
        (0..self.size)
            .map(|p| {
                (0..self.size)
                    .map(|q| if p >= q && p - q < a.len() { a[p - q] } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitMatrix {
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    StackedToeplitz(StackedToeplitz),
}

impl FitMatrix {
    pub fn dense(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return input("ragged matrix rows");
        }
        Ok(FitMatrix::Dense {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn toeplitz(taps: Vec<Vec<f64>>, size: usize) -> Result<Self> {
        StackedToeplitz::new(taps, size).map(FitMatrix::StackedToeplitz)
    }

    pub fn rows(&self) -> usize {
        match self {
            FitMatrix::Dense { rows, .. } => *rows,
            FitMatrix::StackedToeplitz(t) => t.size * t.taps.len(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            FitMatrix::Dense { cols, .. } => *cols,
            FitMatrix::StackedToeplitz(t) => t.size,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            FitMatrix::Dense { data, .. } => data.iter().all(|&v| v >= 0.0),
            FitMatrix::StackedToeplitz(t) => t.taps.iter().flatten().all(|&v| v >= 0.0),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        match self {
            FitMatrix::Dense { cols, data, .. } => {
                data.chunks(*cols.max(&1)).map(<[f64]>::to_vec).collect()
            }
            FitMatrix::StackedToeplitz(t) => (0..t.taps.len()).flat_map(|m| t.block(m)).collect(),
        }
    }

    /// `C x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        match self {
            FitMatrix::Dense { cols, data, .. } => data
                .chunks(*cols)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
            FitMatrix::StackedToeplitz(t) => {
                let p = t.size;
                let mut y = vec![0.0; p * t.taps.len()];
                for (m, a) in t.taps.iter().enumerate() {
                    let out = &mut y[m * p..(m + 1) * p];
                    for (i, o) in out.iter_mut().enumerate() {
                        let lo = (i + 1).saturating_sub(a.len());
                        *o = (lo..=i).map(|q| a[i - q] * x[q]).sum();
                    }
                }
                y
            }
        }
    }

    /// `Cᵀ y`.
    pub fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows());
        match self {
            FitMatrix::Dense { cols, data, .. } => {
                let mut x = vec![0.0; *cols];
                for (row, yi) in data.chunks(*cols).zip(y) {
                    for (xj, a) in x.iter_mut().zip(row) {
                        *xj += a * yi;
                    }
                }
                x
            }
            FitMatrix::StackedToeplitz(t) => {
                let p = t.size;
                let mut x = vec![0.0; p];
                for (m, a) in t.taps.iter().enumerate() {
                    let seg = &y[m * p..(m + 1) * p];
                    for (q, xq) in x.iter_mut().enumerate() {
                        let hi = (q + a.len()).min(p);
                        *xq += (q..hi).map(|i| a[i - q] * seg[i]).sum::<f64>();
                    }
                }
                x
            }
        }
    }

    /// `CᵀC` as a banded symmetric matrix.
    pub fn gram(&self) -> BandedSym {
        match self {
            FitMatrix::Dense { cols, data, .. } => {
                let n = *cols;
                let mut g = BandedSym::zeros(n, n.saturating_sub(1));
                for i in 0..n {
                    for j in 0..=i {
                        let v = data.chunks(n).map(|r| r[i] * r[j]).sum();
                        g.set(i, j, v);
                    }
                }
                g
            }
            FitMatrix::StackedToeplitz(t) => {
                let p = t.size;
                let qmax = t.taps.iter().map(Vec::len).max().unwrap_or(1);
                let mut g = BandedSym::zeros(p, qmax - 1);
                // G[i + d][i] = Σ_m Σ_k a_k a_{k+d} over rows still inside the block
                for i in 0..p {
                    for d in 0..qmax.min(p - i) {
                        let mut v = 0.0;
                        for a in &t.taps {
                            if d >= a.len() {
                                continue;
                            }
                            let kmax = (a.len() - d).min(p - i - d);
                            v += (0..kmax).map(|k| a[k] * a[k + d]).sum::<f64>();
                        }
                        g.set(i + d, i, v);
                    }
                }
                g
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_gram(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = c[0].len();
        (0..n)
            .map(|i| (0..n).map(|j| c.iter().map(|r| r[i] * r[j]).sum()).collect())
            .collect()
    }

    #[test]
    fn toeplitz_matches_dense_products() {
        let taps = vec![vec![1.0, 0.5, 0.25], vec![0.3, 0.9]];
        let fit = FitMatrix::toeplitz(taps, 5).unwrap();
        let dense = fit.to_dense();
        assert_eq!(dense.len(), 10);
        assert_eq!(dense[1][0], 0.5);
        assert_eq!(dense[0][1], 0.0);
        let as_dense = FitMatrix::dense(dense.clone()).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0, 0.25];
        let y: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).cos()).collect();
        for (a, b) in fit.apply(&x).iter().zip(as_dense.apply(&x)) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in fit.apply_t(&y).iter().zip(as_dense.apply_t(&y)) {
            assert!((a - b).abs() < 1e-14);
        }
        let g = fit.gram();
        let expect = dense_gram(&dense);
        for i in 0..5 {
            for j in 0..5 {
                assert!((g.get(i, j) - expect[i][j]).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn too_many_taps_rejected() {
        assert!(FitMatrix::toeplitz(vec![vec![1.0; 4]], 3).is_err());
        assert!(FitMatrix::dense(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
