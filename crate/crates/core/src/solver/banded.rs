//! Symmetric banded matrices with an in-place Cholesky factorization.

/// Symmetric `n × n` matrix with half-bandwidth `bw`, lower band stored row
/// by row: row `i` holds columns `i − bw ..= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        BandedSym {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Sets `(i, j)` and its mirror. Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "({i}, {j}) outside bandwidth {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        assert_eq!(d.len(), self.n);
        for (i, v) in d.iter().enumerate() {
            let k = self.idx(i, i);
            self.data[k] += v;
        }
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    /// `self · factor`, keeping the band.
    pub fn scaled(&self, factor: f64) -> Self {
        BandedSym {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let v = self.data[self.idx(i, j)];
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// Cholesky factor `L` (same band layout), or `None` when a pivot is not
    /// strictly positive.
    pub fn cholesky(&self) -> Option<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| i * (bw + 1) + bw - (i - j);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut sum = l[at(i, j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    sum -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[at(i, i)] = sum.sqrt();
                } else {
                    l[at(i, j)] = sum / l[at(j, j)];
                }
            }
        }
        Some(BandedCholesky { n, bw, data: l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + self.bw - (i - j)]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut sum = y[i];
            for (k, yk) in y.iter().enumerate().take(i).skip(lo) {
                sum -= self.l(i, k) * yk;
            }
            y[i] = sum / self.l(i, i);
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut sum = y[i];
            for k in i + 1..=hi {
                sum -= self.l(k, i) * y[k];
            }
            y[i] = sum / self.l(i, i);
        }
        y
    }
}
