//! Symmetric banded linear algebra for the tracker's normal equations.
//!
//! The Gauss-Newton system couples each knot only to its neighbors two
//! knots away, so the Hessian approximation is a band matrix whose half
//! bandwidth is a small multiple of the per-knot dimension. A packed
//! Cholesky keeps the solve linear in the horizon length.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BandError {
    #[error("matrix not positive definite (pivot at row {0})")]
    NotPositiveDefinite(usize),
}

/// Symmetric matrix stored as its lower band: entry (i, j) with
/// 0 <= i - j <= hb lives at `data[j * (hb + 1) + (i - j)]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    hb: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, hb: usize) -> Self {
        BandMatrix { n, hb, data: vec![0.0; n * (hb + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.hb
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i - j <= self.hb && i < self.n);
        j * (self.hb + 1) + (i - j)
    }

    /// Read entry (i, j); symmetric access, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.hb {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Accumulate into entry (i, j). Only the lower triangle is stored;
    /// callers must pass i >= j.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.data[at] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let at = self.idx(i, j);
        self.data[at] = v;
    }

    pub fn reset(&mut self) {
        self.data.fill(0.0);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.idx(i, i)]).collect()
    }

    /// Add `v[i]` to each diagonal entry.
    pub fn add_diagonal(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let at = self.idx(i, i);
            self.data[at] += v[i];
        }
    }

    /// In-place Cholesky A = L·Lᵀ within the band. On success the storage
    /// holds L; the input is consumed either way.
    pub fn cholesky(mut self) -> Result<BandCholesky, BandError> {
        let (n, hb) = (self.n, self.hb);
        for j in 0..n {
            let start = j.saturating_sub(hb);
            let mut d = self.data[self.idx(j, j)];
            for k in start..j {
                let l = self.data[self.idx(j, k)];
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(BandError::NotPositiveDefinite(j));
            }
            let djj = d.sqrt();
            let at = self.idx(j, j);
            self.data[at] = djj;
            let last = (j + hb).min(n - 1);
            for i in j + 1..=last {
                let mut s = self.data[self.idx(i, j)];
                let kstart = start.max(i.saturating_sub(hb));
                for k in kstart..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let at = self.idx(i, j);
                self.data[at] = s / djj;
            }
        }
        Ok(BandCholesky { l: self })
    }
}

/// Lower-triangular band factor.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    /// Solve A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, hb) = (self.l.n, self.l.hb);
        assert_eq!(b.len(), n);
        for i in 0..n {
            let start = i.saturating_sub(hb);
            let mut s = b[i];
            for k in start..i {
                s -= self.l.data[self.l.idx(i, k)] * b[k];
            }
            b[i] = s / self.l.data[self.l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let last = (i + hb).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=last {
                s -= self.l.data[self.l.idx(k, i)] * b[k];
            }
            b[i] = s / self.l.data[self.l.idx(i, i)];
        }
    }
}
