//! Symmetric positive definite matrices in skyline (variable band) storage.
//!
//! Row `i` stores the lower-triangle entries from `first[i]` to the diagonal.
//! Cholesky factorization creates no fill outside that envelope, so chain
//! graphs with a handful of long edges factor in near-linear time.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i] ≤ i` is the column of the first stored entry of row `i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "skyline row {i} starts after its diagonal");
            offsets.push(total);
            total += i - f + 1;
        }
        offsets.push(total);
        Self {
            first,
            offsets,
            values: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offsets[i] + j - self.first[i]
    }

    /// Adds to the symmetric entry (i, j); either triangle may be named.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.values[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.first[i] {
            0.0
        } else {
            self.values[self.slot(i, j)]
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    /// In-place `L Lᵀ` factorization.
    pub fn cholesky(mut self) -> Result<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.values[self.slot(i, j)];
                let (oi, oj) = (self.offsets[i] - fi, self.offsets[j] - fj);
                for k in start..j {
                    s -= self.values[oi + k] * self.values[oj + k];
                }
                if j < i {
                    let d = self.values[self.slot(j, j)];
                    let slot = self.slot(i, j);
                    self.values[slot] = s / d;
                } else {
                    let scale = self.values[self.slot(i, i)].abs().max(1e-300);
                    if !(s > 1e-13 * scale) {
                        return Err(Error::SingularInformation);
                    }
                    let slot = self.slot(i, i);
                    self.values[slot] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    l: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = &self.l;
        let n = l.dim();
        let mut y = b.clone();
        for i in 0..n {
            let fi = l.first[i];
            let o = l.offsets[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= l.values[o + k] * y[k];
            }
            y[i] = s / l.values[o + i];
        }
        for i in (0..n).rev() {
            let o = l.offsets[i] - l.first[i];
            y[i] /= l.values[o + i];
            let yi = y[i];
            for k in l.first[i]..i {
                y[k] -= l.values[o + k] * yi;
            }
        }
        y
    }
}
