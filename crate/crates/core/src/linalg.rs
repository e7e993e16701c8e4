//! Banded LU without pivoting for the diagonally dominant systems of the
//! solver. The band is detected from the dense input.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    /// Row `i` stores columns `i − lower ..= i + upper`.
    band: Vec<f64>,
    condition: f64,
}

/// `(lower, upper)` bandwidths of a dense row-major matrix.
pub fn bandwidths(matrix: &[f64], n: usize) -> (usize, usize) {
    let mut lo = 0;
    let mut up = 0;
    for i in 0..n {
        let row = &matrix[i * n..(i + 1) * n];
        if let Some(first) = row.iter().position(|&v| v != 0.0) {
            lo = lo.max(i.saturating_sub(first));
        }
        if let Some(last) = row.iter().rposition(|&v| v != 0.0) {
            up = up.max(last.saturating_sub(i));
        }
    }
    (lo, up)
}

impl BandedLu {
    pub fn factor(matrix: &[f64], n: usize) -> Result<Self> {
        assert_eq!(matrix.len(), n * n, "matrix is not n × n");
        let (lower, upper) = bandwidths(matrix, n);
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            let j0 = i.saturating_sub(lower);
            let j1 = (i + upper).min(n - 1);
            for j in j0..=j1 {
                band[i * width + (j + lower - i)] = matrix[i * n + j];
            }
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let pivot = band[k * width + lower];
            let p = pivot.abs();
            if !(p > 1e-14 * scale) || !pivot.is_finite() {
                return Err(Error::Singular {
                    row: k,
                    condition: if p > 0.0 { max_pivot.max(p) / p } else { f64::INFINITY },
                });
            }
            min_pivot = min_pivot.min(p);
            max_pivot = max_pivot.max(p);
            let i_end = (k + lower).min(n - 1);
            let j_end = (k + upper).min(n - 1);
            for i in k + 1..=i_end {
                let ik = i * width + (k + lower - i);
                let l = band[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[ik] = l;
                for j in k + 1..=j_end {
                    band[i * width + (j + lower - i)] -= l * band[k * width + (j + lower - k)];
                }
            }
        }
        Ok(BandedLu {
            n,
            lower,
            upper,
            band,
            condition: max_pivot / min_pivot,
        })
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    /// Ratio of extreme pivots; a cheap conditioning indicator.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w = self.lower + self.upper + 1;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(self.lower);
            let mut s = x[i];
            for j in j0..i {
                s -= self.band[i * w + (j + self.lower - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let j1 = (i + self.upper).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=j1 {
                s -= self.band[i * w + (j + self.lower - i)] * x[j];
            }
            x[i] = s / self.band[i * w + self.lower];
        }
        x
    }
}
