//! Path-parallel accumulation with a fixed reduction order, so results do
//! not depend on the worker count.

use rayon::prelude::*;

use crate::error::Result;

const CHUNK: usize = 64;

/// Per-index first and second moments accumulated over independent paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl Moments {
    fn zeros(len: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.count as f64
    }

    /// Standard error of the mean at index `i` (zero for a single path).
    pub fn std_error(&self, i: usize) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return 0.0;
        }
        let mean = self.sum[i] / n;
        let var = ((self.sum_sq[i] - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Runs `path(p, values)` for `p in 0..paths`; each call fills `values`
/// (length `len`) and the per-index moments are summed chunk by chunk in path
/// order.
pub fn path_moments<F>(paths: usize, len: usize, path: F) -> Result<Moments>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    let chunks: Vec<Moments> = (0..paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::zeros(len);
            let mut values = vec![0.0; len];
            for p in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                path(p, &mut values)?;
                for (i, v) in values.iter().enumerate() {
                    acc.sum[i] += v;
                    acc.sum_sq[i] += v * v;
                }
                acc.count += 1;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Moments::zeros(len);
    for c in &chunks {
        total.merge(c);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_known_values() {
        let m = path_moments(200, 2, |p, v| {
            v[0] = p as f64;
            v[1] = 1.0;
            Ok(())
        })
        .unwrap();
        assert_eq!(m.count, 200);
        assert_eq!(m.mean(0), 99.5);
        assert_eq!(m.mean(1), 1.0);
        assert_eq!(m.std_error(1), 0.0);
        let var = (0..200).map(|p| (p as f64 - 99.5).powi(2)).sum::<f64>() / 199.0;
        assert!((m.std_error(0) - (var / 200.0).sqrt()).abs() < 1e-12);
    }
}
