use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Candidate split values per covariate. A rule `(v, c)` sends `x[v] <= cuts[v][c]` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CutpointGrid<T> {
    pub cuts: Vec<Vec<T>>,
}

impl<T: Real> CutpointGrid<T> {
    /// Every distinct observed value except the largest when there are few of
    /// them, otherwise `max_cuts` empirical quantiles. Binary columns get a
    /// single cut.
    pub fn from_data(x: &Array2<T>, max_cuts: usize) -> Self {
        let cuts = (0..x.ncols())
            .map(|j| {
                let mut col: Vec<T> = x.column(j).to_vec();
                col.sort_by(|a, b| a.partial_cmp(b).expect("finite covariates"));
                let mut uniq = col.clone();
                uniq.dedup();
                if uniq.len() <= 1 {
                    return Vec::new();
                }
                let top = *uniq.last().unwrap();
                if uniq.len() - 1 <= max_cuts {
                    uniq.pop();
                    return uniq;
                }
                let n = col.len();
                let mut grid: Vec<T> = (1..=max_cuts)
                    .map(|c| {
                        let pos = c as f64 / (max_cuts + 1) as f64 * (n - 1) as f64;
                        col[pos.floor() as usize]
                    })
                    .filter(|&v| v < top)
                    .collect();
                grid.dedup();
                grid
            })
            .collect();
        CutpointGrid { cuts }
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    /// Covariates with at least one cut.
    pub fn splittable(&self) -> Vec<usize> {
        (0..self.cuts.len()).filter(|&v| !self.cuts[v].is_empty()).collect()
    }

    #[inline]
    pub fn bin(&self, v: usize, value: T) -> u16 {
        self.cuts[v].partition_point(|&c| c < value) as u16
    }

    pub fn bin_matrix(&self, x: &Array2<T>) -> BinnedDesign {
        let (n, d) = x.dim();
        let mut bins = vec![0u16; n * d];
        for v in 0..d {
            for i in 0..n {
                bins[v * n + i] = self.bin(v, x[[i, v]]);
            }
        }
        BinnedDesign { n, d, bins }
    }
}

/// Column-major bin indices: unit `i` goes left under rule `(v, c)` iff `bin(v, i) <= c`.
#[derive(Debug, Clone)]
pub struct BinnedDesign {
    pub n: usize,
    pub d: usize,
    bins: Vec<u16>,
}

impl BinnedDesign {
    #[inline]
    pub fn bin(&self, v: usize, i: usize) -> u16 {
        self.bins[v * self.n + i]
    }

    #[inline]
    pub fn column(&self, v: usize) -> &[u16] {
        &self.bins[v * self.n..(v + 1) * self.n]
    }
}
