//! Posterior draws of functionals and their interval summaries.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{count, Real};

/// Point estimate with an interval; `lower <= mean <= upper` for draw summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IntervalEstimate<T> {
    pub mean: T,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> IntervalEstimate<T> {
    pub fn new(mean: T, lower: T, upper: T) -> Self {
        IntervalEstimate { mean, lower, upper }
    }

    pub fn length(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, v: T) -> bool {
        self.lower <= v && v <= self.upper
    }

    /// Stretches the interval about its mean by `factor`.
    pub fn inflate(&self, factor: T) -> Self {
        IntervalEstimate {
            mean: self.mean,
            lower: self.mean - factor * (self.mean - self.lower),
            upper: self.mean + factor * (self.upper - self.mean),
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> IntervalEstimate<U> {
        IntervalEstimate { mean: f(self.mean), lower: f(self.lower), upper: f(self.upper) }
    }
}

/// Draws x targets matrix of posterior function evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PosteriorDraws<T> {
    pub values: Array2<T>,
}

impl<T: Real> PosteriorDraws<T> {
    pub fn new(values: Array2<T>) -> Self {
        PosteriorDraws { values }
    }

    pub fn n_draws(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.values.ncols()
    }

    /// Posterior mean per target.
    pub fn mean(&self) -> Vec<T> {
        let n = count::<T>(self.n_draws());
        self.values.axis_iter(Axis(1)).map(|c| c.iter().copied().fold(T::zero(), |a, b| a + b) / n).collect()
    }

    /// Per-draw average over targets (e.g. sample-average effect draws).
    pub fn target_means(&self) -> Vec<T> {
        let n = count::<T>(self.n_targets());
        self.values.axis_iter(Axis(0)).map(|r| r.iter().copied().fold(T::zero(), |a, b| a + b) / n).collect()
    }

    /// Element-wise `self - other`; draws are paired by index.
    pub fn difference(&self, other: &PosteriorDraws<T>) -> Result<PosteriorDraws<T>> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Schema(format!(
                "draw matrices differ: {:?} vs {:?}",
                self.values.dim(),
                other.values.dim()
            )));
        }
        Ok(PosteriorDraws { values: &self.values - &other.values })
    }

    pub fn summarize(&self, level: f64) -> Result<Vec<IntervalEstimate<T>>> {
        summarize(self, level)
    }
}

/// Linear-interpolation percentile of sorted data (`p` in [0, 1]).
pub fn percentile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = crate::scalar::lit::<T>(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn interval_from_samples<T: Real>(samples: &[T], level: f64) -> IntervalEstimate<T> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mean = s.iter().copied().fold(T::zero(), |a, b| a + b) / count(s.len());
    let tail = (1.0 - level) / 2.0;
    let lower = percentile_sorted(&s, tail).min(mean);
    let upper = percentile_sorted(&s, 1.0 - tail).max(mean);
    IntervalEstimate { mean, lower, upper }
}

/// Posterior mean and equal-tailed interval per target.
pub fn summarize<T: Real>(draws: &PosteriorDraws<T>, level: f64) -> Result<Vec<IntervalEstimate<T>>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level must lie in (0, 1), got {level}")));
    }
    if draws.n_draws() < 2 {
        return Err(Error::Precondition("need at least two draws to form an interval".into()));
    }
    Ok(draws.values.axis_iter(Axis(1)).map(|c| interval_from_samples(&c.to_vec(), level)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_draws_collapse() {
        let d = PosteriorDraws::new(Array2::from_elem((10, 2), 1.5f64));
        for iv in summarize(&d, 0.95).unwrap() {
            assert_eq!((iv.mean, iv.lower, iv.upper), (1.5, 1.5, 1.5));
        }
    }

    #[test]
    fn percentile_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        // shuffled order must not matter
        let mut col = v.clone();
        col.reverse();
        let d = PosteriorDraws::new(Array2::from_shape_vec((100, 1), col).unwrap());
        let iv = summarize(&d, 0.95).unwrap()[0];
        // h = 0.025 * 99 = 2.475 -> 3 + 0.475; h = 0.975 * 99 = 96.525 -> 97 + 0.525
        assert!((iv.lower - 3.475).abs() < 1e-12);
        assert!((iv.upper - 97.525).abs() < 1e-12);
        assert!((iv.mean - 50.5).abs() < 1e-12);
    }

    #[test]
    fn narrower_level_is_nested() {
        let v: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let d = PosteriorDraws::new(Array2::from_shape_vec((200, 1), v).unwrap());
        let a = summarize(&d, 0.5).unwrap()[0];
        let b = summarize(&d, 0.95).unwrap()[0];
        assert!(b.lower <= a.lower && a.upper <= b.upper);
    }

    #[test]
    fn inflation_arithmetic() {
        let iv = IntervalEstimate::new(2.0, 1.0, 3.0).inflate(1.5);
        assert_eq!((iv.lower, iv.upper), (0.5, 3.5));
        let same = IntervalEstimate::new(2.0, 1.2, 3.7).inflate(1.0);
        assert_eq!(same, IntervalEstimate::new(2.0, 1.2, 3.7));
    }

    #[test]
    fn rejects_bad_level_and_single_draw() {
        let d = PosteriorDraws::new(Array2::from_elem((1, 1), 0.0f64));
        assert!(summarize(&d, 0.95).is_err());
        let d2 = PosteriorDraws::new(Array2::from_elem((3, 1), 0.0f64));
        assert!(summarize(&d2, 1.0).is_err());
    }
}
