//! Per-estimator output: an ATE interval and one CATE interval per unit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{IntervalEstimate, PosteriorDraws};
use crate::scalar::Real;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Wall-clock seconds; excluded from CSV output so files stay reproducible.
    pub runtime_secs: f64,
    /// Kept posterior draws per fitted model.
    pub n_draws: usize,
    /// Number of sum-of-trees models fitted.
    pub n_fits: usize,
    /// Fold of each unit in the final cross-fitted stage, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EffectReport<T> {
    pub estimator: String,
    pub ate: IntervalEstimate<T>,
    pub cate: Vec<IntervalEstimate<T>>,
    pub diagnostics: Diagnostics,
}

impl<T: Real> EffectReport<T> {
    pub fn new(estimator: impl Into<String>, ate: IntervalEstimate<T>, cate: Vec<IntervalEstimate<T>>) -> Self {
        EffectReport { estimator: estimator.into(), ate, cate, diagnostics: Diagnostics::default() }
    }

    /// Summaries of unit-level effect draws; the ATE draw is the per-draw mean over units.
    pub fn from_draws(estimator: impl Into<String>, tau: &PosteriorDraws<T>, level: f64) -> Result<Self> {
        let cate = tau.summarize(level)?;
        let ate_draws = PosteriorDraws::new(
            ndarray::Array2::from_shape_vec((tau.n_draws(), 1), tau.target_means())
                .map_err(|e| Error::Schema(e.to_string()))?,
        );
        let ate = ate_draws.summarize(level)?[0];
        let mut r = EffectReport::new(estimator, ate, cate);
        r.diagnostics.n_draws = tau.n_draws();
        Ok(r)
    }

    pub fn n(&self) -> usize {
        self.cate.len()
    }

    pub fn cate_means(&self) -> Vec<T> {
        self.cate.iter().map(|c| c.mean).collect()
    }

    /// Same estimates, ignoring diagnostics.
    pub fn same_estimates(&self, other: &Self) -> bool {
        self.estimator == other.estimator && self.ate == other.ate && self.cate == other.cate
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat CSV: one `ate` row followed by one row per unit.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["estimator", "target", "mean", "lower", "upper"])?;
        let row = |w: &mut csv::Writer<W>, target: String, iv: &IntervalEstimate<T>| {
            w.write_record([
                self.estimator.clone(),
                target,
                iv.mean.to_string(),
                iv.lower.to_string(),
                iv.upper.to_string(),
            ])
        };
        row(&mut w, "ate".into(), &self.ate)?;
        for (i, iv) in self.cate.iter().enumerate() {
            row(&mut w, i.to_string(), iv)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ate_is_mean_of_unit_draws() {
        let tau = PosteriorDraws::new(array![[1.0, 3.0], [2.0, 4.0], [0.0, 2.0]]);
        let r = EffectReport::from_draws("t", &tau, 0.95).unwrap();
        assert_eq!(r.ate.mean, 2.0);
        assert_eq!(r.cate[0].mean, 1.0);
        assert_eq!(r.cate[1].mean, 3.0);
        assert!(r.ate.lower >= 1.0 && r.ate.upper <= 3.0);
    }

    #[test]
    fn csv_layout() {
        let r =
            EffectReport::new("x", IntervalEstimate::new(1.0, 0.5, 1.5), vec![IntervalEstimate::new(2.0, 1.0, 3.0)]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "estimator,target,mean,lower,upper\nx,ate,1,0.5,1.5\nx,0,2,1,3\n");
        let back: EffectReport<f64> = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
