//! Propensity scores `pi(x) = P(Z = 1 | x)` from probit BART.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bart::{fit_probit, BartConfig, ProbitPosterior};
use crate::error::{Error, Result};
use crate::folds::make_folds;
use crate::rng::{derive_indexed, derive_seed};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    pub bart: BartConfig,
    /// Estimates are clipped to `[clip_epsilon, 1 - clip_epsilon]`.
    pub clip_epsilon: f64,
    /// Predict each fold from a model trained on the others.
    pub cross_fit: bool,
    pub folds: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig { bart: BartConfig::default(), clip_epsilon: 0.025, cross_fit: false, folds: 5 }
    }
}

impl PropensityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon >= 0.0 && self.clip_epsilon < 0.5) {
            return Err(Error::Config("clip_epsilon must lie in [0, 0.5)".into()));
        }
        self.bart.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PropensityEstimate<T> {
    pub pi_hat: Vec<T>,
    pub clip_epsilon: f64,
    models: Vec<ProbitPosterior<T>>,
}

pub fn clip<T: Real>(p: f64, eps: f64) -> T {
    lit(p.clamp(eps, 1.0 - eps))
}

impl<T: Real> PropensityEstimate<T> {
    /// Clipped probabilities at new rows; cross-fitted estimates average
    /// their fold models.
    pub fn predict(&self, x_new: &Array2<T>) -> Result<Vec<T>> {
        let mut acc = vec![0.0; x_new.nrows()];
        for m in &self.models {
            for (a, p) in acc.iter_mut().zip(m.predict_prob(x_new)?) {
                *a += p;
            }
        }
        let k = self.models.len() as f64;
        Ok(acc.into_iter().map(|a| clip(a / k, self.clip_epsilon)).collect())
    }
}

pub fn estimate_propensity<T: Real>(
    x: &Array2<T>,
    z: &[bool],
    config: &PropensityConfig,
    seed: u64,
) -> Result<PropensityEstimate<T>> {
    config.validate()?;
    let eps = config.clip_epsilon;
    if !config.cross_fit {
        let model = fit_probit(x, z, &config.bart, derive_seed(seed, "propensity"))?;
        let pi_hat = model.in_sample_prob().iter().map(|&p| clip(p, eps)).collect();
        return Ok(PropensityEstimate { pi_hat, clip_epsilon: eps, models: vec![model] });
    }
    let folds = make_folds(z.len(), config.folds, derive_seed(seed, "propensity.folds"))?;
    let mut pi_hat = vec![T::zero(); z.len()];
    let mut models = Vec::with_capacity(folds.k());
    for f in 0..folds.k() {
        let (train, test) = (folds.complement(f), folds.members(f));
        let zt: Vec<bool> = train.iter().map(|&i| z[i]).collect();
        let model = fit_probit(
            &x.select(Axis(0), &train),
            &zt,
            &config.bart,
            derive_indexed(seed, "propensity.fold", f as u64),
        )
        .map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("fold {f} training set: {m}")),
            other => other,
        })?;
        for (&i, p) in test.iter().zip(model.predict_prob(&x.select(Axis(0), &test))?) {
            pi_hat[i] = clip(p, eps);
        }
        models.push(model);
    }
    Ok(PropensityEstimate { pi_hat, clip_epsilon: eps, models })
}
