//! Probit BART for a binary response via truncated-normal data augmentation.
//!
//! `P(z = 1 | x) = Phi(offset + f(x))`; the latent `z* ~ N(offset + f(x), 1)`
//! is drawn given the observed sign, and the forest is fitted to `z* - offset`
//! with the noise variance held at one.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::BartConfig;
use super::cutpoints::CutpointGrid;
use super::prior::LeafPrior;
use super::sampler::{ForestSampler, TreePrior};
use super::tree::FlatForest;
use super::{check_schema, default_columns};
use crate::error::{Error, Result};
use crate::posterior::PosteriorDraws;
use crate::rng::rng_from_seed;
use crate::scalar::{lit, Real};
use crate::stats::{normal_cdf, normal_quantile, truncated_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ProbitPosterior<T> {
    forests: Vec<FlatForest<T>>,
    offset: f64,
    columns: Vec<String>,
    /// Posterior-mean probability at each training row.
    in_sample_prob: Vec<f64>,
}

impl<T: Real> ProbitPosterior<T> {
    pub fn n_draws(&self) -> usize {
        self.forests.len()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn in_sample_prob(&self) -> &[f64] {
        &self.in_sample_prob
    }

    /// Probability draws: one row per kept draw.
    pub fn predict_prob_draws(&self, x_new: &Array2<T>) -> Result<PosteriorDraws<T>> {
        check_schema(&self.columns, x_new.ncols(), None)?;
        let rows: Vec<Vec<T>> = x_new.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut out = Array2::zeros((self.forests.len(), rows.len()));
        for (s, f) in self.forests.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                out[[s, i]] = lit(normal_cdf(self.offset + f.predict_row(row).as_f64()));
            }
        }
        Ok(PosteriorDraws::new(out))
    }

    /// Posterior-mean probability at each row of `x_new`.
    pub fn predict_prob(&self, x_new: &Array2<T>) -> Result<Vec<f64>> {
        Ok(self.predict_prob_draws(x_new)?.mean().into_iter().map(|v| v.as_f64()).collect())
    }
}

pub fn fit_probit<T: Real>(x: &Array2<T>, z: &[bool], config: &BartConfig, seed: u64) -> Result<ProbitPosterior<T>> {
    config.validate()?;
    let n = z.len();
    if x.nrows() != n {
        return Err(Error::Schema(format!("x has {} rows, z has {}", x.nrows(), n)));
    }
    let n1 = z.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == n {
        return Err(Error::Degenerate("binary response has a single class".into()));
    }
    let offset = normal_quantile(n1 as f64 / n as f64);
    let m = config.m.max(1);
    let leaf_prior = LeafPrior { mu_mu: T::zero(), sigma_mu: lit(3.0 / (config.k * (m as f64).sqrt())) };
    let grid = CutpointGrid::from_data(x, config.n_cutpoints);
    let mut forest = ForestSampler::new(x, grid, config.m, TreePrior::from(config), leaf_prior, None)?
        .with_fixed_structure(config.fixed_structure);
    let mut rng = rng_from_seed(seed);
    let mut latent = vec![T::zero(); n];
    let total = config.burn_in + config.n_draws * config.thinning;
    let mut forests = Vec::with_capacity(config.n_draws);
    let mut prob_sum = vec![0.0; n];
    for it in 0..total {
        let f = forest.function_values();
        for i in 0..n {
            let mean = offset + f[i].as_f64();
            latent[i] = lit(truncated_normal(mean, 0.0, z[i], &mut rng) - offset);
        }
        forest.sweep(&latent, T::one(), it, &mut rng)?;
        if it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thinning) {
            for (acc, &fi) in prob_sum.iter_mut().zip(forest.function_values()) {
                *acc += normal_cdf(offset + fi.as_f64());
            }
            forests.push(forest.snapshot());
        }
    }
    let k = forests.len() as f64;
    Ok(ProbitPosterior {
        forests,
        offset,
        columns: default_columns(x.ncols()),
        in_sample_prob: prob_sum.into_iter().map(|s| s / k).collect(),
    })
}
