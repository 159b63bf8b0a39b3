use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the rough overestimate of the noise SD is obtained for the
/// variance-prior calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaHatMode {
    /// Sample SD of the response.
    Naive,
    /// Residual SD of a least-squares fit of the response on the covariates.
    LinearModel,
}

/// Relative frequencies of the four tree moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs { grow: 0.25, prune: 0.25, change: 0.40, swap: 0.10 }
    }
}

impl MoveProbs {
    fn total(&self) -> f64 {
        self.grow + self.prune + self.change + self.swap
    }

    pub(crate) fn normalized(&self) -> MoveProbs {
        let t = self.total();
        MoveProbs { grow: self.grow / t, prune: self.prune / t, change: self.change / t, swap: self.swap / t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartConfig {
    /// Number of trees.
    pub m: usize,
    /// Base probability that a node splits.
    pub alpha: f64,
    /// Depth penalty of the split probability.
    pub beta: f64,
    /// Leaf-prior spread: the ensemble's prior mean range covers the response
    /// range with `k` standard deviations.
    pub k: f64,
    /// Degrees of freedom of the inverse-gamma variance prior.
    pub nu: f64,
    /// Prior probability that sigma falls below the overestimate `sigma_hat`.
    pub q: f64,
    pub sigma_hat_mode: SigmaHatMode,
    pub burn_in: usize,
    pub n_draws: usize,
    pub thinning: usize,
    pub min_node_size: usize,
    pub proposal: MoveProbs,
    /// Maximum cutpoints per covariate.
    pub n_cutpoints: usize,
    /// Freeze tree structures (leaf values and sigma are still sampled).
    pub fixed_structure: bool,
    /// Hold sigma at this value instead of sampling it.
    pub fixed_sigma: Option<f64>,
}

impl Default for BartConfig {
    fn default() -> Self {
        BartConfig {
            m: 200,
            alpha: 0.95,
            beta: 2.0,
            k: 2.0,
            nu: 3.0,
            q: 0.90,
            sigma_hat_mode: SigmaHatMode::Naive,
            burn_in: 1000,
            n_draws: 1000,
            thinning: 1,
            min_node_size: 5,
            proposal: MoveProbs::default(),
            n_cutpoints: 100,
            fixed_structure: false,
            fixed_sigma: None,
        }
    }
}

impl BartConfig {
    /// Shorter chains, for tests and quick exploratory runs.
    pub fn quick() -> Self {
        BartConfig { m: 50, burn_in: 200, n_draws: 200, ..Default::default() }
    }

    pub fn with_chain(mut self, burn_in: usize, n_draws: usize) -> Self {
        self.burn_in = burn_in;
        self.n_draws = n_draws;
        self
    }

    pub fn with_trees(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    /// `m = 0` is a diagnostic mode that samples only the noise variance.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if self.burn_in < 1 || self.n_draws < 1 {
            return bad("burn_in and n_draws must be at least 1");
        }
        if self.thinning < 1 {
            return bad("thinning must be at least 1");
        }
        if self.n_cutpoints < 1 {
            return bad("n_cutpoints must be at least 1");
        }
        let p = self.proposal;
        if [p.grow, p.prune, p.change, p.swap].iter().any(|v| !(*v >= 0.0)) || !(p.grow > 0.0 && p.prune > 0.0) {
            return bad("move probabilities must be non-negative with grow and prune positive");
        }
        if let Some(s) = self.fixed_sigma {
            if !(s > 0.0) {
                return bad("fixed_sigma must be positive");
            }
        }
        Ok(())
    }
}
