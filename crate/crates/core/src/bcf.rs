//! Bayesian causal forest: `y = mu(x, pi_hat) + tau(x) z + e`.
//!
//! Two backfitted forests with separate priors. The prognostic forest sees the
//! estimated propensity as an extra covariate; the effect forest is shallower
//! and enters only treated rows. Each forest's leaf scale carries its own
//! hyperprior (half-Cauchy for mu, half-normal for tau) and is updated by
//! griddy Gibbs.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bart::{
    sigma_hat, sigma_prior_from_estimate, BartConfig, CutpointGrid, ForestSampler, LeafPrior, TreePrior,
};
use crate::data::{append_columns, Dataset};
use crate::error::{Error, Result};
use crate::posterior::PosteriorDraws;
use crate::propensity::{estimate_propensity, PropensityConfig};
use crate::report::EffectReport;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::{lit, mean, sample_sd, Real};

/// Median of a standard half-normal: `Phi^-1(0.75)`.
pub const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcfConfig {
    pub mu_forest: BartConfig,
    pub tau_forest: BartConfig,
    /// Median of the mu leaf-scale prior, in SDs of y.
    pub mu_scale_median: f64,
    /// Median of the tau leaf-scale prior, in SDs of y.
    pub tau_scale_median: f64,
    pub scale_grid_points: usize,
    /// Grid span as multiples of the prior median.
    pub scale_grid_range: (f64, f64),
    /// Pin the tau scale (0 removes the effect forest).
    pub fixed_tau_scale: Option<f64>,
    pub fixed_mu_scale: Option<f64>,
    pub propensity: PropensityConfig,
    pub level: f64,
}

impl Default for BcfConfig {
    fn default() -> Self {
        BcfConfig {
            mu_forest: BartConfig { m: 200, alpha: 0.95, beta: 2.0, ..Default::default() },
            tau_forest: BartConfig { m: 50, alpha: 0.25, beta: 3.0, ..Default::default() },
            mu_scale_median: 2.0,
            tau_scale_median: 1.0,
            scale_grid_points: 64,
            scale_grid_range: (1e-3, 1e1),
            fixed_tau_scale: None,
            fixed_mu_scale: None,
            propensity: PropensityConfig::default(),
            level: 0.95,
        }
    }
}

impl BcfConfig {
    pub fn quick() -> Self {
        let d = BcfConfig::default();
        BcfConfig {
            mu_forest: BartConfig { m: 50, burn_in: 200, n_draws: 200, ..d.mu_forest },
            tau_forest: BartConfig { m: 20, burn_in: 200, n_draws: 200, ..d.tau_forest },
            propensity: PropensityConfig { bart: BartConfig::quick(), ..Default::default() },
            ..d
        }
    }

    /// Chain lengths follow the mu-forest settings.
    pub fn with_chain(mut self, burn_in: usize, n_draws: usize) -> Self {
        self.mu_forest = self.mu_forest.with_chain(burn_in, n_draws);
        self.tau_forest = self.tau_forest.with_chain(burn_in, n_draws);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mu_forest.validate()?;
        self.tau_forest.validate()?;
        self.propensity.validate()?;
        if !(self.mu_scale_median > 0.0 && self.tau_scale_median > 0.0) {
            return Err(Error::Config("scale medians must be positive".into()));
        }
        let (lo, hi) = self.scale_grid_range;
        if self.scale_grid_points < 2 || !(lo > 0.0 && hi > lo) {
            return Err(Error::Config("scale grid needs >= 2 points over a positive range".into()));
        }
        if self.mu_forest.m == 0 {
            return Err(Error::Config("the mu forest needs at least one tree".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalePrior {
    HalfCauchy { scale: f64 },
    HalfNormal { scale: f64 },
}

impl ScalePrior {
    fn log_density(&self, s: f64) -> f64 {
        match *self {
            ScalePrior::HalfCauchy { scale } => -(1.0 + (s / scale).powi(2)).ln(),
            ScalePrior::HalfNormal { scale } => -0.5 * (s / scale).powi(2),
        }
    }
}

/// Log-spaced grid of `k` points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect()
}

/// Draws a forest's leaf scale `s` from its grid posterior: leaves are
/// iid `N(0, s^2 / m)`. The `+ ln s` term is the log-grid spacing.
fn draw_scale<R: Rng>(grid: &[f64], prior: ScalePrior, leaves: &[f64], m: usize, rng: &mut R) -> f64 {
    let ss: f64 = leaves.iter().map(|v| v * v).sum();
    let k = leaves.len() as f64;
    let mf = m as f64;
    let logw: Vec<f64> = grid
        .iter()
        .map(|&s| {
            let var = s * s / mf;
            prior.log_density(s) + s.ln() - 0.5 * k * var.ln() - 0.5 * ss / var
        })
        .collect();
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (s, wi) in grid.iter().zip(&w) {
        u -= wi;
        if u <= 0.0 {
            return *s;
        }
    }
    *grid.last().unwrap()
}

/// In-sample draws of each component, in response units.
#[derive(Debug, Clone)]
pub struct BcfRun<T> {
    pub report: EffectReport<T>,
    /// Prognostic part including the response mean.
    pub mu: PosteriorDraws<T>,
    pub tau: PosteriorDraws<T>,
    /// Fitted values recorded by the sampler.
    pub fitted: PosteriorDraws<T>,
    pub pi_hat: Vec<T>,
    pub mu_scale: Vec<f64>,
    pub tau_scale: Vec<f64>,
    pub sigma: Vec<T>,
    /// Median tree depth per forest, averaged over kept draws.
    pub median_depth_mu: f64,
    pub median_depth_tau: f64,
}

fn median_usize(mut v: Vec<usize>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

pub fn bcf_fit<T: Real>(ds: &Dataset<T>, config: &BcfConfig, seed: u64) -> Result<EffectReport<T>> {
    Ok(bcf_run(ds, config, seed)?.report)
}

pub fn bcf_run<T: Real>(ds: &Dataset<T>, config: &BcfConfig, seed: u64) -> Result<BcfRun<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let n = ds.n();
    let n1 = ds.n_treated();
    if n1 == 0 || n1 == n {
        return Err(Error::Degenerate("every unit is in one arm; the effect forest has nothing to fit".into()));
    }
    let ps = estimate_propensity(ds.x(), ds.z(), &config.propensity, derive_seed(seed, "bcf.propensity"))?;
    let x_mu = append_columns(ds.x(), &[&ps.pi_hat]);

    let y_mean = mean(ds.y());
    let y_sd = sample_sd(ds.y());
    if !(y_sd > T::zero()) {
        return Err(Error::Calibration("response is constant".into()));
    }
    let ys: Vec<T> = ds.y().iter().map(|&v| (v - y_mean) / y_sd).collect();
    let zw: Vec<T> = ds.z_values();

    let mc = &config.mu_forest;
    let tc = &config.tau_forest;
    let mu_median = config.mu_scale_median;
    let tau_median = config.tau_scale_median;
    let mu_prior = ScalePrior::HalfCauchy { scale: mu_median };
    let tau_prior = ScalePrior::HalfNormal { scale: tau_median / HALF_NORMAL_MEDIAN };
    let (glo, ghi) = config.scale_grid_range;
    let mu_grid = log_grid(glo * mu_median, ghi * mu_median, config.scale_grid_points);
    let tau_grid = log_grid(glo * tau_median, ghi * tau_median, config.scale_grid_points);
    let mut mu_scale = config.fixed_mu_scale.unwrap_or(mu_median);
    let mut tau_scale = config.fixed_tau_scale.unwrap_or(tau_median);
    let use_tau = tau_scale > 0.0 && tc.m > 0;
    let leaf = |s: f64, m: usize| LeafPrior { mu_mu: T::zero(), sigma_mu: lit(s / (m as f64).sqrt()) };

    let mut mu = ForestSampler::new(
        &x_mu,
        CutpointGrid::from_data(&x_mu, mc.n_cutpoints),
        mc.m,
        TreePrior::from(mc),
        leaf(mu_scale, mc.m),
        None,
    )?;
    let mut tau = if use_tau {
        Some(ForestSampler::new(
            ds.x(),
            CutpointGrid::from_data(ds.x(), tc.n_cutpoints),
            tc.m,
            TreePrior::from(tc),
            leaf(tau_scale, tc.m),
            Some(zw.clone()),
        )?)
    } else {
        None
    };

    let sp = sigma_prior_from_estimate(sigma_hat(ds.x(), &ys, mc.sigma_hat_mode)?, mc.nu, mc.q)?;
    let nu = sp.nu.as_f64();
    let nu_lambda = nu * sp.lambda.as_f64();
    let mut sigma2 = mc.fixed_sigma.map(|s| (s / y_sd.as_f64()).powi(2)).unwrap_or(sp.lambda.as_f64());

    let mut rng = rng_from_seed(derive_seed(seed, "bcf.chain"));
    let total = mc.burn_in + mc.n_draws * mc.thinning;
    let keep = mc.n_draws;
    let (mut mu_d, mut tau_d, mut fit_d) =
        (Array2::zeros((keep, n)), Array2::zeros((keep, n)), Array2::zeros((keep, n)));
    let (mut mu_sc, mut tau_sc, mut sig) =
        (Vec::with_capacity(keep), Vec::with_capacity(keep), Vec::with_capacity(keep));
    let (mut depth_mu, mut depth_tau) = (0.0, 0.0);
    let mut target = vec![T::zero(); n];
    let mut s = 0;
    for it in 0..total {
        let tau_fit = tau.as_ref().map(|t| t.fitted()).unwrap_or_else(|| vec![T::zero(); n]);
        for i in 0..n {
            target[i] = ys[i] - tau_fit[i];
        }
        mu.sweep(&target, lit(sigma2), it, &mut rng)?;
        if let Some(t) = tau.as_mut() {
            let mf = mu.function_values();
            for i in 0..n {
                target[i] = ys[i] - mf[i];
            }
            t.sweep(&target, lit(sigma2), it, &mut rng)?;
        }
        if config.fixed_mu_scale.is_none() {
            let lv: Vec<f64> = mu.leaf_values().iter().map(|v| v.as_f64()).collect();
            mu_scale = draw_scale(&mu_grid, mu_prior, &lv, mc.m, &mut rng);
            mu.set_leaf_prior(leaf(mu_scale, mc.m));
        }
        if let Some(t) = tau.as_mut() {
            if config.fixed_tau_scale.is_none() {
                let lv: Vec<f64> = t.leaf_values().iter().map(|v| v.as_f64()).collect();
                tau_scale = draw_scale(&tau_grid, tau_prior, &lv, tc.m, &mut rng);
                t.set_leaf_prior(leaf(tau_scale, tc.m));
            }
        }
        let mf = mu.function_values();
        let tf = tau.as_ref().map(|t| t.fitted()).unwrap_or_else(|| vec![T::zero(); n]);
        if mc.fixed_sigma.is_none() {
            let ssr: f64 = (0..n).map(|i| (ys[i] - mf[i] - tf[i]).as_f64().powi(2)).sum();
            sigma2 = crate::bart::draw_inverse_gamma(0.5 * (nu + n as f64), 0.5 * (nu_lambda + ssr), &mut rng)?;
        }
        if it >= mc.burn_in && (it - mc.burn_in).is_multiple_of(mc.thinning) {
            let tv = tau.as_ref().map(|t| t.function_values().to_vec()).unwrap_or_else(|| vec![T::zero(); n]);
            for i in 0..n {
                mu_d[[s, i]] = y_mean + y_sd * mf[i];
                tau_d[[s, i]] = y_sd * tv[i];
                fit_d[[s, i]] = y_mean + y_sd * (mf[i] + tf[i]);
            }
            mu_sc.push(mu_scale);
            tau_sc.push(if use_tau { tau_scale } else { 0.0 });
            sig.push(lit::<T>(sigma2.sqrt()) * y_sd);
            depth_mu += median_usize(mu.tree_depths());
            depth_tau += tau.as_ref().map(|t| median_usize(t.tree_depths())).unwrap_or(0.0);
            s += 1;
        }
    }
    let tau_draws = PosteriorDraws::new(tau_d);
    let mut report = EffectReport::from_draws("bcf", &tau_draws, config.level)?;
    report.diagnostics.n_fits = if config.propensity.cross_fit { config.propensity.folds + 1 } else { 2 };
    report.diagnostics.runtime_secs = start.elapsed().as_secs_f64();
    let kept = keep.max(1) as f64;
    Ok(BcfRun {
        report,
        mu: PosteriorDraws::new(mu_d),
        tau: tau_draws,
        fitted: PosteriorDraws::new(fit_d),
        pi_hat: ps.pi_hat,
        mu_scale: mu_sc,
        tau_scale: tau_sc,
        sigma: sig,
        median_depth_mu: depth_mu / kept,
        median_depth_tau: depth_tau / kept,
    })
}
