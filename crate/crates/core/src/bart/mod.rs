//! Bayesian additive regression trees.
//!
//! [`fit`] standardizes the response to `[-0.5, 0.5]`, calibrates the leaf and
//! variance priors on that scale, and runs the backfitting sampler. Kept draws
//! are stored as compact forests so the posterior can predict at new inputs.

mod config;
mod cutpoints;
mod prior;
mod probit;
mod sampler;
mod tree;

pub use config::{BartConfig, MoveProbs, SigmaHatMode};
pub use cutpoints::{BinnedDesign, CutpointGrid};
pub use prior::{
    calibrate_priors, leaf_prior_from_range, sigma_hat, sigma_prior_from_estimate, split_prior_prob, LeafPrior,
    SigmaPrior,
};
pub use probit::{fit_probit, ProbitPosterior};
pub use sampler::{ForestSampler, MoveStats, TreePrior};
pub use tree::{FlatForest, FlatNode};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::PosteriorDraws;
use crate::rng::rng_from_seed;
use crate::scalar::{lit, Real};

/// Kept posterior draws of a fitted sum-of-trees model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BartPosterior<T> {
    forests: Vec<FlatForest<T>>,
    sigma: Vec<T>,
    /// `y = shift + scale * f` maps the standardized fit back to response units.
    shift: T,
    scale: T,
    columns: Vec<String>,
    leaf_prior: LeafPrior<T>,
    sigma_prior: SigmaPrior<T>,
    in_sample: PosteriorDraws<T>,
    move_stats: [u64; 8],
}

/// Draws `sigma^2 ~ IG(shape, rate)`.
pub(crate) fn draw_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Calibration(format!("inverse-gamma draw: {e}")))?;
    Ok(1.0 / g.sample(rng))
}

pub(crate) fn default_columns(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Checks a prediction design against the training schema.
pub(crate) fn check_schema(expected: &[String], got: usize, names: Option<&[String]>) -> Result<()> {
    if let Some(names) = names {
        if let Some(miss) = expected.iter().find(|c| !names.contains(c)) {
            return Err(Error::MissingColumn(miss.clone()));
        }
        if let Some(extra) = names.iter().find(|c| !expected.contains(c)) {
            return Err(Error::Schema(format!("unexpected column `{extra}`")));
        }
        if names != expected {
            return Err(Error::Schema(format!("columns out of order: expected {expected:?}")));
        }
    }
    if got < expected.len() {
        return Err(Error::MissingColumn(expected[got].clone()));
    }
    if got > expected.len() {
        return Err(Error::Schema(format!("unexpected column at position {} (training had {})", got, expected.len())));
    }
    Ok(())
}

impl<T: Real> BartPosterior<T> {
    pub fn n_draws(&self) -> usize {
        self.forests.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Residual SD draws in response units.
    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn forests(&self) -> &[FlatForest<T>] {
        &self.forests
    }

    /// Priors on the standardized scale.
    pub fn priors(&self) -> (LeafPrior<T>, SigmaPrior<T>) {
        (self.leaf_prior, self.sigma_prior)
    }

    /// `(shift, scale)` of the response standardization.
    pub fn standardization(&self) -> (T, T) {
        (self.shift, self.scale)
    }

    /// Fitted draws at the training rows, collected during sampling.
    pub fn in_sample(&self) -> &PosteriorDraws<T> {
        &self.in_sample
    }

    /// Acceptance counts: proposed then accepted for grow, prune, change, swap.
    pub fn move_counts(&self) -> [u64; 8] {
        self.move_stats
    }

    /// One row per kept draw, one column per row of `x_new`.
    pub fn predict_draws(&self, x_new: &Array2<T>) -> Result<PosteriorDraws<T>> {
        check_schema(&self.columns, x_new.ncols(), None)?;
        Ok(self.predict_unchecked(x_new))
    }

    /// As [`Self::predict_draws`], also checking the column names.
    pub fn predict_named(&self, x_new: &Array2<T>, names: &[String]) -> Result<PosteriorDraws<T>> {
        check_schema(&self.columns, x_new.ncols(), Some(names))?;
        Ok(self.predict_unchecked(x_new))
    }

    fn predict_unchecked(&self, x_new: &Array2<T>) -> PosteriorDraws<T> {
        let n = x_new.nrows();
        let rows: Vec<Vec<T>> = x_new.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut out = Array2::zeros((self.forests.len(), n));
        for (s, f) in self.forests.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                out[[s, i]] = self.shift + self.scale * f.predict_row(row);
            }
        }
        PosteriorDraws::new(out)
    }

    /// Posterior-mean prediction.
    pub fn predict_mean(&self, x_new: &Array2<T>) -> Result<Vec<T>> {
        Ok(self.predict_draws(x_new)?.mean())
    }

    /// Contribution of tree `j` in draw `s` at each row, in response units
    /// (excluding the shift).
    pub fn tree_contribution(&self, draw: usize, tree: usize, x_new: &Array2<T>) -> Vec<T> {
        let f = &self.forests[draw];
        x_new.rows().into_iter().map(|r| self.scale * f.tree_value(tree, &r.to_vec())).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_inputs<T: Real>(x: &Array2<T>, y: &[T]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Schema(format!("x has {} rows, y has {}", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::Calibration("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite entries in x or y".into()));
    }
    Ok(())
}

/// Fits BART to `(x, y)`; deterministic given `seed`.
pub fn fit<T: Real>(x: &Array2<T>, y: &[T], config: &BartConfig, seed: u64) -> Result<BartPosterior<T>> {
    fit_named(x, y, default_columns(x.ncols()), config, seed)
}

/// [`fit`] with explicit covariate names recorded in the training schema.
pub fn fit_named<T: Real>(
    x: &Array2<T>,
    y: &[T],
    columns: Vec<String>,
    config: &BartConfig,
    seed: u64,
) -> Result<BartPosterior<T>> {
    config.validate()?;
    check_inputs(x, y)?;
    if columns.len() != x.ncols() {
        return Err(Error::Schema(format!("{} column names for {} covariates", columns.len(), x.ncols())));
    }
    let (lo, hi) = y.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(Error::Calibration("response is constant".into()));
    }
    let half: T = lit(0.5);
    let shift = (lo + hi) * half;
    let scale = hi - lo;
    let ys: Vec<T> = y.iter().map(|&v| (v - shift) / scale).collect();
    let (leaf_prior, sigma_prior) = calibrate_priors(x, &ys, config)?;

    let grid = CutpointGrid::from_data(x, config.n_cutpoints);
    let mut forest = ForestSampler::new(x, grid, config.m, TreePrior::from(config), leaf_prior, None)?
        .with_fixed_structure(config.fixed_structure);
    let mut rng = rng_from_seed(seed);
    let n = ys.len();
    let nu = sigma_prior.nu.as_f64();
    let nu_lambda = nu * sigma_prior.lambda.as_f64();
    let fixed_sigma2 = config.fixed_sigma.map(|s| (s / scale.as_f64()).powi(2));
    let mut sigma2 = fixed_sigma2.unwrap_or_else(|| sigma_prior.lambda.as_f64());

    let total = config.burn_in + config.n_draws * config.thinning;
    let mut forests = Vec::with_capacity(config.n_draws);
    let mut sigma = Vec::with_capacity(config.n_draws);
    let mut in_sample = Array2::zeros((config.n_draws, n));
    for it in 0..total {
        forest.sweep(&ys, lit(sigma2), it, &mut rng)?;
        let fitted = forest.function_values();
        if fixed_sigma2.is_none() {
            let ssr: f64 = ys.iter().zip(fitted).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
            sigma2 = draw_inverse_gamma(0.5 * (nu + n as f64), 0.5 * (nu_lambda + ssr), &mut rng)?;
            if !sigma2.is_finite() || sigma2 <= 0.0 {
                return Err(Error::NonFinite { iteration: it, tree: config.m });
            }
        }
        if it >= config.burn_in && (it - config.burn_in).is_multiple_of(config.thinning) {
            let s = forests.len();
            for (i, &f) in fitted.iter().enumerate() {
                in_sample[[s, i]] = shift + scale * f;
            }
            forests.push(forest.snapshot());
            sigma.push(lit::<T>(sigma2.sqrt()) * scale);
        }
    }
    let st = forest.move_stats();
    let mut move_stats = [0u64; 8];
    move_stats[..4].copy_from_slice(&st.proposed);
    move_stats[4..].copy_from_slice(&st.accepted);
    log::debug!("bart fit: n={n} m={} proposed={:?} accepted={:?}", config.m, st.proposed, st.accepted);
    Ok(BartPosterior {
        forests,
        sigma,
        shift,
        scale,
        columns,
        leaf_prior,
        sigma_prior,
        in_sample: PosteriorDraws::new(in_sample),
        move_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::mean;
    use ndarray::Array2;

    fn toy(n: usize) -> (Array2<f64>, Vec<f64>) {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * (3 + j) * 7919) % 1000) as f64 / 1000.0);
        let y = (0..n).map(|i| if x[[i, 0]] > 0.5 { 2.0 } else { -1.0 } + 0.1 * x[[i, 1]]).collect();
        (x, y)
    }

    #[test]
    fn same_seed_same_sigma_sequence() {
        let (x, y) = toy(60);
        let cfg = BartConfig::quick().with_chain(20, 30).with_trees(10);
        let a = fit(&x, &y, &cfg, 9).unwrap();
        let b = fit(&x, &y, &cfg, 9).unwrap();
        assert_eq!(a.sigma(), b.sigma());
        let c = fit(&x, &y, &cfg, 10).unwrap();
        assert_ne!(a.sigma(), c.sigma());
    }

    #[test]
    fn draw_count_and_positive_sigma() {
        let (x, y) = toy(50);
        let mut cfg = BartConfig::quick().with_chain(10, 25).with_trees(5);
        cfg.thinning = 3;
        let p = fit(&x, &y, &cfg, 1).unwrap();
        assert_eq!(p.n_draws(), 25);
        assert!(p.sigma().iter().all(|&s| s > 0.0));
        assert_eq!(p.in_sample().n_draws(), 25);
    }

    #[test]
    fn in_sample_draws_match_forest_predictions() {
        let (x, y) = toy(40);
        let cfg = BartConfig::quick().with_chain(10, 5).with_trees(8);
        let p = fit(&x, &y, &cfg, 3).unwrap();
        let d = p.predict_draws(&x).unwrap();
        for (a, b) in d.values.iter().zip(p.in_sample().values.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn beats_the_sample_mean_in_sample() {
        let (x, y) = toy(120);
        let p = fit(&x, &y, &BartConfig::quick(), 4).unwrap();
        let pred = p.predict_mean(&x).unwrap();
        let ybar = mean(&y);
        let rmse = |f: &dyn Fn(usize) -> f64| {
            (y.iter().enumerate().map(|(i, v)| (v - f(i)).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
        };
        assert!(rmse(&|i| pred[i]) <= rmse(&|_| ybar));
    }

    #[test]
    fn root_only_tree_predicts_a_constant() {
        let (x, y) = toy(30);
        let mut cfg = BartConfig::quick().with_chain(5, 10).with_trees(1);
        cfg.fixed_structure = true;
        let p = fit(&x, &y, &cfg, 2).unwrap();
        let d = p.predict_draws(&x).unwrap();
        for row in d.values.rows() {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn removing_a_tree_subtracts_its_contribution() {
        let (x, y) = toy(40);
        let p = fit(&x, &y, &BartConfig::quick().with_chain(20, 3).with_trees(6), 5).unwrap();
        let (shift, scale) = p.standardization();
        let f = &p.forests()[1];
        for (i, r) in x.rows().into_iter().enumerate() {
            let row = r.to_vec();
            let total = shift + scale * f.predict_row(&row);
            let without: f64 = (0..f.n_trees()).filter(|&t| t != 2).map(|t| f.tree_value(t, &row)).sum();
            let g2 = p.tree_contribution(1, 2, &x)[i];
            assert!((total - (shift + scale * without) - g2).abs() < 1e-12);
        }
    }

    #[test]
    fn schema_mismatch_names_the_column() {
        let (x, y) = toy(30);
        let p = fit(&x, &y, &BartConfig::quick().with_chain(2, 2).with_trees(2), 1).unwrap();
        let narrow = Array2::<f64>::zeros((3, 1));
        match p.predict_draws(&narrow) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "x2"),
            other => panic!("unexpected {other:?}"),
        }
        let names = vec!["x1".to_string(), "age".to_string()];
        match p.predict_named(&x, &names) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "x2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(p.predict_draws(&Array2::zeros((2, 3))).is_err());
    }

    #[test]
    fn duplicated_rows_get_identical_predictions() {
        let (x, y) = toy(30);
        let p = fit(&x, &y, &BartConfig::quick().with_chain(10, 10).with_trees(5), 1).unwrap();
        let mut xn = Array2::zeros((2, 2));
        xn.row_mut(0).assign(&x.row(4));
        xn.row_mut(1).assign(&x.row(4));
        let d = p.predict_draws(&xn).unwrap();
        assert_eq!(d.values.column(0), d.values.column(1));
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = toy(30);
        let p = fit(&x, &y, &BartConfig::quick().with_chain(3, 4).with_trees(3), 1).unwrap();
        let q = BartPosterior::<f64>::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p.predict_draws(&x).unwrap(), q.predict_draws(&x).unwrap());
    }

    #[test]
    fn single_precision_fit_runs() {
        let (x, y) = toy(40);
        let x32 = x.mapv(|v| v as f32);
        let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
        let p = fit(&x32, &y32, &BartConfig::quick().with_chain(10, 10).with_trees(5), 1).unwrap();
        assert!(p.predict_mean(&x32).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_response_is_a_calibration_error() {
        let x = Array2::<f64>::zeros((5, 1));
        assert!(matches!(fit(&x, &[1.0; 5], &BartConfig::quick(), 0), Err(Error::Calibration(_))));
    }

    #[test]
    fn sampler_keeps_invariants_with_verification() {
        let (x, y) = toy(80);
        let cfg = BartConfig::quick().with_trees(10);
        let grid = CutpointGrid::from_data(&x, 100);
        let lp = LeafPrior { mu_mu: 0.0, sigma_mu: 0.1 };
        let mut s = ForestSampler::new(&x, grid, 10, TreePrior::from(&cfg), lp, None).unwrap().with_verification(true);
        let mut rng = rng_from_seed(3);
        for it in 0..200 {
            s.sweep(&y, 0.05, it, &mut rng).unwrap();
        }
        assert!(s.tree_depths().iter().any(|&d| d > 0));
        let st = s.move_stats();
        assert!(st.accepted.iter().take(3).all(|&a| a > 0), "{st:?}");
    }

    #[test]
    fn weighted_sampler_keeps_invariants() {
        let (x, y) = toy(80);
        let w: Vec<f64> = (0..80).map(|i| (i % 2) as f64).collect();
        let cfg = BartConfig::quick();
        let grid = CutpointGrid::from_data(&x, 100);
        let lp = LeafPrior { mu_mu: 0.0, sigma_mu: 0.3 };
        let mut s = ForestSampler::new(&x, grid, 5, TreePrior::from(&cfg), lp, Some(w.clone()))
            .unwrap()
            .with_verification(true);
        let mut rng = rng_from_seed(8);
        for it in 0..100 {
            s.sweep(&y, 0.1, it, &mut rng).unwrap();
        }
        let fitted = s.fitted();
        for i in (0..80).step_by(2) {
            assert_eq!(fitted[i], 0.0);
        }
    }
}
