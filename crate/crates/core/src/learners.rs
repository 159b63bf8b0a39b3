//! Meta-learners built on BART: S-learner, BART-(f0, f1), ps-BART, DR- and X-learner.

use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bart::{fit, fit_probit, BartConfig, BartPosterior};
use crate::data::{append_columns, Dataset};
use crate::error::{Error, Result};
use crate::folds::make_folds;
use crate::posterior::PosteriorDraws;
use crate::propensity::{clip, estimate_propensity, PropensityConfig};
use crate::report::EffectReport;
use crate::rng::{derive_indexed, derive_seed};
use crate::scalar::Real;

/// Settings shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub bart: BartConfig,
    pub propensity: PropensityConfig,
    /// Folds for cross-fitted nuisances.
    pub folds: usize,
    /// Credible / confidence level of every reported interval.
    pub level: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { bart: BartConfig::default(), propensity: PropensityConfig::default(), folds: 5, level: 0.95 }
    }
}

impl EstimatorConfig {
    /// Short chains everywhere; for tests and smoke runs.
    pub fn quick() -> Self {
        EstimatorConfig {
            bart: BartConfig::quick(),
            propensity: PropensityConfig { bart: BartConfig::quick(), ..Default::default() },
            ..Default::default()
        }
    }

    /// Applies one `BartConfig` to the outcome and propensity models alike.
    pub fn with_bart(mut self, bart: BartConfig) -> Self {
        self.propensity.bart = bart.clone();
        self.bart = bart;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.bart.validate()?;
        self.propensity.validate()?;
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Smallest arm a separate outcome model is fitted to.
pub fn min_fit_size(config: &BartConfig) -> usize {
    config.min_node_size.max(2)
}

pub(crate) fn check_arms<T: Real>(ds: &Dataset<T>, min: usize, context: &str) -> Result<()> {
    let n1 = ds.n_treated();
    let n0 = ds.n() - n1;
    if n1 < min {
        return Err(Error::Precondition(format!("treated arm{context} has {n1} units, need at least {min}")));
    }
    if n0 < min {
        return Err(Error::Precondition(format!("control arm{context} has {n0} units, need at least {min}")));
    }
    Ok(())
}

fn x_with_treatment<T: Real>(x: &Array2<T>, z: T, extra: &[&[T]]) -> Array2<T> {
    let zc = vec![z; x.nrows()];
    let mut cols: Vec<&[T]> = vec![&zc];
    cols.extend_from_slice(extra);
    append_columns(x, &cols)
}

fn finish<T: Real>(mut r: EffectReport<T>, start: Instant, n_fits: usize) -> EffectReport<T> {
    r.diagnostics.runtime_secs = start.elapsed().as_secs_f64();
    r.diagnostics.n_fits = n_fits;
    r
}

/// Fits one model on `(x, z, extra)` and returns `f(x, 1, extra) - f(x, 0, extra)` draws.
fn single_model_effect<T: Real>(
    ds: &Dataset<T>,
    extra: &[&[T]],
    config: &BartConfig,
    seed: u64,
) -> Result<PosteriorDraws<T>> {
    let z = ds.z_values();
    let mut cols: Vec<&[T]> = vec![&z];
    cols.extend_from_slice(extra);
    let xa = append_columns(ds.x(), &cols);
    let post = fit(&xa, ds.y(), config, seed)?;
    let f1 = post.predict_draws(&x_with_treatment(ds.x(), T::one(), extra))?;
    let f0 = post.predict_draws(&x_with_treatment(ds.x(), T::zero(), extra))?;
    f1.difference(&f0)
}

pub fn s_learner<T: Real>(ds: &Dataset<T>, config: &EstimatorConfig, seed: u64) -> Result<EffectReport<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let tau = single_model_effect(ds, &[], &config.bart, derive_seed(seed, "s-learner"))?;
    Ok(finish(EffectReport::from_draws("s-learner", &tau, config.level)?, start, 1))
}

/// Models fitted separately to the treated and control arms.
pub struct ArmFits<T> {
    pub treated: BartPosterior<T>,
    pub control: BartPosterior<T>,
}

pub fn fit_arms<T: Real>(ds: &Dataset<T>, config: &BartConfig, seed: u64) -> Result<ArmFits<T>> {
    check_arms(ds, min_fit_size(config), "")?;
    let (x1, y1, _) = ds.arm(true);
    let (x0, y0, _) = ds.arm(false);
    Ok(ArmFits {
        treated: fit(&x1, &y1, config, derive_seed(seed, "arm.treated"))?,
        control: fit(&x0, &y0, config, derive_seed(seed, "arm.control"))?,
    })
}

pub fn bart_f0_f1<T: Real>(ds: &Dataset<T>, config: &EstimatorConfig, seed: u64) -> Result<EffectReport<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let arms = fit_arms(ds, &config.bart, derive_seed(seed, "bart-f0f1"))?;
    // draws of the two independent chains are paired by index
    let tau = arms.treated.predict_draws(ds.x())?.difference(&arms.control.predict_draws(ds.x())?)?;
    Ok(finish(EffectReport::from_draws("bart-f0f1", &tau, config.level)?, start, 2))
}

pub fn ps_bart<T: Real>(ds: &Dataset<T>, config: &EstimatorConfig, seed: u64) -> Result<EffectReport<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let ps = estimate_propensity(ds.x(), ds.z(), &config.propensity, derive_seed(seed, "ps-bart.propensity"))?;
    let tau = single_model_effect(ds, &[&ps.pi_hat], &config.bart, derive_seed(seed, "ps-bart"))?;
    let fits = if config.propensity.cross_fit { 1 + config.propensity.folds } else { 2 };
    Ok(finish(EffectReport::from_draws("ps-bart", &tau, config.level)?, start, fits))
}

/// Doubly robust score `(z - pi) / (pi (1 - pi)) (y - y_z) + (y1 - y0)`.
pub fn dr_pseudo_outcome<T: Real>(z: bool, y: T, pi: T, y1: T, y0: T) -> Result<T> {
    if !(pi > T::zero() && pi < T::one()) {
        return Err(Error::Precondition(format!("propensity {pi} must lie strictly inside (0, 1); clip it first")));
    }
    let zf = if z { T::one() } else { T::zero() };
    let yz = if z { y1 } else { y0 };
    Ok((zf - pi) / (pi * (T::one() - pi)) * (y - yz) + (y1 - y0))
}

/// Cross-fitted nuisance means `(y1_hat, y0_hat, pi_hat)` at every unit.
pub struct CrossFitNuisances<T> {
    pub y1: Vec<T>,
    pub y0: Vec<T>,
    pub pi: Vec<T>,
}

pub fn cross_fit_nuisances<T: Real>(
    ds: &Dataset<T>,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<CrossFitNuisances<T>> {
    let n = ds.n();
    let folds = make_folds(n, config.folds, derive_seed(seed, "folds"))?;
    let (mut y1, mut y0, mut pi) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    for f in 0..folds.k() {
        let (train, test) = (folds.complement(f), folds.members(f));
        let tr = ds.subset(&train);
        let xt = ds.x().select(Axis(0), &test);
        check_arms(&tr, min_fit_size(&config.bart), &format!(" of fold {f}'s training set"))?;
        let arms = fit_arms(&tr, &config.bart, derive_indexed(seed, "fold.arms", f as u64))?;
        let m1 = arms.treated.predict_mean(&xt)?;
        let m0 = arms.control.predict_mean(&xt)?;
        let ps =
            fit_probit(tr.x(), tr.z(), &config.propensity.bart, derive_indexed(seed, "fold.propensity", f as u64))?;
        let p = ps.predict_prob(&xt)?;
        for (j, &i) in test.iter().enumerate() {
            y1[i] = m1[j];
            y0[i] = m0[j];
            pi[i] = clip(p[j], config.propensity.clip_epsilon);
        }
    }
    Ok(CrossFitNuisances { y1, y0, pi })
}

pub fn dr_learner<T: Real>(ds: &Dataset<T>, config: &EstimatorConfig, seed: u64) -> Result<EffectReport<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let nu = cross_fit_nuisances(ds, config, derive_seed(seed, "dr-learner.nuisance"))?;
    let phi = (0..ds.n())
        .map(|i| dr_pseudo_outcome(ds.z()[i], ds.y()[i], nu.pi[i], nu.y1[i], nu.y0[i]))
        .collect::<Result<Vec<T>>>()?;
    let post = fit(ds.x(), &phi, &config.bart, derive_seed(seed, "dr-learner.final"))?;
    let r = EffectReport::from_draws("dr-learner", post.in_sample(), config.level)?;
    Ok(finish(r, start, 3 * config.folds + 1))
}

/// `tau_t (1 - pi) + tau_c pi`, per draw and unit.
pub fn x_combine<T: Real>(tau_t: &PosteriorDraws<T>, tau_c: &PosteriorDraws<T>, pi: &[T]) -> Result<PosteriorDraws<T>> {
    if tau_t.values.dim() != tau_c.values.dim() || pi.len() != tau_t.n_targets() {
        return Err(Error::Schema("X-learner branches differ in shape".into()));
    }
    let mut out = tau_t.values.clone();
    for ((s, i), v) in out.indexed_iter_mut() {
        *v = tau_t.values[[s, i]] * (T::one() - pi[i]) + tau_c.values[[s, i]] * pi[i];
    }
    Ok(PosteriorDraws::new(out))
}

pub fn x_learner<T: Real>(ds: &Dataset<T>, config: &EstimatorConfig, seed: u64) -> Result<EffectReport<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let arms = fit_arms(ds, &config.bart, derive_seed(seed, "x-learner.arms"))?;
    let (x1, y1, _) = ds.arm(true);
    let (x0, y0, _) = ds.arm(false);
    // imputed effects: treated y - f_c(x), control f_t(x) - y
    let d1: Vec<T> = y1.iter().zip(arms.control.predict_mean(&x1)?).map(|(&y, f)| y - f).collect();
    let d0: Vec<T> = y0.iter().zip(arms.treated.predict_mean(&x0)?).map(|(&y, f)| f - y).collect();
    let tau_t = fit(&x1, &d1, &config.bart, derive_seed(seed, "x-learner.tau_t"))?.predict_draws(ds.x())?;
    let tau_c = fit(&x0, &d0, &config.bart, derive_seed(seed, "x-learner.tau_c"))?.predict_draws(ds.x())?;
    let ps_cfg = PropensityConfig { cross_fit: true, folds: config.folds, ..config.propensity.clone() };
    let pi = estimate_propensity(ds.x(), ds.z(), &ps_cfg, derive_seed(seed, "x-learner.propensity"))?.pi_hat;
    let tau = x_combine(&tau_t, &tau_c, &pi)?;
    Ok(finish(EffectReport::from_draws("x-learner", &tau, config.level)?, start, 4 + config.folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{gen_synthetic, EffectForm, ResponseForm, SyntheticScenario};
    use crate::rng::rng_from_seed;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cfg() -> EstimatorConfig {
        EstimatorConfig::quick()
    }

    fn null_design(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
        let z: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y = (0..n).map(|i| x[[i, 0]] + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        Dataset::new(x, z, y).unwrap()
    }

    #[test]
    fn dr_score_scalar_cases() {
        assert_eq!(dr_pseudo_outcome(true, 3.0, 0.5, 3.0, 1.0).unwrap(), 2.0);
        assert!((dr_pseudo_outcome(true, 1.0f64, 0.5, 0.0, 0.0).unwrap() - 2.0).abs() < 1e-12);
        let v: f64 = dr_pseudo_outcome(false, 0.4, 0.2, 2.0, 1.0).unwrap();
        assert!((v - ((-0.2 / 0.16) * (0.4 - 1.0) + 1.0)).abs() < 1e-12);
        assert!(dr_pseudo_outcome(true, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(dr_pseudo_outcome(true, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn x_combination_degenerates_to_branches() {
        let t = PosteriorDraws::new(array![[1.0, 2.0], [3.0, 4.0]]);
        let c = PosteriorDraws::new(array![[-1.0, 0.5], [7.0, 0.0]]);
        assert_eq!(x_combine(&t, &c, &[0.0, 0.0]).unwrap(), t);
        assert_eq!(x_combine(&t, &c, &[1.0, 1.0]).unwrap(), c);
        let half = x_combine(&t, &c, &[0.25, 0.5]).unwrap();
        assert_eq!(half.values[[1, 0]], 3.0 * 0.75 + 7.0 * 0.25);
    }

    #[test]
    fn null_effect_intervals_cover_zero() {
        let ds = null_design(200, 1);
        for r in [s_learner(&ds, &cfg(), 3).unwrap(), bart_f0_f1(&ds, &cfg(), 3).unwrap()] {
            assert!(r.ate.contains(0.0), "{}: {:?}", r.estimator, r.ate);
            assert!(r.cate.iter().all(|c| c.lower <= c.mean && c.mean <= c.upper));
            assert_eq!(r.n(), 200);
        }
    }

    #[test]
    fn ate_draw_is_mean_of_cate_draws() {
        let ds = null_design(60, 2);
        let tau = single_model_effect(&ds, &[], &BartConfig::quick().with_chain(20, 20), 4).unwrap();
        let r = EffectReport::from_draws("s", &tau, 0.95).unwrap();
        let m = tau.target_means();
        assert!((r.ate.mean - m.iter().sum::<f64>() / m.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_linear_smoke() {
        let sc = SyntheticScenario::new(ResponseForm::Linear, EffectForm::Homogeneous, 500);
        let (ds, truth) = gen_synthetic::<f64>(&sc, 5).unwrap();
        let r = s_learner(&ds, &cfg(), 1).unwrap();
        let rmse = (r.cate.iter().zip(&truth.tau).map(|(c, t)| (c.mean - t).powi(2)).sum::<f64>() / 500.0).sqrt();
        assert!(rmse.is_finite() && rmse < 3.0, "{rmse}");
    }

    #[test]
    fn tiny_arm_is_named() {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| i as f64);
        let mut z = vec![false; 12];
        z[0] = true;
        let ds = Dataset::new(x, z, (0..12).map(|i| i as f64).collect()).unwrap();
        match bart_f0_f1(&ds, &cfg(), 0) {
            Err(Error::Precondition(m)) => assert!(m.contains("treated arm"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn learners_are_deterministic() {
        let ds = null_design(80, 6);
        let c = EstimatorConfig::quick().with_bart(BartConfig::quick().with_chain(30, 30).with_trees(10));
        for f in [ps_bart::<f64>, dr_learner::<f64>, x_learner::<f64>] {
            let a = f(&ds, &c, 9).unwrap();
            let b = f(&ds, &c, 9).unwrap();
            assert!(a.same_estimates(&b), "{}", a.estimator);
            assert!(a.cate.iter().all(|iv| iv.lower <= iv.mean && iv.mean <= iv.upper));
        }
    }
}
