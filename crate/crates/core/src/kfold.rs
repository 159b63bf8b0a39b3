//! K-Fold Causal BART.
//!
//! The ATE comes from partialling out: cross-fitted BART residuals of the
//! outcome and of the treatment (probit BART), then a no-intercept
//! least-squares slope of one on the other. The CATE is built in two stages:
//! a cross-fitted T-learner gives `tau_dot`, which a second cross-fitted BART
//! regression smooths into per-unit intervals, inflated about their means.

use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::bart::{fit, fit_probit, BartPosterior};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::folds::{make_folds, FoldAssignment};
use crate::learners::{check_arms, fit_arms, min_fit_size, EstimatorConfig};
use crate::posterior::{summarize, IntervalEstimate, PosteriorDraws};
use crate::report::EffectReport;
use crate::rng::{derive_indexed, derive_seed};
use crate::scalar::{count, lit, Real};
use crate::stats::normal_quantile;

pub const ESTIMATOR: &str = "kfold-causal-bart";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardError {
    /// Homoskedastic OLS standard error.
    #[default]
    Classical,
    /// Heteroskedasticity-robust HC1.
    Hc1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KfcbConfig {
    pub base: EstimatorConfig,
    /// Stage-2 interval inflation about the mean.
    pub inflation: f64,
    pub standard_error: StandardError,
    /// Fit the residual regression with an intercept (diagnostic).
    pub intercept: bool,
    /// Stage 2 reuses the stage-1 fold assignment.
    pub reuse_folds: bool,
}

impl Default for KfcbConfig {
    fn default() -> Self {
        KfcbConfig {
            base: EstimatorConfig::default(),
            inflation: 1.5,
            standard_error: StandardError::Classical,
            intercept: false,
            reuse_folds: true,
        }
    }
}

impl KfcbConfig {
    pub fn from_base(base: EstimatorConfig) -> Self {
        KfcbConfig { base, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.inflation > 0.0) {
            return Err(Error::Config("inflation must be positive".into()));
        }
        Ok(())
    }
}

/// Components removed in the ablation sub-models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// CATE taken straight from stage 1.
    pub skip_stage2: bool,
    /// ATE from the stage-2 CATE draws instead of the residual regression.
    pub skip_partialling_out: bool,
    /// Stage 2 fitted on all units and evaluated in-sample.
    pub no_kfold_stage2: bool,
    /// Stage-1 arm models (and the ATE nuisances) fitted on all units.
    pub no_kfold_stage1: bool,
}

impl AblationConfig {
    pub const FULL: AblationConfig = AblationConfig {
        skip_stage2: false,
        skip_partialling_out: false,
        no_kfold_stage2: false,
        no_kfold_stage1: false,
    };

    /// The full model followed by the four single-component sub-models.
    pub fn sub_models() -> [AblationConfig; 5] {
        let f = Self::FULL;
        [
            f,
            AblationConfig { skip_stage2: true, ..f },
            AblationConfig { skip_partialling_out: true, ..f },
            AblationConfig { no_kfold_stage2: true, ..f },
            AblationConfig { no_kfold_stage1: true, ..f },
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.skip_stage2 {
            parts.push("no-stage2");
        }
        if self.skip_partialling_out {
            parts.push("no-partialling-out");
        }
        if self.no_kfold_stage2 {
            parts.push("no-kfold-stage2");
        }
        if self.no_kfold_stage1 {
            parts.push("no-kfold-stage1");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }

    pub fn estimator_name(&self) -> String {
        if *self == Self::FULL {
            ESTIMATOR.into()
        } else {
            format!("{ESTIMATOR}[{}]", self.label())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DmlAteResult<T> {
    pub beta_hat: T,
    pub se: T,
    pub interval: IntervalEstimate<T>,
    /// Present when the regression was fitted with an intercept.
    pub intercept: Option<T>,
    pub y_resid: Vec<T>,
    pub z_resid: Vec<T>,
}

/// Least-squares slope of `y_dot` on `z_dot` with its standard error and
/// normal-theory interval.
pub fn residual_regression<T: Real>(
    y_dot: &[T],
    z_dot: &[T],
    standard_error: StandardError,
    intercept: bool,
    level: f64,
) -> Result<DmlAteResult<T>> {
    let n = y_dot.len();
    if z_dot.len() != n {
        return Err(Error::Schema("residual vectors differ in length".into()));
    }
    let p = if intercept { 2 } else { 1 };
    if n <= p {
        return Err(Error::Precondition(format!("need more than {p} residual pairs")));
    }
    let (ym, zm) = if intercept {
        (y_dot.iter().copied().sum::<T>() / count(n), z_dot.iter().copied().sum::<T>() / count(n))
    } else {
        (T::zero(), T::zero())
    };
    let szz: T = z_dot.iter().map(|&z| (z - zm) * (z - zm)).sum();
    if szz.as_f64() < 1e-12 {
        return Err(Error::Degenerate(format!(
            "treatment residuals have sum of squares {:e}; overlap is too weak to partial out",
            szz.as_f64()
        )));
    }
    let szy: T = y_dot.iter().zip(z_dot).map(|(&y, &z)| (z - zm) * (y - ym)).sum();
    let beta = szy / szz;
    let a = ym - beta * zm;
    let resid: Vec<T> = y_dot.iter().zip(z_dot).map(|(&y, &z)| y - a - beta * z).collect();
    let df = count::<T>(n - p);
    let se = match standard_error {
        StandardError::Classical => {
            let s2 = resid.iter().map(|&e| e * e).sum::<T>() / df;
            (s2 / szz).sqrt()
        }
        StandardError::Hc1 => {
            let meat: T = z_dot.iter().zip(&resid).map(|(&z, &e)| (z - zm) * (z - zm) * e * e).sum();
            (count::<T>(n) / df * meat).sqrt() / szz
        }
    };
    let q: T = lit(normal_quantile(0.5 + level / 2.0));
    Ok(DmlAteResult {
        beta_hat: beta,
        se,
        interval: IntervalEstimate::new(beta, beta - q * se, beta + q * se),
        intercept: intercept.then_some(a),
        y_resid: y_dot.to_vec(),
        z_resid: z_dot.to_vec(),
    })
}

/// Outcome and treatment nuisance predictions; cross-fitted when `folds` is given.
fn dml_nuisances<T: Real>(
    ds: &Dataset<T>,
    folds: Option<&FoldAssignment>,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<(Vec<T>, Vec<f64>)> {
    let n = ds.n();
    match folds {
        None => {
            let l = fit(ds.x(), ds.y(), &config.bart, derive_seed(seed, "outcome"))?;
            let m = fit_probit(ds.x(), ds.z(), &config.propensity.bart, derive_seed(seed, "treatment"))?;
            Ok((l.in_sample().mean(), m.in_sample_prob().to_vec()))
        }
        Some(folds) => {
            let (mut l_hat, mut m_hat) = (vec![T::zero(); n], vec![0.0; n]);
            for f in 0..folds.k() {
                let (train, test) = (folds.complement(f), folds.members(f));
                let tr = ds.subset(&train);
                let xt = ds.x().select(Axis(0), &test);
                let l = fit(tr.x(), tr.y(), &config.bart, derive_indexed(seed, "outcome.fold", f as u64))?;
                let m = fit_probit(
                    tr.x(),
                    tr.z(),
                    &config.propensity.bart,
                    derive_indexed(seed, "treatment.fold", f as u64),
                )
                .map_err(|e| match e {
                    Error::Degenerate(msg) => Error::Degenerate(format!("fold {f} training set: {msg}")),
                    other => other,
                })?;
                for ((&i, lv), mv) in test.iter().zip(l.predict_mean(&xt)?).zip(m.predict_prob(&xt)?) {
                    l_hat[i] = lv;
                    m_hat[i] = mv;
                }
            }
            Ok((l_hat, m_hat))
        }
    }
}

fn ate_dml_with<T: Real>(
    ds: &Dataset<T>,
    folds: Option<&FoldAssignment>,
    config: &KfcbConfig,
    seed: u64,
) -> Result<DmlAteResult<T>> {
    let (l_hat, m_hat) = dml_nuisances(ds, folds, &config.base, seed)?;
    let y_dot: Vec<T> = ds.y().iter().zip(&l_hat).map(|(&y, &l)| y - l).collect();
    let z_dot: Vec<T> = ds.z().iter().zip(&m_hat).map(|(&z, &m)| lit::<T>(if z { 1.0 } else { 0.0 } - m)).collect();
    residual_regression(&y_dot, &z_dot, config.standard_error, config.intercept, config.base.level)
}

/// Partialling-out ATE with cross-fitted nuisances.
pub fn ate_dml<T: Real>(
    ds: &Dataset<T>,
    folds: &FoldAssignment,
    config: &KfcbConfig,
    seed: u64,
) -> Result<DmlAteResult<T>> {
    config.validate()?;
    check_fold_count(ds.n(), folds)?;
    ate_dml_with(ds, Some(folds), config, seed)
}

fn check_fold_count(n: usize, folds: &FoldAssignment) -> Result<()> {
    if folds.n() != n {
        return Err(Error::Schema(format!("fold assignment covers {} units, data has {n}", folds.n())));
    }
    Ok(())
}

/// Stage-1 output: `tau_dot` and the posterior difference draws behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1<T> {
    pub tau_dot: Vec<T>,
    pub draws: PosteriorDraws<T>,
}

fn arm_difference<T: Real>(t: &BartPosterior<T>, c: &BartPosterior<T>, x: &Array2<T>) -> Result<PosteriorDraws<T>> {
    t.predict_draws(x)?.difference(&c.predict_draws(x)?)
}

fn stage1_with<T: Real>(
    ds: &Dataset<T>,
    folds: Option<&FoldAssignment>,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<Stage1<T>> {
    let draws = match folds {
        None => {
            let arms = fit_arms(ds, &config.bart, derive_seed(seed, "all"))?;
            arm_difference(&arms.treated, &arms.control, ds.x())?
        }
        Some(folds) => {
            let mut out = Array2::zeros((config.bart.n_draws, ds.n()));
            for f in 0..folds.k() {
                let (train, test) = (folds.complement(f), folds.members(f));
                let tr = ds.subset(&train);
                let min = min_fit_size(&config.bart);
                check_arms(&tr, min, &format!(" in the training complement of fold {f}")).map_err(|e| match e {
                    Error::Precondition(m) => Error::Precondition(format!("{m}; use a larger sample or fewer folds")),
                    other => other,
                })?;
                let arms = fit_arms(&tr, &config.bart, derive_indexed(seed, "fold", f as u64))?;
                let d = arm_difference(&arms.treated, &arms.control, &ds.x().select(Axis(0), &test))?;
                for (j, &i) in test.iter().enumerate() {
                    out.column_mut(i).assign(&d.values.column(j));
                }
            }
            PosteriorDraws::new(out)
        }
    };
    Ok(Stage1 { tau_dot: draws.mean(), draws })
}

/// Cross-fitted T-learner posterior-mean effects.
pub fn cate_stage1<T: Real>(
    ds: &Dataset<T>,
    folds: &FoldAssignment,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<Vec<T>> {
    config.validate()?;
    check_fold_count(ds.n(), folds)?;
    Ok(stage1_with(ds, Some(folds), config, seed)?.tau_dot)
}

fn stage2_draws<T: Real>(
    x: &Array2<T>,
    tau_dot: &[T],
    folds: Option<&FoldAssignment>,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<PosteriorDraws<T>> {
    if tau_dot.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("tau_dot has non-finite entries".into()));
    }
    match folds {
        None => Ok(fit(x, tau_dot, &config.bart, derive_seed(seed, "all"))?.in_sample().clone()),
        Some(folds) => {
            let mut out = Array2::zeros((config.bart.n_draws, x.nrows()));
            for f in 0..folds.k() {
                let (train, test) = (folds.complement(f), folds.members(f));
                let yt: Vec<T> = train.iter().map(|&i| tau_dot[i]).collect();
                let post = fit(&x.select(Axis(0), &train), &yt, &config.bart, derive_indexed(seed, "fold", f as u64))?;
                let d = post.predict_draws(&x.select(Axis(0), &test))?;
                for (j, &i) in test.iter().enumerate() {
                    out.column_mut(i).assign(&d.values.column(j));
                }
            }
            Ok(PosteriorDraws::new(out))
        }
    }
}

/// Equal-tailed intervals stretched about their means by `inflation`.
pub fn inflate_all<T: Real>(intervals: &[IntervalEstimate<T>], inflation: f64) -> Vec<IntervalEstimate<T>> {
    intervals.iter().map(|iv| iv.inflate(lit(inflation))).collect()
}

/// Cross-fitted BART smoothing of `tau_dot`, with inflated intervals.
pub fn cate_stage2<T: Real>(
    x: &Array2<T>,
    tau_dot: &[T],
    folds: &FoldAssignment,
    config: &EstimatorConfig,
    seed: u64,
    inflation: f64,
) -> Result<Vec<IntervalEstimate<T>>> {
    config.validate()?;
    check_fold_count(x.nrows(), folds)?;
    let draws = stage2_draws(x, tau_dot, Some(folds), config, seed)?;
    Ok(inflate_all(&summarize(&draws, config.level)?, inflation))
}

/// Every intermediate of one K-Fold Causal BART run.
#[derive(Debug, Clone)]
pub struct KfcbRun<T> {
    pub report: EffectReport<T>,
    pub dml: Option<DmlAteResult<T>>,
    pub stage1: Stage1<T>,
    pub folds: FoldAssignment,
    /// Folds of the cross-fitted stage 2, if it ran.
    pub stage2_folds: Option<FoldAssignment>,
}

/// Seeds of the pipeline's independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KfcbSeeds {
    pub folds: u64,
    pub stage2_folds: u64,
    pub dml: u64,
    pub stage1: u64,
    pub stage2: u64,
}

impl KfcbSeeds {
    pub fn new(seed: u64) -> Self {
        KfcbSeeds {
            folds: derive_seed(seed, "kfcb.folds"),
            stage2_folds: derive_seed(seed, "kfcb.folds.stage2"),
            dml: derive_seed(seed, "kfcb.dml"),
            stage1: derive_seed(seed, "kfcb.stage1"),
            stage2: derive_seed(seed, "kfcb.stage2"),
        }
    }
}

pub fn kfold_causal_bart<T: Real>(
    ds: &Dataset<T>,
    config: &KfcbConfig,
    ablation: AblationConfig,
    seed: u64,
) -> Result<EffectReport<T>> {
    Ok(kfold_causal_bart_run(ds, config, ablation, seed)?.report)
}

pub fn kfold_causal_bart_run<T: Real>(
    ds: &Dataset<T>,
    config: &KfcbConfig,
    ablation: AblationConfig,
    seed: u64,
) -> Result<KfcbRun<T>> {
    let start = Instant::now();
    config.validate()?;
    ds.ensure_valid()?;
    let base = &config.base;
    let seeds = KfcbSeeds::new(seed);
    let folds = make_folds(ds.n(), base.folds, seeds.folds)?;
    let stage1_folds = (!ablation.no_kfold_stage1).then_some(&folds);
    let mut n_fits = 0;
    let k = base.folds;

    let dml = if ablation.skip_partialling_out {
        None
    } else {
        n_fits += if ablation.no_kfold_stage1 { 2 } else { 2 * k };
        Some(ate_dml_with(ds, stage1_folds, config, seeds.dml)?)
    };

    let stage1 = stage1_with(ds, stage1_folds, base, seeds.stage1)?;
    n_fits += if ablation.no_kfold_stage1 { 2 } else { 2 * k };

    let (cate_draws, stage2_folds) = if ablation.skip_stage2 {
        (stage1.draws.clone(), None)
    } else {
        let s2_folds = if ablation.no_kfold_stage2 {
            None
        } else if config.reuse_folds {
            Some(folds.clone())
        } else {
            Some(make_folds(ds.n(), k, seeds.stage2_folds)?)
        };
        n_fits += if s2_folds.is_some() { k } else { 1 };
        (stage2_draws(ds.x(), &stage1.tau_dot, s2_folds.as_ref(), base, seeds.stage2)?, s2_folds)
    };
    let mut cate = inflate_all(&summarize(&cate_draws, base.level)?, config.inflation);
    if ablation.skip_stage2 {
        // keep the stage-1 point estimate exact
        for (iv, &t) in cate.iter_mut().zip(&stage1.tau_dot) {
            iv.mean = t;
        }
    }

    let ate = match &dml {
        Some(d) => d.interval,
        None => {
            let means = cate_draws.target_means();
            let col = Array2::from_shape_vec((means.len(), 1), means).map_err(|e| Error::Schema(e.to_string()))?;
            summarize(&PosteriorDraws::new(col), base.level)?[0]
        }
    };

    let mut report = EffectReport::new(ablation.estimator_name(), ate, cate);
    report.diagnostics.n_draws = base.bart.n_draws;
    report.diagnostics.n_fits = n_fits;
    report.diagnostics.folds = stage2_folds.as_ref().map(|f| f.assignment().to_vec());
    report.diagnostics.runtime_secs = start.elapsed().as_secs_f64();
    Ok(KfcbRun { report, dml, stage1, folds, stage2_folds })
}
