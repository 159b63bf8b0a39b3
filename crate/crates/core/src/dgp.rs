//! Synthetic data-generating processes with full ground truth: the four
//! linear/nonlinear x homogeneous/heterogeneous designs and the IHDP
//! "setup B" response surface.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{encode_categoricals, CategoricalEncoding, Dataset, EncodingMode, GroundTruth};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::{lit, sample_sd, Real};
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseForm {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectForm {
    Homogeneous,
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub response: ResponseForm,
    pub effect: EffectForm,
    pub n: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_encoding")]
    pub encoding: EncodingMode,
}

fn default_noise_sd() -> f64 {
    1.0
}
fn default_encoding() -> EncodingMode {
    EncodingMode::OneHot
}

impl SyntheticScenario {
    pub fn new(response: ResponseForm, effect: EffectForm, n: usize) -> Self {
        SyntheticScenario { response, effect, n, noise_sd: 1.0, encoding: EncodingMode::OneHot }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("scenario needs n >= 10, got {}", self.n)));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        Ok(())
    }

    /// Stable identifier, e.g. `heterogeneous-linear-n250`.
    pub fn id(&self) -> String {
        let e = match self.effect {
            EffectForm::Homogeneous => "homogeneous",
            EffectForm::Heterogeneous => "heterogeneous",
        };
        let r = match self.response {
            ResponseForm::Linear => "linear",
            ResponseForm::Nonlinear => "nonlinear",
        };
        format!("{e}-{r}-n{}", self.n)
    }
}

/// The five raw covariates of the synthetic designs.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCovariates<T> {
    pub x1: Vec<T>,
    pub x2: Vec<T>,
    pub x3: Vec<T>,
    /// Unordered categorical with levels 1, 2, 3.
    pub x4: Vec<u8>,
    /// Dichotomous, coded 0/1.
    pub x5: Vec<T>,
}

impl<T: Real> SyntheticCovariates<T> {
    pub fn draw<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut c = SyntheticCovariates {
            x1: Vec::with_capacity(n),
            x2: Vec::with_capacity(n),
            x3: Vec::with_capacity(n),
            x4: Vec::with_capacity(n),
            x5: Vec::with_capacity(n),
        };
        for _ in 0..n {
            c.x1.push(lit(StandardNormal.sample(rng)));
            c.x2.push(lit(StandardNormal.sample(rng)));
            c.x3.push(lit(StandardNormal.sample(rng)));
            c.x4.push(rng.random_range(1..=3u8));
            c.x5.push(if rng.random_bool(0.5) { T::one() } else { T::zero() });
        }
        c
    }

    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    /// Covariate matrix `x1, x2, x3, x4, x5` with `x4` integer-coded.
    pub fn raw_matrix(&self) -> Array2<T> {
        let n = self.len();
        Array2::from_shape_fn((n, 5), |(i, j)| match j {
            0 => self.x1[i],
            1 => self.x2[i],
            2 => self.x3[i],
            3 => crate::scalar::count(self.x4[i] as usize),
            _ => self.x5[i],
        })
    }
}

fn g_of<T: Real>(level: u8) -> Result<T> {
    match level {
        1 => Ok(lit(2.0)),
        2 => Ok(lit(-1.0)),
        3 => Ok(lit(-4.0)),
        other => Err(Error::Domain(format!("x4 must be in {{1,2,3}}, got {other}"))),
    }
}

/// Prognostic function: `1 + g(x4) + x1 x3` (linear) or
/// `-6 + g(x4) + 6 |x3 - 1|` (nonlinear).
pub fn gen_mu<T: Real>(response: ResponseForm, cov: &SyntheticCovariates<T>) -> Result<Vec<T>> {
    (0..cov.len())
        .map(|i| {
            let g: T = g_of(cov.x4[i])?;
            Ok(match response {
                ResponseForm::Linear => T::one() + g + cov.x1[i] * cov.x3[i],
                ResponseForm::Nonlinear => lit::<T>(-6.0) + g + lit::<T>(6.0) * (cov.x3[i] - T::one()).abs(),
            })
        })
        .collect()
}

/// Treatment effect: constant 3 or `1 + 2 x2 x5`.
pub fn gen_tau<T: Real>(effect: EffectForm, cov: &SyntheticCovariates<T>) -> Vec<T> {
    match effect {
        EffectForm::Homogeneous => vec![lit(3.0); cov.len()],
        EffectForm::Heterogeneous => {
            cov.x2.iter().zip(&cov.x5).map(|(&x2, &x5)| T::one() + lit::<T>(2.0) * x2 * x5).collect()
        }
    }
}

/// `0.8 Phi(3 mu / s - 0.5 x1) + 0.05 + u / 10` for given uniforms `u`.
pub fn propensity_from_uniforms<T: Real>(mu: &[T], x1: &[T], u: &[T]) -> Result<Vec<T>> {
    let s = sample_sd(mu);
    if !(s > T::zero()) {
        return Err(Error::Degenerate("mu(x) has zero standard deviation".into()));
    }
    Ok(mu
        .iter()
        .zip(x1)
        .zip(u)
        .map(|((&m, &a), &ui)| {
            let arg = (lit::<T>(3.0) * m / s - lit::<T>(0.5) * a).as_f64();
            lit::<T>(0.8 * normal_cdf(arg) + 0.05) + ui / lit(10.0)
        })
        .collect())
}

pub fn gen_propensity<T: Real, R: Rng>(mu: &[T], x1: &[T], rng: &mut R) -> Result<Vec<T>> {
    let u: Vec<T> = (0..mu.len()).map(|_| lit(rng.random::<f64>())).collect();
    propensity_from_uniforms(mu, x1, &u)
}

fn draw_treatment<R: Rng, T: Real>(pi: &[T], rng: &mut R) -> Vec<bool> {
    pi.iter().map(|&p| rng.random::<f64>() < p.as_f64()).collect()
}

fn degenerate(z: &[bool]) -> bool {
    z.iter().all(|&t| t) || z.iter().all(|&t| !t)
}

/// Draws one replication of a synthetic scenario. Deterministic in `seed`.
pub fn gen_synthetic<T: Real>(scenario: &SyntheticScenario, seed: u64) -> Result<(Dataset<T>, GroundTruth<T>)> {
    scenario.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, "synthetic"));
    let cov = SyntheticCovariates::<T>::draw(scenario.n, &mut rng);
    let mu = gen_mu(scenario.response, &cov)?;
    let tau = gen_tau(scenario.effect, &cov);
    let pi = gen_propensity(&mu, &cov.x1, &mut rng)?;
    let mut z = draw_treatment(&pi, &mut rng);
    if degenerate(&z) {
        z = draw_treatment(&pi, &mut rng);
        if degenerate(&z) {
            return Err(Error::Degenerate("treatment draw put every unit in one arm twice".into()));
        }
    }
    let sd: T = lit(scenario.noise_sd);
    let y: Vec<T> = (0..scenario.n)
        .map(|i| {
            let eps: T = lit::<T>(StandardNormal.sample(&mut rng)) * sd;
            mu[i] + if z[i] { tau[i] } else { T::zero() } + eps
        })
        .collect();
    let names: Vec<String> = (1..=5).map(|j| format!("x{j}")).collect();
    let enc = CategoricalEncoding::new(3, 3, scenario.encoding)?;
    let (x, columns) = encode_categoricals(&cov.raw_matrix(), &names, &[enc])?;
    let truth = GroundTruth::from_effect(mu, tau, Some(pi))?;
    let ds = Dataset::with_columns(x, z, y, columns)?;
    Ok((ds, truth))
}

/// Offset added to the covariates inside the control-arm exponential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub enum Offset<T> {
    Scalar(T),
    Matrix(Array2<T>),
}

impl<T: Real> Offset<T> {
    fn at(&self, i: usize, j: usize) -> T {
        match self {
            Offset::Scalar(a) => *a,
            Offset::Matrix(m) => m[[i, j]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IhdpSurrogateConfig<T> {
    pub offset: Offset<T>,
    pub target_att: T,
    pub noise_sd: T,
}

impl<T: Real> Default for IhdpSurrogateConfig<T> {
    fn default() -> Self {
        IhdpSurrogateConfig { offset: Offset::Scalar(lit(0.5)), target_att: lit(4.0), noise_sd: T::one() }
    }
}

/// Coefficient support and weights of the sparse setup-B coefficients.
pub const BETA_VALUES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
pub const BETA_PROBS: [f64; 5] = [0.6, 0.1, 0.1, 0.1, 0.1];

pub fn draw_beta<T: Real, R: Rng>(d: usize, rng: &mut R) -> Vec<T> {
    (0..d)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (v, p) in BETA_VALUES.iter().zip(BETA_PROBS) {
                acc += p;
                if u < acc {
                    return lit(*v);
                }
            }
            lit(BETA_VALUES[4])
        })
        .collect()
}

fn linear_and_exp<T: Real>(x: &Array2<T>, beta: &[T], offset: &Offset<T>) -> Result<(Vec<T>, Vec<T>)> {
    if beta.len() != x.ncols() {
        return Err(Error::Schema(format!("beta has {} entries for {} covariates", beta.len(), x.ncols())));
    }
    let mut lin = Vec::with_capacity(x.nrows());
    let mut ex = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let mut a = T::zero();
        let mut b = T::zero();
        for j in 0..x.ncols() {
            a = a + x[[i, j]] * beta[j];
            b = b + (x[[i, j]] + offset.at(i, j)) * beta[j];
        }
        let e = b.exp();
        if !e.is_finite() {
            return Err(Error::Overflow(format!(
                "exp((x + A) beta) overflows at row {i}; standardize the covariates first"
            )));
        }
        lin.push(a);
        ex.push(e);
    }
    Ok((lin, ex))
}

/// Solves for the shift `omega` that makes the treated-average effect equal `target_att`.
pub fn calibrate_omega<T: Real>(
    x: &Array2<T>,
    beta: &[T],
    offset: &Offset<T>,
    treated: &[bool],
    target_att: T,
) -> Result<T> {
    let (lin, ex) = linear_and_exp(x, beta, offset)?;
    let mut s = T::zero();
    let mut c = 0usize;
    for i in 0..lin.len() {
        if treated[i] {
            s = s + lin[i] - ex[i];
            c += 1;
        }
    }
    if c == 0 {
        return Err(Error::Precondition("omega calibration needs at least one treated unit".into()));
    }
    Ok(s / crate::scalar::count(c) - target_att)
}

#[derive(Debug, Clone)]
pub struct IhdpSurrogateDraw<T> {
    pub beta: Vec<T>,
    pub omega: T,
    pub truth: GroundTruth<T>,
    pub y: Vec<T>,
}

/// Setup-B response surface on given covariates and treatment.
pub fn gen_ihdp_surrogate<T: Real>(
    x: &Array2<T>,
    z: &[bool],
    config: &IhdpSurrogateConfig<T>,
    seed: u64,
) -> Result<IhdpSurrogateDraw<T>> {
    let mut rng = rng_from_seed(derive_seed(seed, "ihdp-surrogate"));
    let beta: Vec<T> = draw_beta(x.ncols(), &mut rng);
    let omega = calibrate_omega(x, &beta, &config.offset, z, config.target_att)?;
    let (lin, ex) = linear_and_exp(x, &beta, &config.offset)?;
    let mu0 = ex;
    let mu1: Vec<T> = lin.iter().map(|&l| l - omega).collect();
    let y = (0..x.nrows())
        .map(|i| {
            let eps: T = lit::<T>(StandardNormal.sample(&mut rng)) * config.noise_sd;
            (if z[i] { mu1[i] } else { mu0[i] }) + eps
        })
        .collect();
    let truth = GroundTruth::new(mu0, mu1, None)?;
    Ok(IhdpSurrogateDraw { beta, omega, truth, y })
}

/// Marginal frequencies of the stand-in's independent binary covariates, in
/// column order after the six continuous ones; `None` marks the three
/// mutually exclusive maternal-education indicators.
const IHDP_BINARY: [Option<f64>; 12] = [
    Some(0.51),
    Some(0.09),
    Some(0.52),
    None,
    None,
    None,
    Some(0.35),
    Some(0.47),
    Some(0.12),
    Some(0.04),
    Some(0.58),
    Some(0.96),
];
const IHDP_EDUCATION: [f64; 3] = [0.36, 0.28, 0.21];

/// Stand-in for the IHDP covariate table when the real files are unavailable,
/// shaped like it: 6 standard-normal covariates, 12 binary indicators (three
/// of them one categorical) and the remaining columns as dummies of an
/// equally likely site factor with one baseline level. Exactly `n_treated`
/// units are selected by covariate-dependent weighted sampling.
pub fn ihdp_like_design<T: Real>(n: usize, d: usize, n_treated: usize, seed: u64) -> Result<(Array2<T>, Vec<bool>)> {
    if d < 6 || n_treated == 0 || n_treated >= n {
        return Err(Error::Config("need d >= 6 and 0 < n_treated < n".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "ihdp-design"));
    let n_bin = (d - 6).min(IHDP_BINARY.len());
    let n_site = d - 6 - n_bin;
    let mut x = Array2::<T>::zeros((n, d));
    for i in 0..n {
        for j in 0..6 {
            x[[i, j]] = lit(StandardNormal.sample(&mut rng));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let education = IHDP_EDUCATION.iter().position(|p| {
            acc += p;
            u < acc
        });
        let mut edu_col = 0;
        for (k, freq) in IHDP_BINARY.iter().take(n_bin).enumerate() {
            let on = match freq {
                Some(p) => rng.random_bool(*p),
                None => {
                    edu_col += 1;
                    education == Some(edu_col - 1)
                }
            };
            x[[i, 6 + k]] = if on { T::one() } else { T::zero() };
        }
        if n_site > 0 {
            let site = rng.random_range(0..=n_site);
            if site < n_site {
                x[[i, 6 + n_bin + site]] = T::one();
            }
        }
    }
    // Selection into treatment leans on a few covariates (confounding).
    let gamma = |j: usize| -> f64 {
        match j {
            0 => 0.5,
            1 => -0.4,
            2 => 0.3,
            8 => 0.6,
            9 => -0.5,
            _ => 0.0,
        }
    };
    let mut keys: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let score: f64 = (0..d).map(|j| gamma(j) * x[[i, j]].as_f64()).sum();
            let w = score.exp();
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut z = vec![false; n];
    for &(_, i) in keys.iter().take(n_treated) {
        z[i] = true;
    }
    Ok((x, z))
}
