use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::config::{BartConfig, SigmaHatMode};
use crate::error::{Error, Result};
use crate::scalar::{count, lit, sample_sd, Real};

/// Normal prior on every leaf value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LeafPrior<T> {
    pub mu_mu: T,
    pub sigma_mu: T,
}

/// `sigma^2 ~ IG(nu / 2, nu * lambda / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SigmaPrior<T> {
    pub nu: T,
    pub lambda: T,
}

/// Probability that a node at `depth` splits: `alpha (1 + depth)^(-beta)`.
pub fn split_prior_prob(alpha: f64, beta: f64, depth: usize) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Leaf prior solving `m mu - k sqrt(m) sigma = y_min`, `m mu + k sqrt(m) sigma = y_max`.
pub fn leaf_prior_from_range<T: Real>(y_min: T, y_max: T, m: usize, k: f64) -> Result<LeafPrior<T>> {
    if !(y_max > y_min) {
        return Err(Error::Calibration("response is constant".into()));
    }
    let m = count::<T>(m.max(1));
    let two: T = lit(2.0);
    Ok(LeafPrior { mu_mu: (y_min + y_max) / (two * m), sigma_mu: (y_max - y_min) / (two * lit::<T>(k) * m.sqrt()) })
}

/// `lambda` such that `P(sigma < sigma_hat) = q` under the inverse-gamma prior.
pub fn sigma_prior_from_estimate<T: Real>(sigma_hat: T, nu: f64, q: f64) -> Result<SigmaPrior<T>> {
    if !(sigma_hat > T::zero()) {
        return Err(Error::Calibration("sigma_hat must be positive".into()));
    }
    // nu * lambda / sigma^2 ~ chi^2_nu, so P(sigma^2 < s^2) = P(chi^2_nu > nu lambda / s^2).
    let chi = ChiSquared::new(nu).map_err(|e| Error::Calibration(e.to_string()))?;
    let qchi = chi.inverse_cdf(1.0 - q);
    let lambda = sigma_hat.as_f64().powi(2) * qchi / nu;
    Ok(SigmaPrior { nu: lit(nu), lambda: lit(lambda) })
}

/// Naive (sample SD) or linear-model (OLS residual SD) overestimate of sigma.
pub fn sigma_hat<T: Real>(x: &Array2<T>, y: &[T], mode: SigmaHatMode) -> Result<T> {
    match mode {
        SigmaHatMode::Naive => Ok(sample_sd(y)),
        SigmaHatMode::LinearModel => {
            let n = y.len();
            let p = x.ncols() + 1;
            if n <= p {
                // Not enough rows for the regression; fall back to the naive estimate.
                return Ok(sample_sd(y));
            }
            let resid = ols_residuals(x, y)?;
            let ss: f64 = resid.iter().map(|r| r * r).sum();
            Ok(lit((ss / (n - p) as f64).sqrt()))
        }
    }
}

/// Residuals of a least-squares fit with intercept, via normal equations with
/// a small ridge on the Cholesky diagonal.
fn ols_residuals<T: Real>(x: &Array2<T>, y: &[T]) -> Result<Vec<f64>> {
    let n = y.len();
    let p = x.ncols() + 1;
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(x.row(i).iter().map(|v| v.as_f64())).collect() };
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for (i, yi) in y.iter().enumerate().take(n) {
        let r = row(i);
        let yi = yi.as_f64();
        for a in 0..p {
            xty[a] += r[a] * yi;
            for b in 0..p {
                xtx[a * p + b] += r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        xtx[a * p + a] += 1e-8 * (1.0 + xtx[a * p + a]);
    }
    let coef = cholesky_solve(&mut xtx, &xty, p)
        .ok_or_else(|| Error::Calibration("singular design in linear-model sigma_hat".into()))?;
    Ok((0..n)
        .map(|i| {
            let r = row(i);
            y[i].as_f64() - r.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

fn cholesky_solve(a: &mut [f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    let mut z = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            z[i] -= a[i * p + k] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] -= a[k * p + i] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    Some(z)
}

/// Leaf and variance priors for a response `y`, in the units of `y`.
pub fn calibrate_priors<T: Real>(x: &Array2<T>, y: &[T], config: &BartConfig) -> Result<(LeafPrior<T>, SigmaPrior<T>)> {
    if y.len() < 2 {
        return Err(Error::Calibration("need at least two observations".into()));
    }
    let (lo, hi) = y.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
    let leaf = leaf_prior_from_range(lo, hi, config.m, config.k)?;
    let s = sigma_hat(x, y, config.sigma_hat_mode)?;
    let sigma = sigma_prior_from_estimate(s, config.nu, config.q)?;
    Ok((leaf, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_probabilities() {
        assert_eq!(split_prior_prob(0.95, 2.0, 0), 0.95);
        assert!((split_prior_prob(0.95, 2.0, 1) - 0.2375).abs() < 1e-15);
        for d in 0..6 {
            assert_eq!(split_prior_prob(0.7, 0.0, d), 0.7);
        }
    }

    #[test]
    fn leaf_prior_closed_forms() {
        let a = leaf_prior_from_range(-1.0f64, 1.0, 1, 2.0).unwrap();
        assert_eq!((a.mu_mu, a.sigma_mu), (0.0, 0.5));
        let b = leaf_prior_from_range(0.0f64, 4.0, 200, 2.0).unwrap();
        assert!((b.mu_mu - 0.01).abs() < 1e-15);
        assert!((b.sigma_mu - 4.0 / (4.0 * 200f64.sqrt())).abs() < 1e-15);
        assert!((b.sigma_mu - 0.0707).abs() < 1e-4);
    }

    #[test]
    fn constant_response_fails() {
        let x = Array2::<f64>::zeros((3, 1));
        assert!(matches!(calibrate_priors(&x, &[2.0, 2.0, 2.0], &BartConfig::default()), Err(Error::Calibration(_))));
    }

    #[test]
    fn linear_model_sigma_hat_recovers_noise_free_fit() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| (i * (j + 1)) as f64 % 7.0);
        let y: Vec<f64> = (0..50).map(|i| 1.0 + 2.0 * x[[i, 0]] - x[[i, 1]]).collect();
        let s = sigma_hat(&x, &y, SigmaHatMode::LinearModel).unwrap();
        assert!(s < 1e-3, "{s}");
        assert!(sigma_hat(&x, &y, SigmaHatMode::Naive).unwrap() > 1.0);
    }
}
