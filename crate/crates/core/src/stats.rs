//! Normal-distribution helpers shared by the samplers.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Draw from `N(0, 1)` conditioned on `x > a`.
pub fn std_normal_above<R: Rng>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            if x > a {
                return x;
            }
        }
    }
    // Exponential proposal with the optimal rate.
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let x = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u <= (-0.5 * (x - lambda) * (x - lambda)).exp() {
            return x;
        }
    }
}

/// Draw from `N(mean, 1)` truncated to `(lower, inf)` or `(-inf, upper)`.
pub fn truncated_normal<R: Rng>(mean: f64, bound: f64, above: bool, rng: &mut R) -> f64 {
    if above {
        mean + std_normal_above(bound - mean, rng)
    } else {
        mean - std_normal_above(mean - bound, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.01, 0.25, 0.5, 0.9, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-10);
        }
        assert!((normal_quantile(0.75) - 0.674_489_750_196_081_7).abs() < 1e-9);
    }

    #[test]
    fn truncated_draws_respect_bounds_and_mean() {
        let mut rng = rng_from_seed(1);
        for a in [-1.0, 0.0, 0.5, 3.0] {
            let draws: Vec<f64> = (0..20_000).map(|_| std_normal_above(a, &mut rng)).collect();
            assert!(draws.iter().all(|&x| x > a));
            // E[X | X > a] = phi(a) / (1 - Phi(a))
            let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let expect = phi / (1.0 - normal_cdf(a));
            let m = draws.iter().sum::<f64>() / draws.len() as f64;
            assert!((m - expect).abs() < 0.02, "a={a}: {m} vs {expect}");
        }
        let below: Vec<f64> = (0..1000).map(|_| truncated_normal(2.0, 1.0, false, &mut rng)).collect();
        assert!(below.iter().all(|&x| x < 1.0));
    }
}
