//! Probability mass functions and tail sums shared by the state and
//! detector modules. Everything is evaluated in log space so that
//! photon numbers of a few hundred do not overflow.

use statrs::function::factorial::{ln_binomial, ln_factorial};

/// Poisson pmf `e^{-mu} mu^k / k!`.
pub fn poisson(k: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - mean - ln_factorial(k as u64)).exp()
}

/// Bose-Einstein (thermal) pmf `mu^k / (1 + mu)^{k+1}`.
pub fn thermal(k: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (k as f64 * mean.ln() - (k as f64 + 1.0) * mean.ln_1p()).exp()
}

/// Binomial pmf for `successes` out of `trials` with success probability `p`.
/// Out-of-range counts give 0.
pub fn binomial(successes: usize, trials: usize, p: f64) -> f64 {
    if successes > trials {
        return 0.0;
    }
    if p == 0.0 {
        return if successes == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if successes == trials { 1.0 } else { 0.0 };
    }
    let failures = trials - successes;
    (ln_binomial(trials as u64, successes as u64)
        + successes as f64 * p.ln()
        + failures as f64 * (-p).ln_1p())
    .exp()
}

/// Poisson mass strictly above `k_max`.
pub fn poisson_tail(k_max: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    if (k_max as f64) < mean + 1.0 {
        let head: f64 = (0..=k_max).map(|k| poisson(k, mean)).sum();
        return (1.0 - head).max(0.0);
    }
    // Terms decrease monotonically past the mode; sum until they vanish.
    let mut k = k_max + 1;
    let mut term = poisson(k, mean);
    let mut sum = 0.0;
    while term > 0.0 && term > sum * 1e-18 {
        sum += term;
        k += 1;
        term *= mean / k as f64;
    }
    sum
}

/// Thermal mass strictly above `k_max`, `(mu / (1 + mu))^{k_max + 1}`.
pub fn thermal_tail(k_max: usize, mean: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    ((k_max as f64 + 1.0) * (mean.ln() - mean.ln_1p())).exp()
}
