//! Photocount response of a lossy multi-pixel detector with optical
//! crosstalk and a saturating readout.
//!
//! Each incident photon is detected with probability `eta`. Every detected
//! photon may fire one neighbouring pixel with probability `p_ct`; crosstalk
//! counts never trigger further crosstalk. The readout resolves at most
//! `n_max` counts and reports every larger outcome as `n_max`.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Pixel quantum efficiency, optical losses included.
    pub eta: f64,
    /// Crosstalk probability per detected photon.
    pub p_ct: f64,
    /// Largest photocount the readout can resolve.
    pub n_max: usize,
}

impl DetectorParams {
    pub fn new(eta: f64, p_ct: f64, n_max: usize) -> Result<Self> {
        let params = DetectorParams { eta, p_ct, n_max };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.p_ct) {
            return Err(Error::invalid(
                "p_ct",
                format!("must lie in [0, 1], got {}", self.p_ct),
            ));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max", "must be >= 1"));
        }
        Ok(())
    }

    /// Mean photocounts per incident photon below saturation, `(1 + P) eta`.
    pub fn effective_efficiency(&self) -> f64 {
        crate::metrics::effective_efficiency(self.eta, self.p_ct)
    }
}

/// Weight of the path "k photons arrive, n are detected, N - n crosstalk
/// counts fire" in the photocount distribution:
///
/// `C(n, N-n) C(k, n) P^(N-n) (1-P)^(2n-N) eta^n (1-eta)^(k-n)`.
///
/// Index combinations outside the binomial supports give 0.
pub fn response_coefficient(n: usize, k: usize, counts: usize, params: &DetectorParams) -> f64 {
    if n > k || counts < n || counts - n > n {
        return 0.0;
    }
    pmf::binomial(n, k, params.eta) * pmf::binomial(counts - n, n, params.p_ct)
}

/// Probability of `counts` photocounts from `k` photons ignoring saturation.
pub fn unsaturated_response(k: usize, counts: usize, params: &DetectorParams) -> f64 {
    let lo = counts.div_ceil(2);
    let hi = counts.min(k);
    (lo..=hi)
        .map(|n| response_coefficient(n, k, counts, params))
        .sum()
}

/// Conditional photocount law `r[N][k]` for `N` in `0..=n_max` and `k` in
/// `0..=k_max`. Row `n_max` collects every outcome at or above saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    params: DetectorParams,
    k_max: usize,
    r: Array2<f64>,
}

impl ResponseMatrix {
    pub fn build(params: DetectorParams, k_max: usize) -> Result<Self> {
        params.validate()?;
        let n_max = params.n_max;
        let mut r = Array2::zeros((n_max + 1, k_max + 1));

        // Crosstalk law for each number of primary detections that can
        // still land below saturation.
        let n_primary = k_max.min(n_max - 1);
        let crosstalk: Vec<Vec<f64>> = (0..=n_primary)
            .map(|n| (0..=n).map(|x| pmf::binomial(x, n, params.p_ct)).collect())
            .collect();

        for k in 0..=k_max {
            let detected: Vec<f64> = (0..=k.min(n_primary))
                .map(|n| pmf::binomial(n, k, params.eta))
                .collect();
            let mut below = 0.0;
            for counts in 0..n_max.min(2 * k + 1) {
                let lo = counts.div_ceil(2);
                let hi = counts.min(k);
                let mut p = 0.0;
                for n in lo..=hi {
                    p += detected[n] * crosstalk[n][counts - n];
                }
                r[[counts, k]] = p;
                below += p;
            }
            // Counts above 2k are unreachable, so the saturation bin is
            // structurally empty when n_max > 2k.
            r[[n_max, k]] = if 2 * k < n_max { 0.0 } else { (1.0 - below).max(0.0) };
        }

        Ok(ResponseMatrix { params, k_max, r })
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn n_max(&self) -> usize {
        self.params.n_max
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.r
    }

    pub fn get(&self, counts: usize, k: usize) -> f64 {
        self.r.get((counts, k)).copied().unwrap_or(0.0)
    }

    /// Photocount distribution for `k` incident photons.
    pub fn column(&self, k: usize) -> ArrayView1<'_, f64> {
        self.r.column(k)
    }

    /// Mean photocount for `k` incident photons.
    pub fn mean_counts(&self, k: usize) -> f64 {
        self.column(k)
            .iter()
            .enumerate()
            .map(|(n, &p)| n as f64 * p)
            .sum()
    }

    /// Number of leading rows that can carry probability: counts above
    /// `2 k_max` are unreachable.
    pub fn support_rows(&self) -> usize {
        self.params.n_max.min(2 * self.k_max) + 1
    }
}

/// Draws one photocount for `k` incident photons by running the loss,
/// crosstalk and saturation stages in turn.
pub fn sample_photocount<R: Rng + ?Sized>(k: usize, params: &DetectorParams, rng: &mut R) -> usize {
    if k == 0 {
        return 0;
    }
    let detected = draw_binomial(k as u64, params.eta, rng);
    let crosstalk = draw_binomial(detected, params.p_ct, rng);
    ((detected + crosstalk) as usize).min(params.n_max)
}

fn draw_binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    if trials == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return trials;
    }
    Binomial::new(trials, p)
        .expect("probability validated in [0, 1]")
        .sample(rng)
}
