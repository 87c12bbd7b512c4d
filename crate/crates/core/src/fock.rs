//! Truncated photon-number statistics of two-mode input states.
//!
//! Every state handled here is diagonal in the Fock basis, so a state is
//! stored as a real joint probability table `p[k_s][k_i]` over the photon
//! numbers arriving at the signal and idler detectors.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf;

/// Default probability mass allowed to fall outside the truncated table.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Largest Fock cutoff accepted; the dense joint table grows as `k_max^2`.
pub const MAX_K_MAX: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateKind {
    /// Two independent coherent beams with Poisson photon statistics.
    #[serde(rename = "coherent")]
    CoherentPair,
    /// Two-mode squeezed vacuum: perfectly correlated photon numbers with
    /// thermal marginals.
    #[serde(rename = "sv")]
    TwoModeSv,
    /// Two independent thermal beams.
    #[serde(rename = "thermal")]
    ThermalPair,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::CoherentPair => "coherent",
            StateKind::TwoModeSv => "sv",
            StateKind::ThermalPair => "thermal",
        }
    }

    /// Whether the joint law is a product of the two marginals.
    pub fn is_product(self) -> bool {
        !matches!(self, StateKind::TwoModeSv)
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coherent" | "coherentpair" => Ok(StateKind::CoherentPair),
            "sv" | "squeezed" | "twomodesv" => Ok(StateKind::TwoModeSv),
            "thermal" | "thermalpair" => Ok(StateKind::ThermalPair),
            other => Err(Error::invalid(
                "state",
                format!("unknown state `{other}` (expected coherent, sv or thermal)"),
            )),
        }
    }
}

/// Joint photon-number distribution of a two-mode state, truncated at
/// `k_max` photons per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonStatistics {
    kind: StateKind,
    mean_per_arm: f64,
    k_max: usize,
    tail_tol: f64,
    joint: Array2<f64>,
    marginal_s: Vec<f64>,
    marginal_i: Vec<f64>,
    tail_mass: f64,
}

impl PhotonStatistics {
    /// Builds the truncated statistics of `kind` with `mean_per_arm` photons
    /// per pulse in each arm.
    ///
    /// Fails with [`Error::Truncation`] when more than `tail_tol` of the
    /// joint probability lies beyond `k_max`.
    pub fn with_tolerance(
        kind: StateKind,
        mean_per_arm: f64,
        k_max: usize,
        tail_tol: f64,
    ) -> Result<Self> {
        if !(mean_per_arm.is_finite() && mean_per_arm >= 0.0) {
            return Err(Error::invalid(
                "mean_per_arm",
                format!("must be finite and >= 0, got {mean_per_arm}"),
            ));
        }
        if !(1..=MAX_K_MAX).contains(&k_max) {
            return Err(Error::invalid("k_max", format!("must lie in [1, {MAX_K_MAX}], got {k_max}")));
        }
        validate_tail_tol(tail_tol)?;

        let dim = k_max + 1;
        let (joint, marginal, tail_mass) = match kind {
            StateKind::CoherentPair | StateKind::ThermalPair => {
                let (pmf_fn, tail_fn): (fn(usize, f64) -> f64, fn(usize, f64) -> f64) =
                    if kind == StateKind::CoherentPair {
                        (pmf::poisson, pmf::poisson_tail)
                    } else {
                        (pmf::thermal, pmf::thermal_tail)
                    };
                let m: Vec<f64> = (0..dim).map(|k| pmf_fn(k, mean_per_arm)).collect();
                let t = tail_fn(k_max, mean_per_arm);
                let joint = Array2::from_shape_fn((dim, dim), |(a, b)| m[a] * m[b]);
                (joint, m, 2.0 * t - t * t)
            }
            StateKind::TwoModeSv => {
                let m: Vec<f64> = (0..dim).map(|k| pmf::thermal(k, mean_per_arm)).collect();
                let mut joint = Array2::zeros((dim, dim));
                for (k, &p) in m.iter().enumerate() {
                    joint[[k, k]] = p;
                }
                (joint, m, pmf::thermal_tail(k_max, mean_per_arm))
            }
        };

        if tail_mass > tail_tol {
            return Err(Error::Truncation {
                k_max,
                tail_mass,
                tail_tol,
            });
        }

        Ok(PhotonStatistics {
            kind,
            mean_per_arm,
            k_max,
            tail_tol,
            joint,
            marginal_s: marginal.clone(),
            marginal_i: marginal,
            tail_mass,
        })
    }

    /// Statistics with `k_max` picked by [`choose_k_max`].
    pub fn for_mean(kind: StateKind, mean_per_arm: f64, tail_tol: f64) -> Result<Self> {
        validate_tail_tol(tail_tol)?;
        let k_max = choose_k_max(mean_per_arm, tail_tol)?;
        Self::with_tolerance(kind, mean_per_arm, k_max, tail_tol)
    }

    pub fn coherent_pair(mean_per_arm: f64, k_max: usize) -> Result<Self> {
        Self::with_tolerance(StateKind::CoherentPair, mean_per_arm, k_max, DEFAULT_TAIL_TOL)
    }

    pub fn two_mode_sv(mean_per_arm: f64, k_max: usize) -> Result<Self> {
        Self::with_tolerance(StateKind::TwoModeSv, mean_per_arm, k_max, DEFAULT_TAIL_TOL)
    }

    pub fn thermal_pair(mean_per_arm: f64, k_max: usize) -> Result<Self> {
        Self::with_tolerance(StateKind::ThermalPair, mean_per_arm, k_max, DEFAULT_TAIL_TOL)
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn mean_per_arm(&self) -> f64 {
        self.mean_per_arm
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// Probability mass discarded by the truncation.
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// The table `p[k_s][k_i]`.
    pub fn joint(&self) -> &Array2<f64> {
        &self.joint
    }

    pub fn get(&self, k_s: usize, k_i: usize) -> f64 {
        self.joint.get((k_s, k_i)).copied().unwrap_or(0.0)
    }

    pub fn marginal_s(&self) -> &[f64] {
        &self.marginal_s
    }

    pub fn marginal_i(&self) -> &[f64] {
        &self.marginal_i
    }

    pub fn total_mass(&self) -> f64 {
        self.joint.sum()
    }

    pub fn marginal_mean_s(&self) -> f64 {
        self.joint
            .rows()
            .into_iter()
            .enumerate()
            .map(|(k, row)| k as f64 * row.sum())
            .sum()
    }

    pub fn marginal_mean_i(&self) -> f64 {
        self.joint
            .columns()
            .into_iter()
            .enumerate()
            .map(|(k, col)| k as f64 * col.sum())
            .sum()
    }

    /// Covariance of the incident photon numbers `(k_s, k_i)`.
    pub fn covariance(&self) -> f64 {
        let mut cross = 0.0;
        for ((a, b), &p) in self.joint.indexed_iter() {
            cross += (a * b) as f64 * p;
        }
        cross - self.marginal_mean_s() * self.marginal_mean_i()
    }

    /// Variance of `k_s - k_i` over the table.
    pub fn variance_of_difference(&self) -> f64 {
        let mut first = 0.0;
        let mut second = 0.0;
        for ((a, b), &p) in self.joint.indexed_iter() {
            let d = a as f64 - b as f64;
            first += d * p;
            second += d * d * p;
        }
        second - first * first
    }
}

fn validate_tail_tol(tail_tol: f64) -> Result<()> {
    if tail_tol > 0.0 && tail_tol < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "tail_tol",
            format!("must lie in (0, 1), got {tail_tol}"),
        ))
    }
}

/// Picks a Fock truncation for `mean_per_arm` photons per arm.
///
/// Starts from `ceil(mu + 10 sqrt(mu + 1) + 30)` and raises it until the
/// per-arm tail beyond `k_max` is below `tail_tol / 2` for both Poisson and
/// thermal marginals, so that any of the product or correlated states keeps
/// its joint tail below `tail_tol`. The increment is one photon at a time;
/// thermal tails are jumped to directly since they are geometric.
pub fn choose_k_max(mean_per_arm: f64, tail_tol: f64) -> Result<usize> {
    if !(mean_per_arm.is_finite() && mean_per_arm >= 0.0) {
        return Err(Error::invalid(
            "mean_per_arm",
            format!("must be finite and >= 0, got {mean_per_arm}"),
        ));
    }
    validate_tail_tol(tail_tol)?;

    let per_arm = tail_tol / 2.0;
    let mut k_max = (mean_per_arm + 10.0 * (mean_per_arm + 1.0).sqrt() + 30.0).ceil() as usize;
    if mean_per_arm > 0.0 {
        // (mu / (1 + mu))^{k+1} < per_arm
        let ratio_ln = mean_per_arm.ln() - mean_per_arm.ln_1p();
        let needed = (per_arm.ln() / ratio_ln).ceil() as usize;
        k_max = k_max.max(needed.saturating_sub(1));
    }
    let tail = |k| pmf::thermal_tail(k, mean_per_arm).max(pmf::poisson_tail(k, mean_per_arm));
    if k_max > MAX_K_MAX || tail(MAX_K_MAX) >= per_arm {
        return Err(Error::Truncation {
            k_max: MAX_K_MAX,
            tail_mass: tail(MAX_K_MAX),
            tail_tol,
        });
    }
    while tail(k_max) >= per_arm {
        k_max += 1;
    }
    Ok(k_max.max(1))
}
