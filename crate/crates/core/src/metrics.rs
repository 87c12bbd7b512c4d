//! Joint photocount statistics, photocount moments and the noise
//! reduction factor `NRF = Var(N_s - N_i) / <N_s + N_i>`.

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{DetectorParams, ResponseMatrix};
use crate::error::{Error, Result};
use crate::fock::{PhotonStatistics, StateKind};

/// Joint distribution `q[N_s][N_i]` of the two detectors' photocounts.
///
/// The table covers counts up to `min(n_max, 2 k_max)` for each arm; larger
/// counts have zero probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotocountJoint {
    q: Array2<f64>,
    params_s: DetectorParams,
    params_i: DetectorParams,
}

impl PhotocountJoint {
    pub fn new(q: Array2<f64>, params_s: DetectorParams, params_i: DetectorParams) -> Result<Self> {
        if q.nrows() > params_s.n_max + 1 || q.ncols() > params_i.n_max + 1 {
            return Err(Error::DimensionMismatch(format!(
                "joint table {}x{} exceeds n_max ({}, {})",
                q.nrows(),
                q.ncols(),
                params_s.n_max,
                params_i.n_max
            )));
        }
        if q.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("q", "entries must be nonnegative"));
        }
        Ok(PhotocountJoint {
            q,
            params_s,
            params_i,
        })
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn get(&self, n_s: usize, n_i: usize) -> f64 {
        self.q.get((n_s, n_i)).copied().unwrap_or(0.0)
    }

    pub fn params_s(&self) -> &DetectorParams {
        &self.params_s
    }

    pub fn params_i(&self) -> &DetectorParams {
        &self.params_i
    }

    pub fn total_mass(&self) -> f64 {
        self.q.sum()
    }
}

/// First and second photocount moments of both arms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Moments {
    pub mean_s: f64,
    pub mean_i: f64,
    pub second_s: f64,
    pub second_i: f64,
    pub cross: f64,
}

fn check_truncation(stats: &PhotonStatistics, r: &ResponseMatrix, arm: &str) -> Result<()> {
    if r.k_max() < stats.k_max() {
        return Err(Error::DimensionMismatch(format!(
            "{arm} response covers k <= {} but the state extends to k = {}",
            r.k_max(),
            stats.k_max()
        )));
    }
    Ok(())
}

/// Pushes the input photon statistics through both detector responses.
///
/// Product states use their marginals and the squeezed vacuum uses its
/// diagonal, so the cost stays linear in the Fock truncation.
pub fn apply_detectors(
    stats: &PhotonStatistics,
    r_s: &ResponseMatrix,
    r_i: &ResponseMatrix,
) -> Result<PhotocountJoint> {
    check_truncation(stats, r_s, "signal")?;
    check_truncation(stats, r_i, "idler")?;
    let k_max = stats.k_max();
    let rows_s = r_s.n_max().min(2 * k_max) + 1;
    let rows_i = r_i.n_max().min(2 * k_max) + 1;
    let rs = r_s.table().slice(s![..rows_s, ..=k_max]);
    let ri = r_i.table().slice(s![..rows_i, ..=k_max]);

    let q = if stats.kind().is_product() {
        let ms = ndarray::ArrayView1::from(stats.marginal_s());
        let mi = ndarray::ArrayView1::from(stats.marginal_i());
        let vs = rs.dot(&ms);
        let vi = ri.dot(&mi);
        Array2::from_shape_fn((rows_s, rows_i), |(a, b)| vs[a] * vi[b])
    } else {
        let diag = stats.joint().diag();
        let weighted = &rs * &diag;
        weighted.dot(&ri.t())
    };
    PhotocountJoint::new(q, *r_s.params(), *r_i.params())
}

/// Same result as [`apply_detectors`], computed from the full joint table as
/// `R_s P R_i^T` without exploiting any structure of the state.
pub fn apply_detectors_dense(
    stats: &PhotonStatistics,
    r_s: &ResponseMatrix,
    r_i: &ResponseMatrix,
) -> Result<PhotocountJoint> {
    check_truncation(stats, r_s, "signal")?;
    check_truncation(stats, r_i, "idler")?;
    let k_max = stats.k_max();
    let rs = r_s.table().slice(s![.., ..=k_max]);
    let ri = r_i.table().slice(s![.., ..=k_max]);
    let q = rs.dot(stats.joint()).dot(&ri.t());
    let rows_s = r_s.n_max().min(2 * k_max) + 1;
    let rows_i = r_i.n_max().min(2 * k_max) + 1;
    PhotocountJoint::new(
        q.slice(s![..rows_s, ..rows_i]).to_owned(),
        *r_s.params(),
        *r_i.params(),
    )
}

pub fn photocount_moments(joint: &PhotocountJoint) -> Moments {
    let mut m = Moments::default();
    for ((a, b), &p) in joint.table().indexed_iter() {
        if p == 0.0 {
            continue;
        }
        let (a, b) = (a as f64, b as f64);
        m.mean_s += a * p;
        m.mean_i += b * p;
        m.second_s += a * a * p;
        m.second_i += b * b * p;
        m.cross += a * b * p;
    }
    m
}

/// `<N_s^2> - <N_s>^2 + <N_i^2> - <N_i>^2 - 2<N_s N_i> + 2<N_s><N_i>`.
///
/// Rounding can push an exactly-zero variance a few ulps negative; such
/// values are reported as 0.
pub fn variance_of_difference(m: &Moments) -> f64 {
    let v = m.second_s - m.mean_s * m.mean_s + m.second_i - m.mean_i * m.mean_i - 2.0 * m.cross
        + 2.0 * m.mean_s * m.mean_i;
    v.max(0.0)
}

pub fn nrf(m: &Moments) -> Result<f64> {
    let total = m.mean_s + m.mean_i;
    if !(total > 0.0) {
        return Err(Error::UndefinedAtVacuum);
    }
    Ok(variance_of_difference(m) / total)
}

/// NRF of `stats` seen through detectors with the given parameters.
pub fn nrf_for_state(
    stats: &PhotonStatistics,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
) -> Result<f64> {
    let r_s = ResponseMatrix::build(*params_s, stats.k_max())?;
    let r_i = if params_i == params_s {
        r_s.clone()
    } else {
        ResponseMatrix::build(*params_i, stats.k_max())?
    };
    let joint = apply_detectors(stats, &r_s, &r_i)?;
    nrf(&photocount_moments(&joint))
}

/// Model NRF at `mean_per_arm` photons per arm with a Fock truncation
/// chosen for `tail_tol`.
pub fn model_nrf(
    kind: StateKind,
    mean_per_arm: f64,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
    tail_tol: f64,
) -> Result<f64> {
    let stats = PhotonStatistics::for_mean(kind, mean_per_arm, tail_tol)?;
    nrf_for_state(&stats, params_s, params_i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub mean_photons: f64,
    pub nrf: f64,
}

/// NRF against mean photon number per arm. Grid points at zero are skipped
/// since the NRF is 0/0 there; [`limit_nrf_coherent`] and
/// [`limit_nrf_sv`] give the analytic value instead.
pub fn nrf_curve(
    kind: StateKind,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
    mean_grid: &[f64],
    tail_tol: f64,
) -> Result<Vec<CurvePoint>> {
    if let Some(&bad) = mean_grid.iter().find(|&&m| !(m >= 0.0 && m.is_finite())) {
        return Err(Error::invalid(
            "mean_grid",
            format!("grid values must be finite and >= 0, got {bad}"),
        ));
    }
    let skipped = mean_grid.iter().filter(|&&m| m == 0.0).count();
    if skipped > 0 {
        log::warn!("skipping {skipped} grid point(s) at zero mean photon number");
    }
    mean_grid
        .par_iter()
        .filter(|&&m| m > 0.0)
        .map(|&mean_photons| {
            model_nrf(kind, mean_photons, params_s, params_i, tail_tol)
                .map(|nrf| CurvePoint { mean_photons, nrf })
        })
        .collect()
}

/// Low-intensity NRF of a coherent pair, `(1 + 3P) / (1 + P)`.
pub fn limit_nrf_coherent(p_ct: f64) -> f64 {
    (1.0 + 3.0 * p_ct) / (1.0 + p_ct)
}

/// Low-intensity NRF of two-mode squeezed vacuum,
/// `(1 + 3P) / (1 + P) - (1 + P) eta`.
pub fn limit_nrf_sv(p_ct: f64, eta: f64) -> f64 {
    limit_nrf_coherent(p_ct) - effective_efficiency(eta, p_ct)
}

/// Mean photocounts per incident photon, `(1 + P) eta`.
pub fn effective_efficiency(eta: f64, p_ct: f64) -> f64 {
    (1.0 + p_ct) * eta
}
