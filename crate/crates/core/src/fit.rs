//! Least-squares recovery of detector parameters `(eta, P, n_max)` from a
//! measured NRF curve.
//!
//! The saturation bound is discrete, so each candidate `n_max` gets its own
//! continuous fit over `(eta, P)` in `[0, 1]^2`. The continuous fits use a
//! damped Gauss-Newton (Levenberg-Marquardt) iteration with central
//! difference Jacobians, started from a small grid of initial points.

use rayon::prelude::*;
use serde::Serialize;

use crate::detector::{DetectorParams, ResponseMatrix};
use crate::error::{Error, Result};
use crate::fock::{PhotonStatistics, StateKind, DEFAULT_TAIL_TOL};
use crate::metrics;

/// Default upper limit of mean photon numbers included in a fit.
pub const DEFAULT_FIT_CEILING: f64 = 5.0;

pub const DEFAULT_NMAX_CANDIDATES: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NrfPoint {
    pub mean_photons: f64,
    pub nrf: f64,
    pub nrf_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NrfDataset {
    pub points: Vec<NrfPoint>,
    pub state_kind: StateKind,
    /// Points with `mean_photons` above this value are kept for plotting
    /// but left out of the objective.
    pub fit_ceiling: f64,
}

impl NrfDataset {
    pub fn new(state_kind: StateKind, points: Vec<NrfPoint>) -> Self {
        NrfDataset {
            points,
            state_kind,
            fit_ceiling: DEFAULT_FIT_CEILING,
        }
    }

    pub fn with_fit_ceiling(mut self, fit_ceiling: f64) -> Self {
        self.fit_ceiling = fit_ceiling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.mean_photons > 0.0 && p.mean_photons.is_finite()) {
                return Err(Error::invalid(
                    "mean_photons",
                    format!("point {i}: must be positive, got {}", p.mean_photons),
                ));
            }
            if !(p.nrf >= 0.0 && p.nrf.is_finite()) {
                return Err(Error::invalid(
                    "nrf",
                    format!("point {i}: must be finite and >= 0, got {}", p.nrf),
                ));
            }
            if let Some(e) = p.nrf_error {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(Error::invalid(
                        "nrf_error",
                        format!("point {i}: must be positive, got {e}"),
                    ));
                }
            }
        }
        if !(self.fit_ceiling > 0.0) {
            return Err(Error::invalid("fit_ceiling", "must be positive"));
        }
        Ok(())
    }

    /// Points that enter the objective.
    pub fn fitted_points(&self) -> Vec<NrfPoint> {
        self.points
            .iter()
            .copied()
            .filter(|p| p.mean_photons <= self.fit_ceiling)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Initial values tried for both `eta` and `P`; every pair is a start.
    pub start_grid: Vec<f64>,
    pub max_iterations: usize,
    pub rss_rel_tol: f64,
    pub step_tol: f64,
    pub jacobian_step: f64,
    pub tail_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            start_grid: vec![0.05, 0.2, 0.5],
            max_iterations: 200,
            rss_rel_tol: 1e-10,
            step_tol: 1e-8,
            jacobian_step: 1e-5,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

/// Best continuous fit found for one candidate `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateFit {
    pub n_max: usize,
    pub eta: f64,
    pub p_ct: f64,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub state_kind: StateKind,
    pub eta_hat: f64,
    /// Curvature-based standard error (`s^2 (J^T W J)^-1`, `s^2 = RSS/(n-2)`).
    /// This is a local approximation, not a full uncertainty analysis.
    pub eta_std_error: Option<f64>,
    pub p_hat: f64,
    pub p_std_error: Option<f64>,
    pub n_max_hat: usize,
    /// Weighted residual sum of squares at the optimum.
    pub rss: f64,
    /// Unweighted coefficient of determination.
    pub r_squared: f64,
    pub n_points_used: usize,
    pub converged: bool,
    pub iterations: usize,
    /// True when an estimate sits on the boundary of `[0, 1]`.
    pub at_bound: bool,
    pub candidates: Vec<CandidateFit>,
}

/// Model NRF at `mean_photons` with identical detectors on both arms.
pub fn nrf_model(
    mean_photons: f64,
    eta: f64,
    p_ct: f64,
    n_max: usize,
    state_kind: StateKind,
) -> Result<f64> {
    if !(mean_photons > 0.0) {
        return Err(Error::invalid("mean_photons", "must be positive"));
    }
    let params = DetectorParams::new(eta, p_ct, n_max)?;
    metrics::model_nrf(state_kind, mean_photons, &params, &params, DEFAULT_TAIL_TOL)
}

/// Model NRFs over a fixed set of intensities. Photon statistics are built
/// once; each evaluation only rebuilds the detector response.
struct CurveModel {
    states: Vec<PhotonStatistics>,
    k_max: usize,
}

impl CurveModel {
    fn new(kind: StateKind, means: &[f64], tail_tol: f64) -> Result<Self> {
        let states = means
            .iter()
            .map(|&m| PhotonStatistics::for_mean(kind, m, tail_tol))
            .collect::<Result<Vec<_>>>()?;
        let k_max = states.iter().map(|s| s.k_max()).max().unwrap_or(1);
        Ok(CurveModel { states, k_max })
    }

    fn eval(&self, eta: f64, p_ct: f64, n_max: usize) -> Result<Vec<f64>> {
        let params = DetectorParams::new(eta, p_ct, n_max)?;
        let r = ResponseMatrix::build(params, self.k_max)?;
        self.states
            .iter()
            .map(|s| {
                let joint = metrics::apply_detectors(s, &r, &r)?;
                metrics::nrf(&metrics::photocount_moments(&joint))
            })
            .collect()
    }
}

struct Objective<'a> {
    model: &'a CurveModel,
    observed: Vec<f64>,
    sqrt_w: Vec<f64>,
    n_max: usize,
}

impl Objective<'_> {
    fn residuals(&self, x: [f64; 2]) -> Option<Vec<f64>> {
        let model = self.model.eval(x[0], x[1], self.n_max).ok()?;
        Some(
            model
                .iter()
                .zip(&self.observed)
                .zip(&self.sqrt_w)
                .map(|((m, y), w)| w * (m - y))
                .collect(),
        )
    }

    /// Central differences, switching to one-sided ones at the box edges.
    fn jacobian(&self, x: [f64; 2], r0: &[f64], h: f64) -> Option<Vec<[f64; 2]>> {
        let mut jac = vec![[0.0; 2]; r0.len()];
        for j in 0..2 {
            let (lo, hi) = (x[j] - h, x[j] + h);
            let (rl, rh, span) = if lo >= 0.0 && hi <= 1.0 {
                let mut xl = x;
                xl[j] = lo;
                let mut xh = x;
                xh[j] = hi;
                (self.residuals(xl)?, self.residuals(xh)?, 2.0 * h)
            } else if hi <= 1.0 {
                let mut xh = x;
                xh[j] = hi;
                (r0.to_vec(), self.residuals(xh)?, h)
            } else {
                let mut xl = x;
                xl[j] = lo;
                (self.residuals(xl)?, r0.to_vec(), h)
            };
            for (row, (a, b)) in jac.iter_mut().zip(rl.iter().zip(&rh)) {
                row[j] = (b - a) / span;
            }
        }
        Some(jac)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn normal_equations(jac: &[[f64; 2]], r: &[f64]) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut a = [[0.0; 2]; 2];
    let mut g = [0.0; 2];
    for (row, &ri) in jac.iter().zip(r) {
        for p in 0..2 {
            g[p] += row[p] * ri;
            for q in 0..2 {
                a[p][q] += row[p] * row[q];
            }
        }
    }
    (a, g)
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

struct Descent {
    x: [f64; 2],
    rss: f64,
    converged: bool,
    iterations: usize,
}

fn levenberg_marquardt(obj: &Objective<'_>, start: [f64; 2], opts: &FitOptions) -> Option<Descent> {
    let mut x = start;
    let mut r = obj.residuals(x)?;
    let mut rss = sum_sq(&r);
    let mut lambda = 1e-3;

    for iter in 1..=opts.max_iterations {
        if rss == 0.0 {
            return Some(Descent { x, rss, converged: true, iterations: iter - 1 });
        }
        let jac = obj.jacobian(x, &r, opts.jacobian_step)?;
        let (a, g) = normal_equations(&jac, &r);
        let scale = [a[0][0].max(1e-300), a[1][1].max(1e-300)];

        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a;
            damped[0][0] += lambda * scale[0];
            damped[1][1] += lambda * scale[1];
            let Some(delta) = solve2(damped, [-g[0], -g[1]]) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [
                (x[0] + delta[0]).clamp(0.0, 1.0),
                (x[1] + delta[1]).clamp(0.0, 1.0),
            ];
            let step = ((trial[0] - x[0]).powi(2) + (trial[1] - x[1]).powi(2)).sqrt();
            let candidate = obj.residuals(trial).map(|rt| (sum_sq(&rt), rt));
            match candidate {
                Some((rss_t, rt)) if rss_t < rss => {
                    let rel = (rss - rss_t) / rss;
                    x = trial;
                    r = rt;
                    rss = rss_t;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < opts.rss_rel_tol || step < opts.step_tol {
                        return Some(Descent { x, rss, converged: true, iterations: iter });
                    }
                    break;
                }
                _ => {
                    if step < opts.step_tol {
                        // No representable move lowers the objective.
                        return Some(Descent { x, rss, converged: true, iterations: iter });
                    }
                    lambda *= 10.0;
                }
            }
        }
        if !accepted {
            return Some(Descent { x, rss, converged: true, iterations: iter });
        }
    }
    Some(Descent {
        x,
        rss,
        converged: false,
        iterations: opts.max_iterations,
    })
}

/// Fits `(eta, P)` for every candidate `n_max` and keeps the candidate with
/// the lowest residual sum of squares. Ties go to the smaller `n_max`, then
/// to the lexicographically smaller `(eta, P)`.
pub fn fit(dataset: &NrfDataset, n_max_candidates: &[usize], options: &FitOptions) -> Result<FitResult> {
    dataset.validate()?;
    if n_max_candidates.is_empty() || n_max_candidates.contains(&0) {
        return Err(Error::invalid(
            "n_max_candidates",
            "need at least one candidate, all >= 1",
        ));
    }
    if options.start_grid.is_empty() || options.start_grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("start_grid", "values must lie in [0, 1]"));
    }
    let points = dataset.fitted_points();
    if points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "{} point(s) at or below the fit ceiling {}; at least 4 are needed",
            points.len(),
            dataset.fit_ceiling
        )));
    }

    let means: Vec<f64> = points.iter().map(|p| p.mean_photons).collect();
    let observed: Vec<f64> = points.iter().map(|p| p.nrf).collect();
    let weighted = points.iter().all(|p| p.nrf_error.is_some());
    if !weighted && points.iter().any(|p| p.nrf_error.is_some()) {
        log::warn!("some points lack nrf errors; fitting without weights");
    }
    let sqrt_w: Vec<f64> = points
        .iter()
        .map(|p| match (weighted, p.nrf_error) {
            (true, Some(e)) => 1.0 / e,
            _ => 1.0,
        })
        .collect();

    let model = CurveModel::new(dataset.state_kind, &means, options.tail_tol)?;
    let starts: Vec<[f64; 2]> = options
        .start_grid
        .iter()
        .flat_map(|&e| options.start_grid.iter().map(move |&p| [e, p]))
        .collect();

    let mut candidates: Vec<usize> = n_max_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();

    let branches: Vec<Option<CandidateFit>> = candidates
        .par_iter()
        .map(|&n_max| {
            let obj = Objective {
                model: &model,
                observed: observed.clone(),
                sqrt_w: sqrt_w.clone(),
                n_max,
            };
            let runs: Vec<Descent> = starts
                .par_iter()
                .filter_map(|&s| levenberg_marquardt(&obj, s, options))
                .collect();
            runs.into_iter()
                .filter(|d| d.converged)
                .min_by(|a, b| {
                    a.rss
                        .total_cmp(&b.rss)
                        .then(a.x[0].total_cmp(&b.x[0]))
                        .then(a.x[1].total_cmp(&b.x[1]))
                })
                .map(|d| CandidateFit {
                    n_max,
                    eta: d.x[0],
                    p_ct: d.x[1],
                    rss: d.rss,
                    converged: d.converged,
                    iterations: d.iterations,
                })
        })
        .collect();

    let fits: Vec<CandidateFit> = branches.into_iter().flatten().collect();
    let best = fits
        .iter()
        .copied()
        .min_by(|a, b| {
            a.rss
                .total_cmp(&b.rss)
                .then(a.n_max.cmp(&b.n_max))
                .then(a.eta.total_cmp(&b.eta))
                .then(a.p_ct.total_cmp(&b.p_ct))
        })
        .ok_or(Error::NonConvergence {
            iterations: options.max_iterations,
        })?;

    let obj = Objective {
        model: &model,
        observed: observed.clone(),
        sqrt_w,
        n_max: best.n_max,
    };
    let x = [best.eta, best.p_ct];
    let (eta_std_error, p_std_error) = obj
        .residuals(x)
        .and_then(|r| {
            let jac = obj.jacobian(x, &r, options.jacobian_step)?;
            let (a, _) = normal_equations(&jac, &r);
            let s2 = best.rss / (points.len() - 2) as f64;
            let inv_col0 = solve2(a, [1.0, 0.0])?;
            let inv_col1 = solve2(a, [0.0, 1.0])?;
            let se = |v: f64| (v >= 0.0 && v.is_finite()).then(|| (s2 * v).sqrt());
            Some((se(inv_col0[0]), se(inv_col1[1])))
        })
        .unwrap_or((None, None));

    let predicted = model.eval(best.eta, best.p_ct, best.n_max)?;
    let r_squared = coefficient_of_determination(&observed, &predicted)?;
    let at_bound = [best.eta, best.p_ct].iter().any(|&v| v == 0.0 || v == 1.0);
    if at_bound {
        log::warn!(
            "fit optimum lies on the parameter bound (eta={}, P={})",
            best.eta,
            best.p_ct
        );
    }

    Ok(FitResult {
        state_kind: dataset.state_kind,
        eta_hat: best.eta,
        eta_std_error,
        p_hat: best.p_ct,
        p_std_error,
        n_max_hat: best.n_max,
        rss: best.rss,
        r_squared,
        n_points_used: points.len(),
        converged: best.converged,
        iterations: best.iterations,
        at_bound,
        candidates: fits,
    })
}

/// `R^2 = 1 - RSS / TSS` with TSS taken about the mean of `observed`.
pub fn coefficient_of_determination(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations vs {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::Degenerate("R^2 needs at least 2 points".into()));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let tss: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if tss == 0.0 {
        return Err(Error::Degenerate("observed values have zero variance".into()));
    }
    let rss: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, m)| (y - m).powi(2))
        .sum();
    Ok(1.0 - rss / tss)
}

/// Unweighted `R^2` of `result` on the points of `dataset` it was fitted to.
pub fn goodness_of_fit(dataset: &NrfDataset, result: &FitResult) -> Result<f64> {
    let points = dataset.fitted_points();
    let observed: Vec<f64> = points.iter().map(|p| p.nrf).collect();
    let predicted = points
        .iter()
        .map(|p| nrf_model(p.mean_photons, result.eta_hat, result.p_hat, result.n_max_hat, dataset.state_kind))
        .collect::<Result<Vec<_>>>()?;
    coefficient_of_determination(&observed, &predicted)
}
