//! Per-pulse Monte Carlo simulation of the two-detector experiment.
//!
//! Each pulse draws incident photon numbers from the state law, then runs
//! them through [`sample_photocount`] for each arm. Pulses are generated in
//! fixed-size chunks; chunk `c` uses a ChaCha stream seeded with `seed` and
//! selected by `c`, so the samples depend only on the seed and never on the
//! number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::detector::{sample_photocount, DetectorParams};
use crate::error::{Error, Result};
use crate::fock::StateKind;
use crate::metrics::{self, Moments, PhotocountJoint};

/// Pulses generated from one RNG stream.
pub const CHUNK_PULSES: u64 = 1 << 16;

/// Resamples used for the error bar attached to a [`SimulationReport`].
pub const REPORT_BOOTSTRAP_RESAMPLES: usize = 200;

/// Sparse histogram of photocount pairs `(N_s, N_i)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTable {
    cells: BTreeMap<(usize, usize), u64>,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, n_s: usize, n_i: usize, count: u64) {
        if count > 0 {
            *self.cells.entry((n_s, n_i)).or_insert(0) += count;
        }
    }

    pub fn merge(&mut self, other: &CountTable) {
        for (&(a, b), &c) in &other.cells {
            self.add(a, b, c);
        }
    }

    pub fn get(&self, n_s: usize, n_i: usize) -> u64 {
        self.cells.get(&(n_s, n_i)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    /// Cells in `(N_s, N_i)` order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.cells.iter().map(|(&k, &v)| (k, v))
    }

    pub fn sums(&self) -> CountSums {
        let mut sums = CountSums::default();
        for ((a, b), c) in self.iter() {
            sums.add_weighted(a, b, c);
        }
        sums
    }
}

impl FromIterator<(usize, usize)> for CountTable {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        let mut t = CountTable::new();
        for (a, b) in iter {
            t.add(a, b, 1);
        }
        t
    }
}

impl Serialize for CountTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter().map(|((a, b), c)| [a as u64, b as u64, c]))
    }
}

/// Exact integer sums of per-pulse photocounts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CountSums {
    pub n: u64,
    pub sum_s: u128,
    pub sum_i: u128,
    pub sum_ss: u128,
    pub sum_ii: u128,
    pub sum_si: u128,
    /// Sum of `N_s - N_i`.
    pub sum_d: i128,
    /// Sum of `(N_s - N_i)^2`.
    pub sum_dd: u128,
}

impl CountSums {
    pub fn add(&mut self, n_s: usize, n_i: usize) {
        self.add_weighted(n_s, n_i, 1);
    }

    pub fn add_weighted(&mut self, n_s: usize, n_i: usize, weight: u64) {
        let (a, b, w) = (n_s as u128, n_i as u128, weight as u128);
        let d = n_s as i128 - n_i as i128;
        self.n += weight;
        self.sum_s += w * a;
        self.sum_i += w * b;
        self.sum_ss += w * a * a;
        self.sum_ii += w * b * b;
        self.sum_si += w * a * b;
        self.sum_d += weight as i128 * d;
        self.sum_dd += w * (d * d) as u128;
    }

    /// Sample moments (population normalization).
    pub fn moments(&self) -> Moments {
        let n = self.n as f64;
        Moments {
            mean_s: self.sum_s as f64 / n,
            mean_i: self.sum_i as f64 / n,
            second_s: self.sum_ss as f64 / n,
            second_i: self.sum_ii as f64 / n,
            cross: self.sum_si as f64 / n,
        }
    }

    /// Unbiased sample variance of `N_s - N_i`, formed from exact integer
    /// sums so perfectly correlated data give exactly 0.
    pub fn variance_of_difference(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::Degenerate(format!(
                "need at least 2 pulses for a variance, got {}",
                self.n
            )));
        }
        let n = self.n as i128;
        let numerator = n * self.sum_dd as i128 - self.sum_d * self.sum_d;
        Ok(numerator as f64 / (n * (n - 1)) as f64)
    }

    /// Empirical NRF with the unbiased variance of the difference.
    pub fn nrf(&self) -> Result<f64> {
        let var = self.variance_of_difference()?;
        let m = self.moments();
        let total = m.mean_s + m.mean_i;
        if total <= 0.0 {
            return Err(Error::Degenerate("all photocounts are zero".into()));
        }
        Ok(var / total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub state: StateKind,
    pub mean_per_arm: f64,
    pub params_s: DetectorParams,
    pub params_i: DetectorParams,
    pub n_pulses: u64,
    pub seed: u64,
    pub empirical_joint: CountTable,
    pub moments: Moments,
    /// `None` when the NRF is undefined (no photocounts at all).
    pub nrf_estimate: Option<f64>,
    /// Bootstrap standard error; `None` when the data are degenerate.
    pub nrf_std_error: Option<f64>,
}

/// Simulates `n_pulses` pulses and summarizes the photocount statistics.
pub fn simulate(
    kind: StateKind,
    mean_per_arm: f64,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
    n_pulses: u64,
    seed: u64,
) -> Result<SimulationReport> {
    validate(mean_per_arm, params_s, params_i, n_pulses)?;
    let tables: Vec<CountTable> = chunk_ranges(n_pulses)
        .into_par_iter()
        .map(|(chunk, len)| {
            let mut table = CountTable::new();
            run_chunk(kind, mean_per_arm, params_s, params_i, seed, chunk, len, |a, b| {
                table.add(a, b, 1)
            });
            table
        })
        .collect();
    let mut joint = CountTable::new();
    for t in &tables {
        joint.merge(t);
    }
    Ok(report_from_table(
        kind,
        mean_per_arm,
        *params_s,
        *params_i,
        seed,
        joint,
    ))
}

/// Like [`simulate`] but also returns every pulse's `(N_s, N_i)` in order.
pub fn simulate_pulses(
    kind: StateKind,
    mean_per_arm: f64,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
    n_pulses: u64,
    seed: u64,
) -> Result<(SimulationReport, Vec<(usize, usize)>)> {
    validate(mean_per_arm, params_s, params_i, n_pulses)?;
    let chunks: Vec<Vec<(usize, usize)>> = chunk_ranges(n_pulses)
        .into_par_iter()
        .map(|(chunk, len)| {
            let mut out = Vec::with_capacity(len as usize);
            run_chunk(kind, mean_per_arm, params_s, params_i, seed, chunk, len, |a, b| {
                out.push((a, b))
            });
            out
        })
        .collect();
    let pulses: Vec<(usize, usize)> = chunks.into_iter().flatten().collect();
    let joint: CountTable = pulses.iter().copied().collect();
    let report = report_from_table(kind, mean_per_arm, *params_s, *params_i, seed, joint);
    Ok((report, pulses))
}

fn validate(
    mean_per_arm: f64,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
    n_pulses: u64,
) -> Result<()> {
    if n_pulses < 1 {
        return Err(Error::invalid("n_pulses", "must be >= 1"));
    }
    if !(mean_per_arm.is_finite() && (0.0..=1e3).contains(&mean_per_arm)) {
        return Err(Error::invalid(
            "mean_per_arm",
            format!("must lie in [0, 1000], got {mean_per_arm}"),
        ));
    }
    params_s.validate()?;
    params_i.validate()
}

fn chunk_ranges(n_pulses: u64) -> Vec<(u64, u64)> {
    let n_chunks = n_pulses.div_ceil(CHUNK_PULSES);
    (0..n_chunks)
        .map(|c| (c, CHUNK_PULSES.min(n_pulses - c * CHUNK_PULSES)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    kind: StateKind,
    mean_per_arm: f64,
    params_s: &DetectorParams,
    params_i: &DetectorParams,
    seed: u64,
    chunk: u64,
    len: u64,
    mut sink: impl FnMut(usize, usize),
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let sampler = StateSampler::new(kind, mean_per_arm);
    for _ in 0..len {
        let (k_s, k_i) = sampler.draw(&mut rng);
        let n_s = sample_photocount(k_s, params_s, &mut rng);
        let n_i = sample_photocount(k_i, params_i, &mut rng);
        sink(n_s, n_i);
    }
}

fn report_from_table(
    state: StateKind,
    mean_per_arm: f64,
    params_s: DetectorParams,
    params_i: DetectorParams,
    seed: u64,
    joint: CountTable,
) -> SimulationReport {
    let sums = joint.sums();
    let nrf_estimate = sums.nrf().ok();
    let nrf_std_error = nrf_estimate.and_then(|_| {
        bootstrap_nrf_error(&joint, REPORT_BOOTSTRAP_RESAMPLES, seed ^ 0x5eed_b007).ok()
    });
    SimulationReport {
        state,
        mean_per_arm,
        params_s,
        params_i,
        n_pulses: sums.n,
        seed,
        moments: sums.moments(),
        empirical_joint: joint,
        nrf_estimate,
        nrf_std_error,
    }
}

/// Draws incident photon-number pairs from a state law.
#[derive(Debug, Clone, Copy)]
enum StateSampler {
    Vacuum,
    Coherent(Poisson<f64>),
    /// Geometric law via inverse CDF; holds `ln(mu / (1 + mu))`.
    SqueezedVacuum(f64),
    Thermal(f64),
}

impl StateSampler {
    fn new(kind: StateKind, mean: f64) -> Self {
        if mean == 0.0 {
            return StateSampler::Vacuum;
        }
        let ln_ratio = mean.ln() - mean.ln_1p();
        match kind {
            StateKind::CoherentPair => {
                StateSampler::Coherent(Poisson::new(mean).expect("mean validated positive"))
            }
            StateKind::TwoModeSv => StateSampler::SqueezedVacuum(ln_ratio),
            StateKind::ThermalPair => StateSampler::Thermal(ln_ratio),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        match *self {
            StateSampler::Vacuum => (0, 0),
            StateSampler::Coherent(p) => (p.sample(rng) as usize, p.sample(rng) as usize),
            StateSampler::SqueezedVacuum(ln_ratio) => {
                let k = geometric(ln_ratio, rng);
                (k, k)
            }
            StateSampler::Thermal(ln_ratio) => (geometric(ln_ratio, rng), geometric(ln_ratio, rng)),
        }
    }
}

fn geometric<R: Rng + ?Sized>(ln_ratio: f64, rng: &mut R) -> usize {
    // 1 - U lies in (0, 1], so the logarithm is finite.
    let u: f64 = 1.0 - rng.random::<f64>();
    (u.ln() / ln_ratio).floor() as usize
}

/// Standard deviation of the empirical NRF over multinomial resamples of
/// the count table.
pub fn bootstrap_nrf_error(table: &CountTable, n_resamples: usize, seed: u64) -> Result<f64> {
    if n_resamples < 100 {
        return Err(Error::invalid("n_resamples", "must be >= 100"));
    }
    if table.occupied_cells() <= 1 {
        return Err(Error::Degenerate(
            "all pulses fall in a single photocount cell".into(),
        ));
    }
    let cells: Vec<((usize, usize), u64)> = table.iter().collect();
    let n = table.total();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let mut sums = CountSums::default();
        let mut remaining_n = n;
        let mut remaining_p = 1.0;
        for (idx, &((a, b), c)) in cells.iter().enumerate() {
            let p = c as f64 / n as f64;
            let draw = if idx + 1 == cells.len() || remaining_n == 0 {
                remaining_n
            } else {
                let cond = (p / remaining_p).clamp(0.0, 1.0);
                Binomial::new(remaining_n, cond)
                    .expect("probability clamped to [0, 1]")
                    .sample(&mut rng)
            };
            sums.add_weighted(a, b, draw);
            remaining_n -= draw;
            remaining_p -= p;
        }
        if let Ok(v) = sums.nrf() {
            values.push(v);
        }
    }
    if values.len() < 2 {
        return Err(Error::Degenerate("bootstrap resamples have no photocounts".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

/// Total-variation distance between the normalized count table and an
/// analytic joint photocount law.
pub fn tv_distance(table: &CountTable, joint: &PhotocountJoint) -> f64 {
    let n = table.total() as f64;
    let mut dist = 0.0;
    for ((a, b), &q) in joint.table().indexed_iter() {
        dist += (table.get(a, b) as f64 / n - q).abs();
    }
    let (rows, cols) = joint.table().dim();
    for ((a, b), c) in table.iter() {
        if a >= rows || b >= cols {
            dist += c as f64 / n;
        }
    }
    dist / 2.0
}

/// Occupied cells of `table` whose analytic probability is exactly zero.
pub fn support_violations(table: &CountTable, joint: &PhotocountJoint) -> Vec<(usize, usize)> {
    table
        .iter()
        .filter(|&((a, b), _)| joint.get(a, b) == 0.0)
        .map(|(cell, _)| cell)
        .collect()
}

/// Analytic NRF for the same configuration, for comparison with a report.
pub fn analytic_nrf(report: &SimulationReport, tail_tol: f64) -> Result<f64> {
    metrics::model_nrf(
        report.state,
        report.mean_per_arm,
        &report.params_s,
        &report.params_i,
        tail_tol,
    )
}
