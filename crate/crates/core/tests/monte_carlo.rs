use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use mppc_nrf::detector::sample_photocount;
use mppc_nrf::io::{compute_nrf_from_records, PulseRecord};
use mppc_nrf::mc;
use mppc_nrf::{metrics, DetectorParams, PhotonStatistics, ResponseMatrix, StateKind, DEFAULT_TAIL_TOL};

/// Pearson statistic with neighbouring cells pooled until each expects at least 5 draws.
fn chi_square(observed: &[u64], expected: &[f64]) -> (f64, usize) {
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut o, mut e) = (0.0, 0.0);
    for (&ob, &ex) in observed.iter().zip(expected) {
        o += ob as f64;
        e += ex;
        if e >= 5.0 {
            stat += (o - e).powi(2) / e;
            bins += 1;
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        stat += (o - e).powi(2) / e.max(f64::MIN_POSITIVE);
        bins += 1;
    }
    (stat, bins)
}

#[test]
fn photocount_sampler_passes_chi_square() {
    let draws = 200_000u64;
    let cases = [
        (DetectorParams::new(0.163, 0.28, 3).unwrap(), 4),
        (DetectorParams::new(0.145, 0.30, 10).unwrap(), 6),
        (DetectorParams::new(0.9, 0.6, 5).unwrap(), 7),
        (DetectorParams::new(0.5, 0.0, 20).unwrap(), 12),
    ];
    for (case, (p, k)) in cases.iter().enumerate() {
        let r = ResponseMatrix::build(*p, *k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31 + case as u64);
        let mut observed = vec![0u64; r.support_rows()];
        for _ in 0..draws {
            observed[sample_photocount(*k, p, &mut rng)] += 1;
        }
        let expected: Vec<f64> = r.column(*k).iter().map(|&q| q * draws as f64).collect();
        let (stat, bins) = chi_square(&observed, &expected);
        let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
        assert!(stat < critical, "case {case}: chi2={stat} critical={critical}");
    }
}

#[test]
fn empirical_joint_stays_on_the_analytic_support() {
    for (kind, mean) in [(StateKind::CoherentPair, 2.0), (StateKind::TwoModeSv, 0.7), (StateKind::ThermalPair, 1.0)] {
        let p = DetectorParams::new(0.3, 0.2, 4).unwrap();
        let report = mc::simulate(kind, mean, &p, &p, 200_000, 5).unwrap();
        let s = PhotonStatistics::for_mean(kind, mean, DEFAULT_TAIL_TOL).unwrap();
        let r = ResponseMatrix::build(p, s.k_max()).unwrap();
        let joint = metrics::apply_detectors(&s, &r, &r).unwrap();
        assert!(mc::support_violations(&report.empirical_joint, &joint).is_empty(), "{kind}");
        assert_eq!(report.empirical_joint.total(), 200_000);
    }
}

#[test]
fn ideal_detection_of_squeezed_light_has_no_difference_noise() {
    let p = DetectorParams::new(1.0, 0.0, 200).unwrap();
    let report = mc::simulate(StateKind::TwoModeSv, 2.0, &p, &p, 50_000, 3).unwrap();
    assert!(report.empirical_joint.iter().all(|((a, b), _)| a == b));
    assert_eq!(report.nrf_estimate, Some(0.0));
}

#[test]
fn converges_to_the_analytic_joint() {
    let p = DetectorParams::new(0.145, 0.30, 3).unwrap();
    let report = mc::simulate(StateKind::TwoModeSv, 1.0, &p, &p, 1_000_000, 17).unwrap();
    let analytic = mc::analytic_nrf(&report, DEFAULT_TAIL_TOL).unwrap();
    let s = PhotonStatistics::for_mean(StateKind::TwoModeSv, 1.0, DEFAULT_TAIL_TOL).unwrap();
    let r = ResponseMatrix::build(p, s.k_max()).unwrap();
    let joint = metrics::apply_detectors(&s, &r, &r).unwrap();
    assert!(mc::tv_distance(&report.empirical_joint, &joint) < 5e-3);
    let z = (report.nrf_estimate.unwrap() - analytic).abs() / report.nrf_std_error.unwrap();
    assert!(z < 4.0, "z={z}");
}

#[test]
fn poisson_pairs_sit_at_the_shot_noise_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pois = Poisson::new(1.0).unwrap();
    let records: Vec<PulseRecord> = (0..100_000u64)
        .map(|pulse| PulseRecord {
            pulse,
            n_s: pois.sample(&mut rng) as u64,
            n_i: pois.sample(&mut rng) as u64,
        })
        .collect();
    let est = compute_nrf_from_records(&records).unwrap().nrf;
    let table = mppc_nrf::io::records_to_table(&records);
    let se = mc::bootstrap_nrf_error(&table, 200, 1).unwrap();
    assert!((est - 1.0).abs() < 3.0 * se, "nrf={est} se={se}");
}

#[test]
fn runs_are_reproducible() {
    let p = DetectorParams::new(0.163, 0.28, 3).unwrap();
    let a = mc::simulate_pulses(StateKind::CoherentPair, 1.5, &p, &p, 150_000, 42).unwrap();
    let b = mc::simulate_pulses(StateKind::CoherentPair, 1.5, &p, &p, 150_000, 42).unwrap();
    let c = mc::simulate_pulses(StateKind::CoherentPair, 1.5, &p, &p, 150_000, 43).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.nrf_estimate, b.0.nrf_estimate);
    assert_ne!(a.1, c.1);
}
