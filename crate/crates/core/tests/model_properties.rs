use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use mppc_nrf::detector::response_coefficient;
use mppc_nrf::metrics::{self, effective_efficiency, limit_nrf_coherent, limit_nrf_sv};
use mppc_nrf::{DetectorParams, PhotonStatistics, ResponseMatrix, StateKind, DEFAULT_TAIL_TOL};

fn kinds() -> impl Strategy<Value = StateKind> {
    prop_oneof![
        Just(StateKind::CoherentPair),
        Just(StateKind::TwoModeSv),
        Just(StateKind::ThermalPair)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn response_columns_are_complete(
        eta in 0.0..=1.0f64,
        p_ct in 0.0..=1.0f64,
        n_max in 1usize..12,
        k_max in 0usize..30,
    ) {
        let p = DetectorParams::new(eta, p_ct, n_max).unwrap();
        let r = ResponseMatrix::build(p, k_max).unwrap();
        for k in 0..=k_max {
            let col = r.column(k);
            prop_assert!(col.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            prop_assert!((col.sum() - 1.0).abs() < 1e-12, "k={} sum={}", k, col.sum());
            for counts in (2 * k + 1)..n_max {
                prop_assert_eq!(r.get(counts, k), 0.0);
            }
        }
    }

    #[test]
    fn unsaturated_rows_match_the_double_binomial(
        eta in 0.0..=1.0f64,
        p_ct in 0.0..=1.0f64,
        k in 0usize..15,
    ) {
        let n_max = 2 * k + 2;
        let p = DetectorParams::new(eta, p_ct, n_max).unwrap();
        let r = ResponseMatrix::build(p, k).unwrap();
        for counts in 0..n_max {
            let direct: f64 = (0..=k).map(|n| response_coefficient(n, k, counts, &p)).sum();
            prop_assert!((r.get(counts, k) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn states_are_normalised_and_symmetric(kind in kinds(), mean in 0.0..6.0f64) {
        let s = PhotonStatistics::for_mean(kind, mean, DEFAULT_TAIL_TOL).unwrap();
        prop_assert!((s.total_mass() + s.tail_mass() - 1.0).abs() < 1e-12);
        prop_assert!(s.tail_mass() <= DEFAULT_TAIL_TOL);
        prop_assert!((s.marginal_mean_s() - mean).abs() < 1e-8 * (1.0 + mean));
        prop_assert!((s.marginal_mean_s() - s.marginal_mean_i()).abs() < 1e-12);
        if kind == StateKind::TwoModeSv {
            prop_assert!(s.variance_of_difference().abs() < 1e-12);
        }
    }

    #[test]
    fn photocount_joint_is_a_distribution(
        kind in kinds(),
        mean in 0.0..5.0f64,
        eta in 0.0..=1.0f64,
        p_ct in 0.0..=1.0f64,
        n_max in 1usize..8,
    ) {
        let p = DetectorParams::new(eta, p_ct, n_max).unwrap();
        let s = PhotonStatistics::for_mean(kind, mean, DEFAULT_TAIL_TOL).unwrap();
        let r = ResponseMatrix::build(p, s.k_max()).unwrap();
        let fast = metrics::apply_detectors(&s, &r, &r).unwrap();
        let dense = metrics::apply_detectors_dense(&s, &r, &r).unwrap();
        prop_assert!((fast.total_mass() - s.total_mass()).abs() < 1e-12);
        prop_assert!(fast.table().iter().all(|&v| v >= 0.0));
        let diff = (fast.table() - dense.table()).mapv(f64::abs).iter().cloned().fold(0.0, f64::max);
        prop_assert!(diff < 1e-12);
        let m = metrics::photocount_moments(&fast);
        prop_assert!(metrics::variance_of_difference(&m) >= 0.0);
    }

    #[test]
    fn difference_of_limits_is_effective_efficiency(eta in 0.0..=1.0f64, p_ct in 0.0..=1.0f64) {
        let d = limit_nrf_coherent(p_ct) - limit_nrf_sv(p_ct, eta);
        prop_assert!((d - effective_efficiency(eta, p_ct)).abs() < 1e-15);
    }

    #[test]
    fn crosstalk_raises_the_coherent_limit(a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(limit_nrf_coherent(lo) < limit_nrf_coherent(hi));
    }
}

#[test]
fn small_intensity_matches_closed_form_limits() {
    for p_ct in [0.0, 0.1, 0.3] {
        for eta in [0.1, 0.5, 1.0] {
            let p = DetectorParams::new(eta, p_ct, 10).unwrap();
            let coh = metrics::model_nrf(StateKind::CoherentPair, 1e-5, &p, &p, DEFAULT_TAIL_TOL).unwrap();
            let sv = metrics::model_nrf(StateKind::TwoModeSv, 1e-5, &p, &p, DEFAULT_TAIL_TOL).unwrap();
            assert_abs_diff_eq!(coh, limit_nrf_coherent(p_ct), epsilon = 1e-3);
            assert_abs_diff_eq!(sv, limit_nrf_sv(p_ct, eta), epsilon = 1e-3);
        }
    }
}

#[test]
fn saturation_lowers_the_noise_reduction_factor_with_intensity() {
    for (kind, eta, p_ct) in [
        (StateKind::CoherentPair, 0.163, 0.28),
        (StateKind::TwoModeSv, 0.145, 0.30),
    ] {
        let p = DetectorParams::new(eta, p_ct, 3).unwrap();
        let at = |mu| metrics::model_nrf(kind, mu, &p, &p, DEFAULT_TAIL_TOL).unwrap();
        assert!(at(5.0) < at(0.5), "{kind}");
        assert!(at(0.5) < at(0.05), "{kind}");
    }
}

#[test]
fn squeezing_beats_coherent_light_at_equal_settings() {
    let grid: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
    for (eta, p_ct, n_max) in [(0.163, 0.28, 3), (0.145, 0.30, 3), (0.5, 0.1, 6), (0.9, 0.0, 20)] {
        let p = DetectorParams::new(eta, p_ct, n_max).unwrap();
        let coh = metrics::nrf_curve(StateKind::CoherentPair, &p, &p, &grid, DEFAULT_TAIL_TOL).unwrap();
        let sv = metrics::nrf_curve(StateKind::TwoModeSv, &p, &p, &grid, DEFAULT_TAIL_TOL).unwrap();
        for (c, s) in coh.iter().zip(&sv) {
            assert!(s.nrf < c.nrf, "mu={} sv={} coherent={}", c.mean_photons, s.nrf, c.nrf);
        }
    }
}

#[test]
fn distinct_detectors_are_supported() {
    let ps = DetectorParams::new(0.163, 0.28, 3).unwrap();
    let pi = DetectorParams::new(0.15, 0.25, 4).unwrap();
    let a = metrics::model_nrf(StateKind::TwoModeSv, 1.0, &ps, &pi, DEFAULT_TAIL_TOL).unwrap();
    let b = metrics::model_nrf(StateKind::TwoModeSv, 1.0, &pi, &ps, DEFAULT_TAIL_TOL).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    let same = metrics::model_nrf(StateKind::TwoModeSv, 1.0, &ps, &ps, DEFAULT_TAIL_TOL).unwrap();
    assert!((a - same).abs() > 1e-6);
}

#[test]
fn vacuum_is_undefined() {
    let p = DetectorParams::new(0.5, 0.1, 3).unwrap();
    assert!(metrics::model_nrf(StateKind::CoherentPair, 0.0, &p, &p, DEFAULT_TAIL_TOL).is_err());
}
