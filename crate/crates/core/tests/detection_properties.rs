use prfusion::detection::*;
use prfusion::dynamics::Wrench;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn times(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * 1e-3).collect()
}

fn wrench_series() -> impl Strategy<Value = Vec<Wrench>> {
    prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -3.0f64..3.0), 1..200)
        .prop_map(|v| v.into_iter().map(|(x, y, m)| Wrench::new(x, y, m)).collect())
}

proptest! {
    #[test]
    fn raising_thresholds_never_fires_earlier(
        series in wrench_series(),
        f in 0.1f64..40.0, m in 0.01f64..2.0,
        df in 0.0f64..20.0, dm in 0.0f64..1.0,
        required in 1usize..3, extra in 0usize..3,
    ) {
        let t = times(series.len());
        let debounce = Debounce { required, window: required + extra };
        let low = DetectorConfig { debounce, ..DetectorConfig::new(f, m) };
        let high = DetectorConfig { debounce, ..DetectorConfig::new(f + df, m + dm) };
        let a = detect(&series, &t, &low, Some(0.05));
        let b = detect(&series, &t, &high, Some(0.05));
        if b.fired {
            prop_assert!(a.fired);
            prop_assert!(a.tick.unwrap() <= b.tick.unwrap());
        }
    }

    #[test]
    fn calibrated_thresholds_never_fire_on_their_own_log(series in wrench_series(), factor in 1.0f64..3.0) {
        let cfg = calibrate_thresholds(&series, factor, &ThresholdFloor::default()).unwrap();
        let report = detect(&series, &times(series.len()), &cfg, None);
        prop_assert!(!report.fired);
    }

    #[test]
    fn metrics_ignore_a_common_offset(
        truth in prop::collection::vec(-10.0f64..10.0, 3..100),
        noise in prop::collection::vec(-1.0f64..1.0, 100),
        offset in -100.0f64..100.0,
    ) {
        let est: Vec<f64> = truth.iter().zip(&noise).map(|(t, n)| t + n).collect();
        let Ok(base) = nrmse(&est, &truth) else { return Ok(()); };
        let shift = |v: &[f64]| v.iter().map(|x| x + offset).collect::<Vec<_>>();
        let shifted = nrmse(&shift(&est), &shift(&truth)).unwrap();
        prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1.0));
        let s0 = snr(&est, &truth).unwrap();
        let s1 = snr(&shift(&est), &shift(&truth)).unwrap();
        prop_assert!((s0 - s1).abs() < 1e-6);
    }

    #[test]
    fn nrmse_ignores_a_common_positive_scale(
        truth in prop::collection::vec(-10.0f64..10.0, 3..100),
        noise in prop::collection::vec(-1.0f64..1.0, 100),
        scale in 1e-3f64..1e3,
    ) {
        let est: Vec<f64> = truth.iter().zip(&noise).map(|(t, n)| t + n).collect();
        let Ok(base) = nrmse(&est, &truth) else { return Ok(()); };
        let mul = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
        prop_assert!((base - nrmse(&mul(&est), &mul(&truth)).unwrap()).abs() <= 1e-9 * base.max(1.0));
    }
}

#[test]
fn sine_with_white_noise_matches_closed_form_metrics() {
    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let noise = Normal::new(0.0, 0.02).unwrap();
    let truth: Vec<f64> = (0..n).map(|k| (k as f64 * 0.01).sin()).collect();
    let est: Vec<f64> = truth.iter().map(|t| t + noise.sample(&mut rng)).collect();
    let e = nrmse(&est, &truth).unwrap();
    assert!((e - 0.01).abs() < 2e-4, "nrmse {e}");
    let s = snr(&est, &truth).unwrap();
    let expected = 10.0 * (0.5f64 / 4e-4).log10();
    assert!((s - expected).abs() < 0.2, "snr {s} vs {expected}");
}

#[test]
fn perfect_estimate_reports_capped_snr() {
    let truth = [0.0, 1.0, 0.5, -1.0];
    assert_eq!(nrmse(&truth, &truth).unwrap(), 0.0);
    assert_eq!(snr(&truth, &truth).unwrap(), SNR_CAP_DB);
    assert!(matches!(nrmse(&[1.0, 1.0], &[2.0, 2.0]), Err(DetectionError::DegenerateRange)));
}

#[test]
fn reduction_examples() {
    assert_eq!(reduction_percent(Some(6.0), Some(3.0)), Some(50.0));
    assert_eq!(reduction_percent(Some(4.0), Some(4.0)), Some(0.0));
    assert_eq!(reduction_percent(None, Some(3.0)), None);
}

#[test]
fn latency_is_measured_from_onset() {
    let mut series = vec![Wrench::ZERO; 20];
    series[12] = Wrench::new(8.0, 0.0, 0.0);
    let t = times(20);
    let r = detect(&series, &t, &DetectorConfig::new(7.5, 0.5), Some(0.010));
    assert!(r.fired && !r.false_positive);
    assert_eq!(r.latency_ms, Some(2.0));
    assert_eq!(r.channel, Some(Channel::Fx));
    let early = detect(&series, &t, &DetectorConfig::new(7.5, 0.5), Some(0.015));
    assert!(early.false_positive);
}

#[test]
fn debounce_requires_repeated_crossings() {
    let mut series = vec![Wrench::ZERO; 20];
    series[5] = Wrench::new(0.0, 0.0, 1.0);
    series[9] = Wrench::new(0.0, 0.0, 1.0);
    series[10] = Wrench::new(0.0, 0.0, 1.0);
    let cfg = DetectorConfig {
        debounce: Debounce { required: 2, window: 3 },
        ..DetectorConfig::new(7.5, 0.5)
    };
    let r = detect(&series, &times(20), &cfg, Some(0.0));
    assert_eq!(r.tick, Some(10));
    assert_eq!(r.channel, Some(Channel::Mz));
}
