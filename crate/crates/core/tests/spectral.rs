use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsgan_core::nets::UpsampleMethod;
use tsgan_core::spectral::{aliasing_experiment, mean_spectrum, power_spectrum};

const RATE: f64 = 250.0;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval(signal in prop::collection::vec(-3.0f64..3.0, 2..200)) {
        let s = power_spectrum(&signal, RATE).unwrap();
        prop_assert_eq!(s.power.len(), signal.len() / 2 + 1);
        let mean_sq = signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64;
        prop_assert!((s.power.iter().sum::<f64>() - mean_sq).abs() < 1e-9);
    }

    #[test]
    fn magnitude_is_shift_invariant(k in 1usize..31, shift in 0usize..64, phase in 0.0f64..TAU, amp in 0.1f64..3.0) {
        let l = 64;
        let tone: Vec<f64> = (0..l).map(|n| amp * (TAU * (k * n) as f64 / l as f64 + phase).cos()).collect();
        let shifted: Vec<f64> = (0..l).map(|n| tone[(n + shift) % l]).collect();
        let (a, b) = (power_spectrum(&tone, RATE).unwrap(), power_spectrum(&shifted, RATE).unwrap());
        for (x, y) in a.power.iter().zip(&b.power) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn mean_spectrum_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let signals: Vec<Vec<f64>> = (0..7)
        .map(|_| (0..50).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let m = mean_spectrum(&signals, RATE).unwrap();
    let spectra: Vec<Vec<f64>> = signals
        .iter()
        .map(|s| power_spectrum(s, RATE).unwrap().power)
        .collect();
    for bin in 0..m.mean.len() {
        let mean = spectra.iter().map(|p| p[bin]).sum::<f64>() / 7.0;
        let var = spectra.iter().map(|p| (p[bin] - mean).powi(2)).sum::<f64>() / 7.0;
        assert!((m.mean[bin] - mean).abs() < 1e-12);
        assert!((m.std[bin] - var.sqrt()).abs() < 1e-12);
    }
}

/// Random sums of cosines on bins below an eighth of the sample rate, so the
/// average-pool step leaves most of their power in place.
fn band_limited(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let tones: Vec<(usize, f64, f64)> = (0..8)
                .map(|_| {
                    (
                        rng.random_range(1..l / 8),
                        rng.random_range(0.2..1.0),
                        rng.random_range(0.0..TAU),
                    )
                })
                .collect();
            (0..l)
                .map(|t| {
                    tones
                        .iter()
                        .map(|(k, a, p)| a * (TAU * (k * t) as f64 / l as f64 + p).cos())
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[test]
fn aliasing_ordering_on_band_limited_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let signals = band_limited(&mut rng, 100, 256);
    let r = aliasing_experiment(&signals, &UpsampleMethod::ALL, RATE).unwrap();
    let original_high: f64 = r
        .original
        .freqs_hz
        .iter()
        .zip(&r.original.mean)
        .filter(|(f, _)| **f > r.half_band_edge() + 1e-9)
        .map(|(_, p)| p)
        .sum();
    assert!(original_high < 1e-20);
    let nn = r.high_band_power(UpsampleMethod::Nearest).unwrap();
    let lin = r.high_band_power(UpsampleMethod::Linear).unwrap();
    let cub = r.high_band_power(UpsampleMethod::Cubic).unwrap();
    assert!(
        nn > lin && lin >= cub && cub > 0.0,
        "nn {nn} linear {lin} cubic {cub}"
    );
    assert!(nn / lin >= 2.0);
    let low = |s: &tsgan_core::spectral::MeanSpectrum| s.band_power(0.0, r.half_band_edge());
    for m in [UpsampleMethod::Linear, UpsampleMethod::Cubic] {
        let ratio = low(r.spectrum(m).unwrap()) / low(&r.original);
        assert!((ratio - 1.0).abs() <= 0.2, "{m:?}: {ratio}");
    }
}

#[test]
fn constant_signals_survive_round_trips() {
    let signals = vec![vec![0.75; 32]; 3];
    let r = aliasing_experiment(&signals, &UpsampleMethod::ALL, RATE).unwrap();
    for m in UpsampleMethod::ALL {
        assert_eq!(r.high_band_power(m), Some(0.0));
        assert!((r.spectrum(m).unwrap().mean[0] - 0.5625).abs() < 1e-12);
    }
}
