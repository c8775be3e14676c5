use proptest::prelude::*;
use tsgan_core::dataio::{
    load_binary, load_csv, normalize, save_binary, save_csv, synth_generate, Band, Dataset,
    SynthConfig, ALPHA, BETA, HIGH_GAMMA, MOVEMENT, REST,
};
use tsgan_core::spectral::{frequency_bins, mean_spectrum};

/// Expected 1/f background power summed over the band's bins.
fn background_power(cfg: &SynthConfig, band: &Band) -> f64 {
    frequency_bins(cfg.length, cfg.sample_rate)
        .into_iter()
        .filter(|f| {
            *f > 0.0 && *f >= band.low_hz && *f <= band.high_hz && *f < cfg.sample_rate / 2.0
        })
        .map(|f| cfg.background / f)
        .sum()
}

#[test]
fn band_powers_match_construction() {
    let cfg = SynthConfig {
        n_rest: 500,
        n_movement: 500,
        seed: 21,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).unwrap();
    let mut rhythm = std::collections::HashMap::new();
    for class in [REST, MOVEMENT] {
        let spec = mean_spectrum(&data.of_class(class), cfg.sample_rate).unwrap();
        for band in [ALPHA, BETA, HIGH_GAMMA] {
            let measured = spec.band_power(band.low_hz, band.high_hz);
            let bg = background_power(&cfg, &band);
            let expected = bg + cfg.expected_rhythm_power(class, &band);
            assert!(
                (measured / expected - 1.0).abs() < 0.1,
                "class {class} band {band:?}: {measured} vs {expected}"
            );
            rhythm.insert((class, band.low_hz as u32), measured - bg);
        }
    }
    for band in [ALPHA, BETA] {
        let key = band.low_hz as u32;
        let ratio = rhythm[&(MOVEMENT, key)] / rhythm[&(REST, key)];
        assert!(
            (ratio - cfg.desync_power).abs() < 0.1 * cfg.desync_power,
            "{band:?}: {ratio}"
        );
    }
}

#[test]
fn normalized_synthetic_data_is_in_unit_range() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let (n, _) = normalize(&data).unwrap();
    assert_eq!((n.len(), n.signal_len()), (438, 768));
    assert!(n.flat().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(n.flat().iter().any(|v| v.abs() == 1.0));
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..6, 2usize..20).prop_flat_map(|(n, l)| {
        (
            prop::collection::vec(prop::collection::vec(-100.0f32..100.0, l), n),
            prop::collection::vec(prop::option::of(0u8..3), n),
        )
            .prop_map(|(s, labels)| {
                let signals = s
                    .into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect();
                Dataset::new(signals, labels, 250.0).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_is_idempotent(data in dataset()) {
        prop_assume!(data.flat().iter().any(|v| *v != data.flat()[0]));
        let (once, _) = normalize(&data).unwrap();
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.flat().iter().zip(twice.flat()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(once.flat().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn binary_round_trip_is_bit_identical(data in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsg");
        save_binary(&data, &p).unwrap();
        let back = load_binary(&p).unwrap();
        prop_assert_eq!(&back, &data);
        let q = dir.path().join("e.tsg");
        save_binary(&back, &q).unwrap();
        prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn csv_round_trip_within_precision(data in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&data, &p).unwrap();
        let back = load_csv(&p).unwrap();
        prop_assert_eq!(back.labels(), data.labels());
        for (a, b) in back.flat().iter().zip(data.flat()) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }
}
