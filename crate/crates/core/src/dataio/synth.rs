//! Surrogate two-class dataset with 1/f background and narrow-band rhythms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{Dataset, MOVEMENT, REST};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
}

pub const ALPHA: Band = Band {
    low_hz: 8.0,
    high_hz: 13.0,
};
pub const BETA: Band = Band {
    low_hz: 18.0,
    high_hz: 25.0,
};
pub const HIGH_GAMMA: Band = Band {
    low_hz: 60.0,
    high_hz: 90.0,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_rest: usize,
    pub n_movement: usize,
    pub length: usize,
    pub sample_rate: f64,
    pub seed: u64,
    /// Background power density is `background / f`.
    pub background: f64,
    /// Tone amplitude of each rhythm in the rest class.
    pub alpha_amplitude: f64,
    pub beta_amplitude: f64,
    /// Tone amplitude of the high-gamma rhythm in the movement class.
    pub gamma_amplitude: f64,
    /// Power factor applied to alpha and beta in the movement class.
    pub desync_power: f64,
    /// Per-signal relative amplitude jitter.
    pub jitter: f64,
    pub tones_per_band: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_rest: 219,
            n_movement: 219,
            length: 768,
            sample_rate: 250.0,
            seed: 0,
            background: 1.0,
            alpha_amplitude: 3.0,
            beta_amplitude: 1.5,
            gamma_amplitude: 0.6,
            desync_power: 0.5,
            jitter: 0.25,
            tones_per_band: 3,
        }
    }
}

impl SynthConfig {
    fn band_amplitude(&self, class: u8, band: &Band) -> f64 {
        match (class, band) {
            (REST, b) if *b == ALPHA => self.alpha_amplitude,
            (REST, b) if *b == BETA => self.beta_amplitude,
            (MOVEMENT, b) if *b == ALPHA => self.alpha_amplitude * self.desync_power.sqrt(),
            (MOVEMENT, b) if *b == BETA => self.beta_amplitude * self.desync_power.sqrt(),
            (MOVEMENT, b) if *b == HIGH_GAMMA => self.gamma_amplitude,
            _ => 0.0,
        }
    }

    fn bin_hz(&self) -> f64 {
        self.sample_rate / self.length as f64
    }

    /// Expected total rhythm power (mean square) that `class` places in `band`,
    /// excluding the background.
    pub fn expected_rhythm_power(&self, class: u8, band: &Band) -> f64 {
        let a = self.band_amplitude(class, band);
        let mean_sq_jitter = 1.0 + self.jitter * self.jitter / 3.0;
        a * a * mean_sq_jitter / 2.0
    }

    fn validate(&self) -> Result<()> {
        if self.length < 4 || self.sample_rate <= 0.0 {
            return Err(Error::invalid(
                "synthetic signals need length >= 4 and positive sample rate",
            ));
        }
        if !(0.0..1.0).contains(&self.jitter) || self.desync_power < 0.0 || self.tones_per_band == 0
        {
            return Err(Error::invalid(
                "jitter must be in [0, 1); desync power >= 0; tones >= 1",
            ));
        }
        for band in [ALPHA, BETA, HIGH_GAMMA] {
            if band_bins(self, &band).len() < self.tones_per_band {
                return Err(Error::invalid(format!(
                    "band {}-{} Hz has fewer than {} frequency bins",
                    band.low_hz, band.high_hz, self.tones_per_band
                )));
            }
        }
        Ok(())
    }
}

fn band_bins(cfg: &SynthConfig, band: &Band) -> Vec<usize> {
    let df = cfg.bin_hz();
    (1..cfg.length.div_ceil(2))
        .filter(|&k| {
            let f = k as f64 * df;
            f >= band.low_hz && f <= band.high_hz
        })
        .collect()
}

/// Labelled rest/movement signals, rest first. Values are raw, not normalized.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = cfg.length;
    let df = cfg.bin_hz();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(l);
    let half = l as f64 / 2.0;
    let mut signals = Vec::with_capacity(cfg.n_rest + cfg.n_movement);
    let mut labels = Vec::with_capacity(signals.capacity());
    let classes =
        std::iter::repeat_n(REST, cfg.n_rest).chain(std::iter::repeat_n(MOVEMENT, cfg.n_movement));
    for class in classes {
        let mut spec = vec![Complex::new(0.0, 0.0); l];
        // Bins strictly below Nyquist carry a random-phase cosine; spec[k] = (L/2) a e^{i phi}.
        for (k, bin) in spec.iter_mut().enumerate().take(l.div_ceil(2)).skip(1) {
            let f = k as f64 * df;
            let e: f64 = Exp1.sample(&mut rng);
            let amp = (2.0 * cfg.background / f * e).sqrt();
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            *bin = Complex::from_polar(amp * half, phase);
        }
        for band in [ALPHA, BETA, HIGH_GAMMA] {
            let base = cfg.band_amplitude(class, &band);
            let jitter = 1.0 + cfg.jitter * rng.random_range(-1.0..=1.0);
            if base == 0.0 {
                continue;
            }
            let tone = base * jitter / (cfg.tones_per_band as f64).sqrt();
            let mut bins = band_bins(cfg, &band);
            for _ in 0..cfg.tones_per_band {
                let k = bins.swap_remove(rng.random_range(0..bins.len()));
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                spec[k] += Complex::from_polar(tone * half, phase);
            }
        }
        for k in 1..l.div_ceil(2) {
            spec[l - k] = spec[k].conj();
        }
        ifft.process(&mut spec);
        signals.push(spec.iter().map(|c| c.re / l as f64).collect());
        labels.push(Some(class));
    }
    Dataset::new(signals, labels, cfg.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let cfg = SynthConfig {
            n_rest: 3,
            n_movement: 2,
            seed: 4,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a.signal_len(), 768);
        assert_eq!(a.of_class(REST).len(), 3);
        assert_eq!(a, synth_generate(&cfg).unwrap());
        let b = synth_generate(&SynthConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_mean_real_signals() {
        let d = synth_generate(&SynthConfig {
            n_rest: 2,
            n_movement: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        for s in d.signals() {
            let mean: f64 = s.iter().sum::<f64>() / s.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(synth_generate(&SynthConfig {
            length: 2,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            jitter: 1.5,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(synth_generate(&SynthConfig {
            length: 16,
            ..SynthConfig::default()
        })
        .is_err());
    }
}
