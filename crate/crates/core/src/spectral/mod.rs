//! Power spectra and the resampling aliasing pipeline.

pub mod svg;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autodiff::LinearMap;
use crate::error::{Error, Result};
use crate::nets::resample::{avgpool_map, upsample_map};
use crate::nets::UpsampleMethod;

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn log_power(&self) -> Vec<f64> {
        self.power.iter().map(|p| log_power(*p)).collect()
    }

    /// Total power in bins with `low <= f <= high`.
    pub fn band_power(&self, low_hz: f64, high_hz: f64) -> f64 {
        band_sum(&self.freqs_hz, &self.power, low_hz, high_hz)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanSpectrum {
    pub freqs_hz: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MeanSpectrum {
    pub fn band_power(&self, low_hz: f64, high_hz: f64) -> f64 {
        band_sum(&self.freqs_hz, &self.mean, low_hz, high_hz)
    }

    /// Rows of `freq_hz,mean_power,std_power`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,mean_power,std_power\n");
        for ((f, m), s) in self.freqs_hz.iter().zip(&self.mean).zip(&self.std) {
            out.push_str(&format!("{f},{m},{s}\n"));
        }
        out
    }
}

fn band_sum(freqs: &[f64], power: &[f64], low: f64, high: f64) -> f64 {
    freqs
        .iter()
        .zip(power)
        .filter(|(f, _)| **f >= low && **f <= high)
        .map(|(_, p)| p)
        .sum()
}

pub fn log_power(p: f64) -> f64 {
    10.0 * (p + 1e-12).log10()
}

pub fn frequency_bins(len: usize, sample_rate: f64) -> Vec<f64> {
    (0..=len / 2)
        .map(|k| k as f64 * sample_rate / len as f64)
        .collect()
}

/// One-sided periodogram with a rectangular window. Interior bins are doubled
/// so that the bins sum to the mean square of the signal.
pub fn power_spectrum(signal: &[f64], sample_rate: f64) -> Result<Spectrum> {
    let l = signal.len();
    if l < 2 {
        return Err(Error::invalid("power spectrum needs at least 2 samples"));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let norm = (l * l) as f64;
    let power = (0..=l / 2)
        .map(|k| {
            let p = buf[k].norm_sqr() / norm;
            if k == 0 || 2 * k == l {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    Ok(Spectrum {
        freqs_hz: frequency_bins(l, sample_rate),
        power,
    })
}

/// Per-bin mean and population standard deviation across signals.
pub fn mean_spectrum<S: AsRef<[f64]> + Sync>(
    signals: &[S],
    sample_rate: f64,
) -> Result<MeanSpectrum> {
    let first = signals
        .first()
        .ok_or_else(|| Error::invalid("mean spectrum of an empty set"))?;
    let l = first.as_ref().len();
    if let Some(bad) = signals.iter().position(|s| s.as_ref().len() != l) {
        return Err(Error::shape(
            "mean_spectrum",
            format!("signal {bad} length differs from {l}"),
        ));
    }
    let spectra = signals
        .par_iter()
        .map(|s| power_spectrum(s.as_ref(), sample_rate).map(|sp| sp.power))
        .collect::<Result<Vec<_>>>()?;
    let n = spectra.len() as f64;
    let bins = l / 2 + 1;
    let mut mean = vec![0.0; bins];
    for sp in &spectra {
        for (m, p) in mean.iter_mut().zip(sp) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = vec![0.0; bins];
    for sp in &spectra {
        for ((s, p), m) in std.iter_mut().zip(sp).zip(&mean) {
            *s += (p - m).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    Ok(MeanSpectrum {
        freqs_hz: frequency_bins(l, sample_rate),
        mean,
        std,
    })
}

#[derive(Clone, Debug)]
pub struct AliasingResult {
    pub original: MeanSpectrum,
    pub methods: Vec<(UpsampleMethod, MeanSpectrum)>,
}

impl AliasingResult {
    /// Lowest frequency that the half-rate signal can no longer represent.
    pub fn half_band_edge(&self) -> f64 {
        let nyquist = *self.original.freqs_hz.last().unwrap_or(&0.0);
        nyquist / 2.0
    }

    /// Mean power strictly above the half-rate Nyquist frequency.
    pub fn high_band_power(&self, method: UpsampleMethod) -> Option<f64> {
        let edge = self.half_band_edge();
        self.methods
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, s)| {
                s.freqs_hz
                    .iter()
                    .zip(&s.mean)
                    .filter(|(f, _)| **f > edge + 1e-9)
                    .map(|(_, p)| p)
                    .sum()
            })
    }

    pub fn spectrum(&self, method: UpsampleMethod) -> Option<&MeanSpectrum> {
        self.methods
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, s)| s)
    }

    /// Long-format rows `series,freq_hz,mean_power,std_power`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,freq_hz,mean_power,std_power\n");
        let series = std::iter::once(("original", &self.original))
            .chain(self.methods.iter().map(|(m, s)| (m.name(), s)));
        for (name, s) in series {
            for ((f, m), d) in s.freqs_hz.iter().zip(&s.mean).zip(&s.std) {
                out.push_str(&format!("{name},{f},{m},{d}\n"));
            }
        }
        out
    }
}

fn round_trip(signal: &[f64], down: &LinearMap, up: &LinearMap) -> Vec<f64> {
    up.apply(&down.apply(signal))
}

/// Average-pool by 2, upsample back with each method, and compare mean spectra.
pub fn aliasing_experiment<S: AsRef<[f64]> + Sync>(
    signals: &[S],
    methods: &[UpsampleMethod],
    sample_rate: f64,
) -> Result<AliasingResult> {
    let first = signals
        .first()
        .ok_or_else(|| Error::invalid("aliasing experiment needs signals"))?;
    let l = first.as_ref().len();
    if l % 2 != 0 {
        return Err(Error::invalid(format!("signal length {l} is odd")));
    }
    let original = mean_spectrum(signals, sample_rate)?;
    let down = avgpool_map(l)?;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let up = upsample_map(method, l / 2)?;
        let rebuilt: Vec<Vec<f64>> = signals
            .par_iter()
            .map(|s| round_trip(s.as_ref(), &down, &up))
            .collect();
        out.push((method, mean_spectrum(&rebuilt, sample_rate)?));
    }
    Ok(AliasingResult {
        original,
        methods: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn cosine(len: usize, k: usize, amp: f64, phase: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (TAU * (k * n) as f64 / len as f64 + phase).cos())
            .collect()
    }

    #[test]
    fn bin_aligned_cosine() {
        let s = power_spectrum(&cosine(64, 5, 2.0, 0.3), 250.0).unwrap();
        assert_eq!(s.power.len(), 33);
        let peak = s.power[5];
        assert!((peak - 2.0).abs() < 1e-12);
        assert!(s
            .power
            .iter()
            .enumerate()
            .all(|(k, p)| k == 5 || *p < 1e-10 * peak));
        assert!((s.freqs_hz[5] - 5.0 * 250.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn constant_and_parseval() {
        let s = power_spectrum(&[3.0; 10], 100.0).unwrap();
        assert!((s.power[0] - 9.0).abs() < 1e-12);
        assert!(s.power[1..].iter().all(|p| p.abs() < 1e-20));

        for len in [7usize, 8] {
            let x: Vec<f64> = (0..len)
                .map(|i| ((i * 37 % 11) as f64 - 4.0) / 3.0)
                .collect();
            let ms = x.iter().map(|v| v * v).sum::<f64>() / len as f64;
            let total: f64 = power_spectrum(&x, 1.0).unwrap().power.iter().sum();
            assert!((total - ms).abs() < 1e-9);
        }
        assert!(power_spectrum(&[1.0], 1.0).is_err());
    }

    #[test]
    fn mean_spectrum_cases() {
        let a = cosine(16, 2, 1.0, 0.0);
        let b = cosine(16, 3, 0.5, 1.0);
        let single = mean_spectrum(&[a.clone()], 16.0).unwrap();
        assert_eq!(single.mean, power_spectrum(&a, 16.0).unwrap().power);
        assert!(single.std.iter().all(|s| *s == 0.0));
        assert!(mean_spectrum(&[a.clone(), a.clone()], 16.0)
            .unwrap()
            .std
            .iter()
            .all(|s| *s == 0.0));
        let mixed = mean_spectrum(&[a.clone(), b.clone()], 16.0).unwrap();
        let pa = power_spectrum(&a, 16.0).unwrap().power;
        let pb = power_spectrum(&b, 16.0).unwrap().power;
        for k in 0..9 {
            assert!((mixed.mean[k] - (pa[k] + pb[k]) / 2.0).abs() < 1e-12);
        }
        assert!(mean_spectrum(&[a, vec![0.0; 8]], 16.0).is_err());
    }

    #[test]
    fn aliasing_constant_and_odd() {
        let sigs = vec![vec![0.7; 32]; 3];
        let r = aliasing_experiment(&sigs, &UpsampleMethod::ALL, 250.0).unwrap();
        for m in UpsampleMethod::ALL {
            assert!(r.high_band_power(m).unwrap().abs() < 1e-24);
            assert!((r.spectrum(m).unwrap().mean[0] - 0.49).abs() < 1e-12);
        }
        assert!(aliasing_experiment(&[vec![0.0; 7]], &UpsampleMethod::ALL, 1.0).is_err());
    }
}
