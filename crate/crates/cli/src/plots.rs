//! CSV tables and SVG plots for spectra and per-time-point value distributions.

use tsgan_core::spectral::svg::{LinePlot, Series};
use tsgan_core::spectral::{log_power, MeanSpectrum};
use tsgan_core::Error;

/// Distribution of values at each time index across a set of signals.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub q05: Vec<f64>,
    pub median: Vec<f64>,
    pub q95: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TimeDistribution {
    pub fn of(signals: &[Vec<f64>]) -> tsgan_core::Result<Self> {
        let len = signals
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Data("no signals".into()))?;
        let n = signals.len() as f64;
        let mut d = TimeDistribution {
            mean: Vec::with_capacity(len),
            std: Vec::with_capacity(len),
            q05: Vec::with_capacity(len),
            median: Vec::with_capacity(len),
            q95: Vec::with_capacity(len),
        };
        for t in 0..len {
            let mut col: Vec<f64> = signals.iter().map(|s| s[t]).collect();
            let mean = col.iter().sum::<f64>() / n;
            d.mean.push(mean);
            d.std
                .push((col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
            col.sort_by(f64::total_cmp);
            d.q05.push(quantile(&col, 0.05));
            d.median.push(quantile(&col, 0.5));
            d.q95.push(quantile(&col, 0.95));
        }
        Ok(d)
    }
}

pub fn time_csv(dists: &[(&str, TimeDistribution)]) -> String {
    let mut out = String::from("series,t,mean,std,q05,median,q95\n");
    for (name, d) in dists {
        for t in 0..d.mean.len() {
            out.push_str(&format!(
                "{name},{t},{},{},{},{},{}\n",
                d.mean[t], d.std[t], d.q05[t], d.median[t], d.q95[t]
            ));
        }
    }
    out
}

pub fn time_svg(dists: &[(&str, TimeDistribution)]) -> String {
    let mut plot = LinePlot::new("Value distribution per time point", "t", "value");
    for (name, d) in dists {
        let ts: Vec<f64> = (0..d.mean.len()).map(|t| t as f64).collect();
        plot.series.push(Series::new(
            format!("{name} median"),
            ts.clone(),
            d.median.clone(),
        ));
        plot.series.push(Series::new(
            format!("{name} q05"),
            ts.clone(),
            d.q05.clone(),
        ));
        plot.series
            .push(Series::new(format!("{name} q95"), ts, d.q95.clone()));
    }
    plot.render()
}

pub fn spectra_csv(spectra: &[(&str, MeanSpectrum)]) -> String {
    let mut out = String::from("series,freq_hz,mean_power,std_power\n");
    for (name, s) in spectra {
        for ((f, m), d) in s.freqs_hz.iter().zip(&s.mean).zip(&s.std) {
            out.push_str(&format!("{name},{f},{m},{d}\n"));
        }
    }
    out
}

pub fn spectra_svg(title: &str, spectra: &[(&str, MeanSpectrum)]) -> String {
    let mut plot = LinePlot::new(title, "frequency (Hz)", "power (dB)");
    for (name, s) in spectra {
        let ys = s.mean.iter().map(|p| log_power(*p)).collect();
        plot.series.push(Series::new(*name, s.freqs_hz.clone(), ys));
    }
    plot.render()
}
