//! Datasets of fixed-length single-channel signals.

mod io;
mod normalize;
mod split;
mod synth;

pub use io::{load, load_binary, load_csv, save, save_binary, save_csv, BINARY_MAGIC};
pub use normalize::{normalize, Normalization};
pub use split::{split, SplitAssignment, SplitRatios};
pub use synth::{synth_generate, Band, SynthConfig, ALPHA, BETA, HIGH_GAMMA};

use crate::error::{Error, Result};

pub const REST: u8 = 0;
pub const MOVEMENT: u8 = 1;
pub const DEFAULT_SAMPLE_RATE: f64 = 250.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sample_rate: f64,
    signals: Vec<Vec<f64>>,
    labels: Vec<Option<u8>>,
    /// Set once the data has been normalized.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(signals: Vec<Vec<f64>>, labels: Vec<Option<u8>>, sample_rate: f64) -> Result<Self> {
        if signals.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} signals but {} labels",
                signals.len(),
                labels.len()
            )));
        }
        if let Some(first) = signals.first() {
            if let Some(bad) = signals.iter().position(|s| s.len() != first.len()) {
                return Err(Error::Data(format!(
                    "signal {bad} has length {}, expected {}",
                    signals[bad].len(),
                    first.len()
                )));
            }
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if signals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            sample_rate,
            signals,
            labels,
            normalization: None,
        })
    }

    pub fn unlabeled(signals: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        let n = signals.len();
        Self::new(signals, vec![None; n], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    /// Samples per signal.
    pub fn signal_len(&self) -> usize {
        self.signals.first().map_or(0, Vec::len)
    }

    pub fn signals(&self) -> &[Vec<f64>] {
        &self.signals
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn label_values(&self) -> Option<Vec<usize>> {
        self.labels.iter().map(|l| l.map(usize::from)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sample_rate: self.sample_rate,
            signals: indices.iter().map(|&i| self.signals[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            normalization: self.normalization,
        }
    }

    /// Signals whose label equals `class`.
    pub fn of_class(&self, class: u8) -> Vec<&[f64]> {
        self.signals
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == Some(class))
            .map(|(s, _)| s.as_slice())
            .collect()
    }

    /// Flat row-major copy of all values.
    pub fn flat(&self) -> Vec<f64> {
        self.signals.iter().flatten().copied().collect()
    }

    pub fn mean_and_variance(&self) -> (f64, f64) {
        let n = (self.len() * self.signal_len()) as f64;
        let mean = self.signals.iter().flatten().sum::<f64>() / n;
        let var = self
            .signals
            .iter()
            .flatten()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }
}
