use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Classifier split sizes, as exact counts or as fractions of the dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRatios {
    Counts(usize, usize, usize),
    Fractions(f64, f64, f64),
}

impl SplitRatios {
    /// The reference partition of 438 signals.
    pub const REFERENCE: SplitRatios = SplitRatios::Counts(286, 72, 80);

    fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        match *self {
            SplitRatios::Counts(a, b, c) => {
                if a + b + c != n {
                    return Err(Error::invalid(format!(
                        "split counts {a}+{b}+{c} do not sum to {n}"
                    )));
                }
                Ok((a, b, c))
            }
            SplitRatios::Fractions(a, b, c) => {
                if [a, b, c].iter().any(|f| *f < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "split fractions must be non-negative and sum to 1",
                    ));
                }
                let ta = (a * n as f64).round() as usize;
                let tb = ((b * n as f64).round() as usize).min(n - ta);
                Ok((ta, tb, n - ta - tb))
            }
        }
    }
}

/// Disjoint classifier splits. The GAN always trains on every signal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub clf_train: Vec<usize>,
    pub clf_val: Vec<usize>,
    pub clf_test: Vec<usize>,
    pub total: usize,
}

impl SplitAssignment {
    pub fn gan_train(&self) -> Vec<usize> {
        (0..self.total).collect()
    }
}

/// Seeded shuffled split of `n` indices.
pub fn split(n: usize, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let (a, b, _) = ratios.counts(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let clf_test = idx.split_off(a + b);
    let clf_val = idx.split_off(a);
    Ok(SplitAssignment {
        clf_train: idx,
        clf_val,
        clf_test,
        total: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let s = split(438, SplitRatios::REFERENCE, 1).unwrap();
        assert_eq!(
            (s.clf_train.len(), s.clf_val.len(), s.clf_test.len()),
            (286, 72, 80)
        );
        assert_eq!(s.gan_train().len(), 438);
    }

    #[test]
    fn deterministic_disjoint_exhaustive() {
        let a = split(100, SplitRatios::Fractions(0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(
            a,
            split(100, SplitRatios::Fractions(0.6, 0.2, 0.2), 9).unwrap()
        );
        let mut all: Vec<usize> = a
            .clf_train
            .iter()
            .chain(&a.clf_val)
            .chain(&a.clf_test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn mismatched_ratios() {
        assert!(split(10, SplitRatios::Counts(5, 5, 5), 0).is_err());
        assert!(split(10, SplitRatios::Fractions(0.5, 0.2, 0.2), 0).is_err());
    }
}
