use super::Dataset;
use crate::error::{Error, Result};

/// Affine map `(x - mean) / scale` applied dataset-wide.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.mean
    }

    pub fn apply_dataset(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for s in &mut out.signals {
            for v in s.iter_mut() {
                *v = self.apply(*v);
            }
        }
        out.normalization = Some(*self);
        out
    }

    pub fn invert_dataset(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for s in &mut out.signals {
            for v in s.iter_mut() {
                *v = self.invert(*v);
            }
        }
        out.normalization = None;
        out
    }
}

/// Subtract the global mean, then divide by the global maximum absolute value.
pub fn normalize(data: &Dataset) -> Result<(Dataset, Normalization)> {
    if data.is_empty() || data.signal_len() == 0 {
        return Err(Error::Data("cannot normalize an empty dataset".into()));
    }
    let (mean, _) = data.mean_and_variance();
    let scale = data
        .signals
        .iter()
        .flatten()
        .map(|v| (v - mean).abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Data("dataset is constant; cannot scale".into()));
    }
    let record = Normalization { mean, scale };
    Ok((record.apply_dataset(data), record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_example() {
        let d = Dataset::unlabeled(vec![vec![0.0, 2.0]], 250.0).unwrap();
        let (n, rec) = normalize(&d).unwrap();
        assert_eq!(
            rec,
            Normalization {
                mean: 1.0,
                scale: 1.0
            }
        );
        assert_eq!(n.signals()[0], vec![-1.0, 1.0]);
    }

    #[test]
    fn fixed_point_and_inverse() {
        let d = Dataset::unlabeled(vec![vec![-1.0, 0.5], vec![1.0, -0.5]], 250.0).unwrap();
        let (n, _) = normalize(&d).unwrap();
        assert_eq!(n.signals(), d.signals());

        let raw =
            Dataset::unlabeled(vec![vec![3.0, 7.5, -2.0], vec![10.0, 4.0, 0.25]], 250.0).unwrap();
        let (n, rec) = normalize(&raw).unwrap();
        assert!(n
            .signals()
            .iter()
            .flatten()
            .all(|v| (-1.0..=1.0).contains(v)));
        let back = rec.invert_dataset(&n);
        for (a, b) in back
            .signals()
            .iter()
            .flatten()
            .zip(raw.signals().iter().flatten())
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_dataset_fails() {
        let d = Dataset::unlabeled(vec![vec![2.0, 2.0]], 250.0).unwrap();
        assert!(normalize(&d).is_err());
    }
}
