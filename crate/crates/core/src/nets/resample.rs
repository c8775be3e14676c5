use std::rc::Rc;

use crate::autodiff::LinearMap;
use crate::error::{Error, Result};

/// Upsampling by a factor of 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpsampleMethod {
    Nearest,
    Linear,
    Cubic,
}

/// Downsampling by a factor of 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DownsampleMethod {
    AvgPool,
    StridedConv,
}

impl UpsampleMethod {
    pub const ALL: [UpsampleMethod; 3] = [Self::Nearest, Self::Linear, Self::Cubic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nn",
            Self::Linear => "linear",
            Self::Cubic => "cubic",
        }
    }

    pub fn min_len(self) -> usize {
        match self {
            Self::Nearest => 1,
            Self::Linear => 2,
            Self::Cubic => 4,
        }
    }
}

impl std::str::FromStr for UpsampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" | "nearest" => Ok(Self::Nearest),
            "linear" | "lin" => Ok(Self::Linear),
            "cubic" | "cub" => Ok(Self::Cubic),
            _ => Err(Error::invalid(format!("unknown upsample method `{s}`"))),
        }
    }
}

impl DownsampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::AvgPool => "avgpool",
            Self::StridedConv => "strided-conv",
        }
    }
}

impl std::str::FromStr for DownsampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avgpool" | "avg" => Ok(Self::AvgPool),
            "strided-conv" | "conv" => Ok(Self::StridedConv),
            _ => Err(Error::invalid(format!("unknown downsample method `{s}`"))),
        }
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys_weight(d: f64) -> f64 {
    const A: f64 = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        (A + 2.0) * d.powi(3) - (A + 3.0) * d.powi(2) + 1.0
    } else if d < 2.0 {
        A * d.powi(3) - 5.0 * A * d.powi(2) + 8.0 * A * d - 4.0 * A
    } else {
        0.0
    }
}

/// Linear map from length `len` to `2 * len`. Original samples land on even
/// indices; odd indices interpolate at half-sample offsets, replicating edges.
pub fn upsample_map(method: UpsampleMethod, len: usize) -> Result<LinearMap> {
    if len < method.min_len() {
        return Err(Error::invalid(format!(
            "{} upsampling needs length >= {}, got {len}",
            method.name(),
            method.min_len()
        )));
    }
    let clamp = |i: isize| i.clamp(0, len as isize - 1) as usize;
    let mut taps = Vec::with_capacity(2 * len);
    for i in 0..len {
        match method {
            UpsampleMethod::Nearest => {
                taps.push(vec![(i, 1.0)]);
                taps.push(vec![(i, 1.0)]);
            }
            UpsampleMethod::Linear => {
                taps.push(vec![(i, 1.0)]);
                taps.push(merge(vec![(i, 0.5), (clamp(i as isize + 1), 0.5)]));
            }
            UpsampleMethod::Cubic => {
                taps.push(vec![(i, 1.0)]);
                let row = (-1..=2)
                    .map(|o: isize| (clamp(i as isize + o), keys_weight(o as f64 - 0.5)))
                    .collect();
                taps.push(merge(row));
            }
        }
    }
    Ok(LinearMap {
        in_len: len,
        out_len: 2 * len,
        taps,
    })
}

/// Average of adjacent pairs.
pub fn avgpool_map(len: usize) -> Result<LinearMap> {
    if len % 2 != 0 || len == 0 {
        return Err(Error::invalid(format!(
            "downsampling needs an even length, got {len}"
        )));
    }
    let taps = (0..len / 2)
        .map(|j| vec![(2 * j, 0.5), (2 * j + 1, 0.5)])
        .collect();
    Ok(LinearMap {
        in_len: len,
        out_len: len / 2,
        taps,
    })
}

/// Average pooling by `factor` (a power of two) as a single map.
pub fn avgpool_factor_map(len: usize, factor: usize) -> Result<LinearMap> {
    if factor == 0 || len % factor != 0 {
        return Err(Error::invalid(format!(
            "length {len} is not divisible by {factor}"
        )));
    }
    let w = 1.0 / factor as f64;
    let taps = (0..len / factor)
        .map(|j| (0..factor).map(|k| (j * factor + k, w)).collect())
        .collect();
    Ok(LinearMap {
        in_len: len,
        out_len: len / factor,
        taps,
    })
}

fn merge(row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (i, w) in row {
        match out.iter_mut().find(|(j, _)| *j == i) {
            Some(e) => e.1 += w,
            None => out.push((i, w)),
        }
    }
    out
}

pub(crate) fn shared(map: LinearMap) -> Rc<LinearMap> {
    Rc::new(map)
}

/// Apply a map row-wise to plain `f64` signals.
pub fn apply_rows(map: &LinearMap, signals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    signals.iter().map(|s| map.apply(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_kernel_partition_of_unity() {
        let s: f64 = (-1..=2).map(|o: i32| keys_weight(o as f64 - 0.5)).sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!((keys_weight(0.5) - 0.5625).abs() < 1e-15);
        assert!((keys_weight(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn nearest_and_linear_examples() {
        let nn = upsample_map(UpsampleMethod::Nearest, 2).unwrap();
        assert_eq!(nn.apply(&[0.0, 2.0]), vec![0.0, 0.0, 2.0, 2.0]);
        let lin = upsample_map(UpsampleMethod::Linear, 2).unwrap();
        assert_eq!(lin.apply(&[0.0, 2.0]), vec![0.0, 1.0, 2.0, 2.0]);
        let cub = upsample_map(UpsampleMethod::Cubic, 4).unwrap();
        assert_eq!(cub.apply(&[0.0; 4]), vec![0.0; 8]);
    }

    #[test]
    fn minimum_lengths() {
        assert!(upsample_map(UpsampleMethod::Linear, 1).is_err());
        assert!(upsample_map(UpsampleMethod::Cubic, 3).is_err());
        assert!(avgpool_map(5).is_err());
    }

    #[test]
    fn interpolation_preserves_constants() {
        for m in UpsampleMethod::ALL {
            let map = upsample_map(m, 8).unwrap();
            for v in map.apply(&[3.5f64; 8]) {
                assert!((v - 3.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(
            avgpool_map(4).unwrap().apply(&[1.0, 3.0, 5.0, 7.0]),
            vec![2.0, 6.0]
        );
        let down = avgpool_map(4).unwrap().apply(&[1.0, 3.0, 5.0, 7.0]);
        let up = upsample_map(UpsampleMethod::Nearest, 2)
            .unwrap()
            .apply(&down);
        assert_eq!(up, vec![2.0, 2.0, 6.0, 6.0]);
        assert_eq!(
            avgpool_factor_map(8, 4)
                .unwrap()
                .apply(&[1., 1., 1., 1., 2., 2., 2., 2.]),
            vec![1.0, 2.0]
        );
    }
}
