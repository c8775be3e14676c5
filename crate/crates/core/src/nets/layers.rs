//! Layer operations on recorded values. Inputs are `batch x channels x length`.

use super::resample::{avgpool_map, shared, upsample_map, DownsampleMethod, UpsampleMethod};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;

pub const PIXEL_NORM_EPSILON: f64 = 1e-8;

/// Fan-in scale applied to unit-variance weights at call time.
pub fn he_scale(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Convolution with "same" zero padding, runtime weight scale and bias.
pub fn conv1d<'g, T: Real>(
    x: Var<'g, T>,
    weight: Var<'g, T>,
    bias: Var<'g, T>,
    stride: usize,
    weight_scale: f64,
) -> Result<Var<'g, T>> {
    let w = if weight_scale == 1.0 {
        weight
    } else {
        weight.scale(weight_scale)?
    };
    let y = x.conv1d(w, stride)?;
    add_channel_bias(y, bias)
}

pub fn add_channel_bias<'g, T: Real>(y: Var<'g, T>, bias: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = y.shape();
    bias.reshape(&[1, shape[1], 1])?
        .broadcast_to(&shape)?
        .add(y)
}

/// `batch x in` times `in x out` plus bias.
pub fn linear<'g, T: Real>(
    x: Var<'g, T>,
    weight: Var<'g, T>,
    bias: Var<'g, T>,
    weight_scale: f64,
) -> Result<Var<'g, T>> {
    let w = if weight_scale == 1.0 {
        weight
    } else {
        weight.scale(weight_scale)?
    };
    let y = x.matmul(w)?;
    let shape = y.shape();
    bias.reshape(&[1, shape[1]])?.broadcast_to(&shape)?.add(y)
}

pub fn upsample<'g, T: Real>(x: Var<'g, T>, method: UpsampleMethod) -> Result<Var<'g, T>> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("upsample", "scalar input"))?;
    x.resample(&shared(upsample_map(method, len)?))
}

pub fn avgpool<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let len = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("avgpool", "scalar input"))?;
    x.resample(&shared(avgpool_map(len)?))
}

/// Downsample by 2. The strided variant needs its weights and bias.
pub fn downsample<'g, T: Real>(
    x: Var<'g, T>,
    method: DownsampleMethod,
    conv: Option<(Var<'g, T>, Var<'g, T>, f64)>,
) -> Result<Var<'g, T>> {
    let len = x.shape()[2];
    if len % 2 != 0 {
        return Err(Error::invalid(format!(
            "downsampling needs an even length, got {len}"
        )));
    }
    match (method, conv) {
        (DownsampleMethod::AvgPool, _) => avgpool(x),
        (DownsampleMethod::StridedConv, Some((w, b, s))) => conv1d(x, w, b, 2, s),
        (DownsampleMethod::StridedConv, None) => {
            Err(Error::invalid("strided-conv downsampling requires weights"))
        }
    }
}

/// Per (sample, time step): `x_c / sqrt(mean_c x_c^2 + 1e-8)`.
pub fn pixel_norm<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = x.shape();
    let inv = x
        .square()?
        .mean_axis(1)?
        .add_scalar(PIXEL_NORM_EPSILON)?
        .sqrt()?
        .recip()?;
    x.mul(inv.broadcast_to(&shape)?)
}

/// Appends one channel holding the batch-wide mean of per-feature population
/// standard deviations.
pub fn minibatch_stddev<'g, T: Real>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = x.shape();
    if shape[0] < 2 {
        return Err(Error::invalid(format!(
            "minibatch stddev needs batch >= 2, got {}",
            shape[0]
        )));
    }
    let mean = x.mean_axis(0)?.broadcast_to(&shape)?;
    let std = x.sub(mean)?.square()?.mean_axis(0)?.sqrt()?;
    let s = std
        .mean_all()?
        .reshape(&[1, 1, 1])?
        .broadcast_to(&[shape[0], 1, shape[2]])?;
    x.concat(s, 1)
}
