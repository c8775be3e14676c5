//! Adam with bias correction and per-tensor step counts.

use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "adam needs lr > 0, betas in [0, 1), epsilon >= 0",
            ))
        }
    }
}

/// One in-place Adam update of a single tensor. `step` counts from 1.
pub fn adam_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    config: &AdamConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::invalid("adam step index starts at 1"));
    }
    for (what, t) in [
        ("gradient", grad),
        ("first moment", &*m),
        ("second moment", &*v),
    ] {
        if t.shape() != param.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{what} shape {:?} vs parameter {:?}",
                    t.shape(),
                    param.shape()
                ),
            ));
        }
    }
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *config;
    let exp = i32::try_from(step).unwrap_or(i32::MAX);
    let c1 = 1.0 - b1.powi(exp);
    let c2 = 1.0 - b2.powi(exp);
    let (pd, md, vd) = (param.data_mut(), m.data_mut(), v.data_mut());
    for i in 0..pd.len() {
        let g = grad.data()[i].to_f64();
        let mi = b1 * md[i].to_f64() + (1.0 - b1) * g;
        let vi = b2 * vd[i].to_f64() + (1.0 - b2) * g * g;
        md[i] = T::from_f64(mi);
        vd[i] = T::from_f64(vi);
        let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        pd[i] = T::from_f64(pd[i].to_f64() - update);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T: Real> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step: u64,
}

/// Optimizer state keyed by parameter name. Parameters without state start fresh.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            moments: BTreeMap::new(),
        }
    }

    /// Apply `grads`, aligned with the order of `params`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((name, p), g) in params.iter_mut().zip(grads) {
            let state = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments {
                    m: Tensor::zeros(p.shape()),
                    v: Tensor::zeros(p.shape()),
                    step: 0,
                });
            state.step += 1;
            adam_step(p, g, &mut state.m, &mut state.v, &self.config, state.step)?;
        }
        Ok(())
    }

    /// Drop state for parameters whose names are not listed.
    pub fn retain_only<'a>(&mut self, names: impl IntoIterator<Item = &'a str>) {
        let keep: std::collections::HashSet<&str> = names.into_iter().collect();
        self.moments.retain(|k, _| keep.contains(k.as_str()));
    }

    pub fn reset(&mut self, name: &str) {
        self.moments.remove(name);
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    /// Flatten to named tensors: `m/<name>`, `v/<name>` and a scalar `t/<name>`.
    pub fn to_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(3 * self.moments.len());
        for (name, s) in &self.moments {
            out.push((format!("m/{name}"), s.m.clone()));
            out.push((format!("v/{name}"), s.v.clone()));
            out.push((
                format!("t/{name}"),
                Tensor::scalar(T::from_f64(s.step as f64)),
            ));
        }
        out
    }

    pub fn from_entries(config: AdamConfig, entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut parts: BTreeMap<String, (Option<Tensor<T>>, Option<Tensor<T>>, Option<u64>)> =
            BTreeMap::new();
        for (key, t) in entries {
            let (kind, name) = key
                .split_once('/')
                .ok_or_else(|| Error::invalid(format!("bad optimizer entry `{key}`")))?;
            let slot = parts.entry(name.to_string()).or_default();
            match kind {
                "m" => slot.0 = Some(t),
                "v" => slot.1 = Some(t),
                "t" => slot.2 = Some(t.item().to_f64() as u64),
                _ => return Err(Error::invalid(format!("bad optimizer entry `{key}`"))),
            }
        }
        let mut moments = BTreeMap::new();
        for (name, part) in parts {
            match part {
                (Some(m), Some(v), Some(step)) if m.shape() == v.shape() => {
                    moments.insert(name, Moments { m, v, step });
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "incomplete optimizer state for `{name}`"
                    )))
                }
            }
        }
        Ok(Adam { config, moments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            epsilon: 0.0,
            ..AdamConfig::default()
        };
        let mut p = t(&[1.0, -2.0]);
        let (mut m, mut v) = (t(&[0.0, 0.0]), t(&[0.0, 0.0]));
        adam_step(&mut p, &t(&[3.0, -0.25]), &mut m, &mut v, &cfg, 1).unwrap();
        assert!((p.data()[0] - (1.0 - 1e-3)).abs() < 1e-15);
        assert!((p.data()[1] - (-2.0 + 1e-3)).abs() < 1e-15);
        assert_eq!(m.data(), &[3.0, -0.25]);
    }

    #[test]
    fn zero_gradient_is_a_no_op_and_errors() {
        let cfg = AdamConfig::default();
        let mut p = t(&[0.5]);
        let (mut m, mut v) = (t(&[0.0]), t(&[0.0]));
        adam_step(&mut p, &t(&[0.0]), &mut m, &mut v, &cfg, 1).unwrap();
        assert_eq!(p.data(), &[0.5]);
        assert!(adam_step(&mut p, &t(&[0.0, 1.0]), &mut m, &mut v, &cfg, 1).is_err());
        assert!(adam_step(&mut p, &t(&[0.0]), &mut m, &mut v, &cfg, 0).is_err());
    }

    #[test]
    fn beta1_zero_keeps_current_gradient() {
        let cfg = AdamConfig::default();
        let mut p = t(&[0.0]);
        let (mut m, mut v) = (t(&[0.0]), t(&[0.0]));
        for (step, g) in [(1, 2.0), (2, -7.0), (3, 0.5)] {
            adam_step(&mut p, &t(&[g]), &mut m, &mut v, &cfg, step).unwrap();
            assert_eq!(m.data(), &[g]);
        }
    }

    #[test]
    fn optimizer_state_round_trip_and_reset() {
        let mut params = ParamSet::new();
        params.insert("a.w", t(&[1.0, 2.0]));
        params.insert("b.w", t(&[3.0]));
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut params, &[t(&[0.1, 0.2]), t(&[0.3])]).unwrap();
        opt.step(&mut params, &[t(&[0.1, 0.2]), t(&[0.3])]).unwrap();
        let back = Adam::from_entries(opt.config, opt.to_entries()).unwrap();
        assert_eq!(back, opt);
        assert_eq!(opt.moments("a.w").unwrap().step, 2);
        opt.retain_only(["b.w"]);
        assert!(opt.moments("a.w").is_none());
        assert!(opt.step(&mut params, &[t(&[0.0, 0.0])]).is_err());
    }
}
