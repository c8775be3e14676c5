//! Progressive generator and critic.

use rand::Rng;
use rand_distr::StandardNormal;

use super::layers::{self, he_scale};
use super::params::{Bound, ParamSet};
use super::resample::{DownsampleMethod, UpsampleMethod};
use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub channels: usize,
    pub latent_dim: usize,
    /// Signal length at stage 0.
    pub base_len: usize,
    pub max_stage: usize,
    pub upsample: UpsampleMethod,
    pub downsample: DownsampleMethod,
    pub leaky_slope: f64,
    pub equalized_lr: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 50,
            latent_dim: 200,
            base_len: 24,
            max_stage: 5,
            upsample: UpsampleMethod::Cubic,
            downsample: DownsampleMethod::StridedConv,
            leaky_slope: 0.2,
            equalized_lr: true,
        }
    }
}

impl NetConfig {
    pub fn stage_len(&self, stage: usize) -> usize {
        self.base_len << stage
    }

    pub fn full_len(&self) -> usize {
        self.stage_len(self.max_stage)
    }

    fn check_stage(&self, stage: usize) -> Result<()> {
        if stage > self.max_stage {
            return Err(Error::invalid(format!(
                "stage {stage} outside 0..={}",
                self.max_stage
            )));
        }
        if self.base_len % 2 != 0 || self.base_len < 4 {
            return Err(Error::invalid("base length must be even and at least 4"));
        }
        Ok(())
    }
}

/// One layer of a network description.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Width 9 or 1 convolution; stride 1 keeps length, stride 2 halves it.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    /// Dense layer on the flattened sample; output reshaped to `out_shape`.
    Linear {
        in_features: usize,
        out_shape: Vec<usize>,
    },
    Upsample(UpsampleMethod),
    Downsample {
        method: DownsampleMethod,
        channels: usize,
    },
    LeakyRelu(f64),
    PixelNorm,
    MinibatchStddev,
}

impl LayerSpec {
    pub fn conv9(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel: 9,
            stride: 1,
        }
    }

    pub fn conv1(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel: 1,
            stride: 1,
        }
    }

    /// Weight shape and fan-in, for layers with parameters.
    fn weight_shape(&self) -> Option<(Vec<usize>, usize, usize)> {
        match self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => Some((vec![*out_ch, *in_ch, *kernel], in_ch * kernel, *out_ch)),
            LayerSpec::Linear {
                in_features,
                out_shape,
            } => {
                let out: usize = out_shape.iter().product();
                Some((vec![*in_features, out], *in_features, out))
            }
            LayerSpec::Downsample {
                method: DownsampleMethod::StridedConv,
                channels,
            } => Some((vec![*channels, *channels, 9], channels * 9, *channels)),
            _ => None,
        }
    }
}

/// A named group of layers; parameters of layer `i` are `<name>.<i>.w` / `.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Critic,
}

/// A generator or critic at one progressive stage, with fade-in blend.
#[derive(Clone, Debug, PartialEq)]
pub struct StagedNetwork<T> {
    role: Role,
    config: NetConfig,
    stage: usize,
    fade_alpha: f64,
    params: ParamSet<T>,
}

fn generator_blocks(c: &NetConfig, stage: usize) -> Vec<Block> {
    let ch = c.channels;
    let mut blocks = vec![Block {
        name: "stem".into(),
        layers: vec![
            LayerSpec::Linear {
                in_features: c.latent_dim,
                out_shape: vec![ch, c.base_len / 2],
            },
            LayerSpec::LeakyRelu(c.leaky_slope),
        ],
    }];
    for j in 0..=stage {
        blocks.push(Block {
            name: format!("block{j}"),
            layers: vec![
                LayerSpec::Upsample(c.upsample),
                LayerSpec::conv9(ch, ch),
                LayerSpec::LeakyRelu(c.leaky_slope),
                LayerSpec::PixelNorm,
                LayerSpec::conv9(ch, ch),
                LayerSpec::LeakyRelu(c.leaky_slope),
                LayerSpec::PixelNorm,
            ],
        });
    }
    for j in stage.saturating_sub(1)..=stage {
        blocks.push(Block {
            name: format!("to_signal{j}"),
            layers: vec![LayerSpec::conv1(ch, 1)],
        });
    }
    blocks
}

fn critic_blocks(c: &NetConfig, stage: usize) -> Vec<Block> {
    let ch = c.channels;
    let mut blocks = Vec::new();
    for j in (stage.saturating_sub(1)..=stage).rev() {
        blocks.push(Block {
            name: format!("from_signal{j}"),
            layers: vec![LayerSpec::conv1(1, ch), LayerSpec::LeakyRelu(c.leaky_slope)],
        });
    }
    for j in (0..=stage).rev() {
        let mut layers = Vec::new();
        let first_in = if j == 0 {
            layers.push(LayerSpec::MinibatchStddev);
            ch + 1
        } else {
            ch
        };
        layers.extend([
            LayerSpec::conv9(first_in, ch),
            LayerSpec::LeakyRelu(c.leaky_slope),
            LayerSpec::conv9(ch, ch),
            LayerSpec::LeakyRelu(c.leaky_slope),
            LayerSpec::Downsample {
                method: c.downsample,
                channels: ch,
            },
        ]);
        blocks.push(Block {
            name: format!("block{j}"),
            layers,
        });
    }
    blocks.push(Block {
        name: "head".into(),
        layers: vec![LayerSpec::Linear {
            in_features: ch * c.base_len / 2,
            out_shape: vec![1],
        }],
    });
    blocks
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("fade alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

pub fn build_generator<T: Real, R: Rng>(
    config: &NetConfig,
    stage: usize,
    fade_alpha: f64,
    rng: &mut R,
) -> Result<StagedNetwork<T>> {
    StagedNetwork::build(Role::Generator, config, stage, fade_alpha, rng)
}

pub fn build_critic<T: Real, R: Rng>(
    config: &NetConfig,
    stage: usize,
    fade_alpha: f64,
    rng: &mut R,
) -> Result<StagedNetwork<T>> {
    StagedNetwork::build(Role::Critic, config, stage, fade_alpha, rng)
}

impl<T: Real> StagedNetwork<T> {
    pub fn build<R: Rng>(
        role: Role,
        config: &NetConfig,
        stage: usize,
        fade_alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.check_stage(stage)?;
        check_alpha(fade_alpha)?;
        let mut net = StagedNetwork {
            role,
            config: config.clone(),
            stage,
            fade_alpha,
            params: ParamSet::new(),
        };
        net.init_missing(rng);
        Ok(net)
    }

    /// Reassemble a network from stored parameters.
    pub fn from_params(
        role: Role,
        config: &NetConfig,
        stage: usize,
        fade_alpha: f64,
        params: ParamSet<T>,
    ) -> Result<Self> {
        config.check_stage(stage)?;
        check_alpha(fade_alpha)?;
        let net = StagedNetwork {
            role,
            config: config.clone(),
            stage,
            fade_alpha,
            params,
        };
        for name in net.param_names() {
            let expected = net.param_shape(&name).expect("listed parameter");
            match net.params.get(&name) {
                Some(t) if t.shape() == expected.as_slice() => {}
                Some(t) => {
                    return Err(Error::shape(
                        "from_params",
                        format!("`{name}` has shape {:?}, expected {expected:?}", t.shape()),
                    ))
                }
                None => return Err(Error::invalid(format!("missing parameter `{name}`"))),
            }
        }
        Ok(net)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn fade_alpha(&self) -> f64 {
        self.fade_alpha
    }

    pub fn set_fade_alpha(&mut self, alpha: f64) -> Result<()> {
        check_alpha(alpha)?;
        self.fade_alpha = alpha;
        Ok(())
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Signal length produced (generator) or consumed (critic).
    pub fn signal_len(&self) -> usize {
        self.config.stage_len(self.stage)
    }

    pub fn blocks(&self) -> Vec<Block> {
        match self.role {
            Role::Generator => generator_blocks(&self.config, self.stage),
            Role::Critic => critic_blocks(&self.config, self.stage),
        }
    }

    fn param_layers(&self) -> Vec<(String, LayerSpec)> {
        let mut out = Vec::new();
        for block in self.blocks() {
            for (i, layer) in block.layers.iter().enumerate() {
                if layer.weight_shape().is_some() {
                    out.push((format!("{}.{i}", block.name), layer.clone()));
                }
            }
        }
        out
    }

    fn param_names(&self) -> Vec<String> {
        self.param_layers()
            .into_iter()
            .flat_map(|(p, _)| [format!("{p}.w"), format!("{p}.b")])
            .collect()
    }

    fn param_shape(&self, name: &str) -> Option<Vec<usize>> {
        let (prefix, suffix) = name.rsplit_once('.')?;
        let (_, layer) = self.param_layers().into_iter().find(|(p, _)| p == prefix)?;
        let (w, _, out) = layer.weight_shape()?;
        match suffix {
            "w" => Some(w),
            "b" => Some(vec![out]),
            _ => None,
        }
    }

    fn init_missing<R: Rng>(&mut self, rng: &mut R) {
        for (prefix, layer) in self.param_layers() {
            let (shape, fan_in, out) = layer.weight_shape().expect("parameter layer");
            let wname = format!("{prefix}.w");
            if !self.params.contains(&wname) {
                let gain = if self.config.equalized_lr {
                    1.0
                } else {
                    he_scale(fan_in)
                };
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64(gain * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                self.params
                    .insert(wname, Tensor::new(&shape, data).expect("sized"));
            }
            let bname = format!("{prefix}.b");
            if !self.params.contains(&bname) {
                self.params.insert(bname, Tensor::zeros(&[out]));
            }
        }
    }

    /// Advance to the next stage: new blocks get fresh parameters, adapters no
    /// longer reachable are dropped, and the blend restarts at `fade_alpha`.
    /// Returns the names of the fresh parameters.
    pub fn grow<R: Rng>(&mut self, fade_alpha: f64, rng: &mut R) -> Result<Vec<String>> {
        self.config.check_stage(self.stage + 1)?;
        check_alpha(fade_alpha)?;
        self.stage += 1;
        self.fade_alpha = fade_alpha;
        let before: Vec<String> = self.params.names().map(String::from).collect();
        let keep = self.param_names();
        self.params.retain(|n| keep.iter().any(|k| k == n));
        self.init_missing(rng);
        Ok(keep.into_iter().filter(|n| !before.contains(n)).collect())
    }

    fn scale_for(&self, fan_in: usize) -> f64 {
        if self.config.equalized_lr {
            he_scale(fan_in)
        } else {
            1.0
        }
    }

    fn run_block<'g>(
        &self,
        bound: &Bound<'g, T>,
        name: &str,
        mut h: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let block = self
            .blocks()
            .into_iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::invalid(format!("no block `{name}` at stage {}", self.stage)))?;
        for (i, layer) in block.layers.iter().enumerate() {
            let p = |s: &str| bound.get(&format!("{name}.{i}.{s}"));
            h = match layer {
                LayerSpec::Conv {
                    in_ch,
                    kernel,
                    stride,
                    ..
                } => layers::conv1d(h, p("w")?, p("b")?, *stride, self.scale_for(in_ch * kernel))?,
                LayerSpec::Linear {
                    in_features,
                    out_shape,
                } => {
                    let batch = h.shape()[0];
                    let flat = h.reshape(&[batch, *in_features])?;
                    let y = layers::linear(flat, p("w")?, p("b")?, self.scale_for(*in_features))?;
                    let mut shape = vec![batch];
                    shape.extend_from_slice(out_shape);
                    y.reshape(&shape)?
                }
                LayerSpec::Upsample(m) => layers::upsample(h, *m)?,
                LayerSpec::Downsample { method, channels } => {
                    let conv = match method {
                        DownsampleMethod::StridedConv => {
                            Some((p("w")?, p("b")?, self.scale_for(channels * 9)))
                        }
                        DownsampleMethod::AvgPool => None,
                    };
                    layers::downsample(h, *method, conv)?
                }
                LayerSpec::LeakyRelu(s) => h.leaky_relu(*s)?,
                LayerSpec::PixelNorm => layers::pixel_norm(h)?,
                LayerSpec::MinibatchStddev => layers::minibatch_stddev(h)?,
            };
        }
        Ok(h)
    }

    fn blend<'g>(&self, main: Var<'g, T>, skip: Var<'g, T>) -> Result<Var<'g, T>> {
        main.scale(self.fade_alpha)?
            .add(skip.scale(1.0 - self.fade_alpha)?)
    }

    fn fading(&self) -> bool {
        self.stage > 0 && self.fade_alpha < 1.0
    }

    /// Generator: `batch x latent` to `batch x 1 x length`.
    /// Critic: `batch x 1 x length` to `batch x 1` scores.
    pub fn forward<'g>(&self, bound: &Bound<'g, T>, input: Var<'g, T>) -> Result<Var<'g, T>> {
        let s = self.stage;
        match self.role {
            Role::Generator => {
                let shape = input.shape();
                if shape.len() != 2 || shape[1] != self.config.latent_dim {
                    return Err(Error::shape(
                        "generator",
                        format!(
                            "latent batch must be N x {}, got {shape:?}",
                            self.config.latent_dim
                        ),
                    ));
                }
                let mut h = self.run_block(bound, "stem", input)?;
                for j in 0..s {
                    h = self.run_block(bound, &format!("block{j}"), h)?;
                }
                let top = self.run_block(bound, &format!("block{s}"), h)?;
                let main = self.run_block(bound, &format!("to_signal{s}"), top)?;
                if !self.fading() {
                    return Ok(main);
                }
                let prev = self.run_block(bound, &format!("to_signal{}", s - 1), h)?;
                self.blend(main, layers::upsample(prev, self.config.upsample)?)
            }
            Role::Critic => {
                let shape = input.shape();
                if shape.len() != 3 || shape[1] != 1 || shape[2] != self.signal_len() {
                    return Err(Error::shape(
                        "critic",
                        format!("input must be N x 1 x {}, got {shape:?}", self.signal_len()),
                    ));
                }
                let mut h = self.run_block(bound, &format!("from_signal{s}"), input)?;
                h = self.run_block(bound, &format!("block{s}"), h)?;
                if self.fading() {
                    let skip = self.run_block(
                        bound,
                        &format!("from_signal{}", s - 1),
                        layers::avgpool(input)?,
                    )?;
                    h = self.blend(h, skip)?;
                }
                for j in (0..s).rev() {
                    h = self.run_block(bound, &format!("block{j}"), h)?;
                }
                let out = self.run_block(bound, "head", h)?;
                out.reshape(&[shape[0], 1])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetConfig {
        NetConfig {
            channels: 4,
            latent_dim: 6,
            ..NetConfig::default()
        }
    }

    #[test]
    fn invalid_stage_and_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_generator::<f64, _>(&small(), 6, 1.0, &mut rng).is_err());
        assert!(build_critic::<f64, _>(&small(), 0, 1.5, &mut rng).is_err());
    }

    #[test]
    fn critic_batch_of_four_gives_four_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = build_critic::<f64, _>(&small(), 1, 1.0, &mut rng).unwrap();
        let g = Graph::new();
        let b = c.params().bind(&g, false).unwrap();
        let x = g.constant(Tensor::full(&[4, 1, 48], 0.1)).unwrap();
        assert_eq!(c.forward(&b, x).unwrap().shape(), vec![4, 1]);
        let wrong = g.constant(Tensor::zeros(&[4, 1, 24])).unwrap();
        assert!(c.forward(&b, wrong).is_err());
    }

    #[test]
    fn grow_adds_fresh_block_and_drops_stale_adapter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut gnet = build_generator::<f64, _>(&small(), 1, 1.0, &mut rng).unwrap();
        let old = gnet.params().get("block1.1.w").unwrap().clone();
        let fresh = gnet.grow(0.0, &mut rng).unwrap();
        assert!(fresh.contains(&"block2.1.w".to_string()));
        assert!(fresh.contains(&"to_signal2.0.w".to_string()));
        assert!(!gnet.params().contains("to_signal0.0.w"));
        assert_eq!(gnet.params().get("block1.1.w").unwrap(), &old);
        assert_eq!(gnet.stage(), 2);
    }

    #[test]
    fn from_params_validates_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = build_critic::<f64, _>(&small(), 0, 1.0, &mut rng).unwrap();
        let ok = StagedNetwork::from_params(Role::Critic, &small(), 0, 1.0, c.params().clone());
        assert!(ok.is_ok());
        let mut broken = c.params().clone();
        broken.insert("head.0.w", Tensor::zeros(&[3, 1]));
        assert!(StagedNetwork::from_params(Role::Critic, &small(), 0, 1.0, broken).is_err());
    }
}
