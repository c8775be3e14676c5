//! Small convolutional classifier standing in for a pretrained feature model.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EmbeddingSet, Source};
use crate::autodiff::{Graph, Tensor, Var};
use crate::dataio::{Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::nets::layers::{avgpool, conv1d, he_scale, linear};
use crate::nets::params::{read_tensors, write_tensors};
use crate::nets::{Bound, ParamSet};
use crate::trainer::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub channels: usize,
    pub blocks: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channels: 16,
            blocks: 4,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    params: ParamSet<f64>,
    classes: usize,
    input_len: usize,
    channels: usize,
    blocks: usize,
    leaky_slope: f64,
}

const INFER_BATCH: usize = 128;

fn labels_of(data: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| {
            data.labels()[i]
                .map(usize::from)
                .ok_or_else(|| Error::Data(format!("signal {i} has no label")))
        })
        .collect()
}

fn batch_tensor<S: AsRef<[f64]>>(signals: &[S], idx: &[usize]) -> Result<Tensor<f64>> {
    let len = signals[idx[0]].as_ref().len();
    let data = idx
        .iter()
        .flat_map(|&i| signals[i].as_ref().iter().copied())
        .collect();
    Tensor::new(&[idx.len(), 1, len], data)
}

impl Classifier {
    fn init(classes: usize, input_len: usize, cfg: &ClassifierConfig) -> Result<Self> {
        if input_len % (1 << cfg.blocks) != 0 || input_len >> cfg.blocks == 0 {
            return Err(Error::invalid(format!(
                "signal length {input_len} must be a positive multiple of {}",
                1 << cfg.blocks
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut normal = |shape: &[usize], scale: f64| {
            let n = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    scale * v
                })
                .collect();
            Tensor::new(shape, data).expect("shape matches")
        };
        let mut params = ParamSet::new();
        for b in 0..cfg.blocks {
            let cin = if b == 0 { 1 } else { cfg.channels };
            params.insert(
                format!("block{b}.w"),
                normal(&[cfg.channels, cin, 9], he_scale(cin * 9)),
            );
            params.insert(format!("block{b}.b"), Tensor::zeros(&[cfg.channels]));
        }
        params.insert(
            "head.w",
            normal(&[cfg.channels, classes], (1.0 / cfg.channels as f64).sqrt()),
        );
        params.insert("head.b", Tensor::zeros(&[classes]));
        Ok(Classifier {
            params,
            classes,
            input_len,
            channels: cfg.channels,
            blocks: cfg.blocks,
            leaky_slope: cfg.leaky_slope,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn embedding_dim(&self) -> usize {
        self.channels
    }

    /// Returns `(embedding [B, ch], logits [B, K])`.
    fn forward<'g>(
        &self,
        bound: &Bound<'g, f64>,
        x: Var<'g, f64>,
    ) -> Result<(Var<'g, f64>, Var<'g, f64>)> {
        let mut h = x;
        for b in 0..self.blocks {
            h = conv1d(
                h,
                bound.get(&format!("block{b}.w"))?,
                bound.get(&format!("block{b}.b"))?,
                1,
                1.0,
            )?;
            h = avgpool(h.leaky_relu(self.leaky_slope)?)?;
        }
        let batch = h.shape()[0];
        let emb = h.mean_axis(2)?.reshape(&[batch, self.channels])?;
        let logits = linear(emb, bound.get("head.w")?, bound.get("head.b")?, 1.0)?;
        Ok((emb, logits))
    }

    fn cross_entropy<'g>(logits: Var<'g, f64>, labels: &[usize]) -> Result<Var<'g, f64>> {
        let g = logits.graph();
        let shape = logits.shape();
        let (b, k) = (shape[0], shape[1]);
        let value = logits.value();
        let row_max: Vec<f64> = value
            .data()
            .chunks(k)
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = g
            .constant(Tensor::new(&[b, 1], row_max)?)?
            .broadcast_to(&shape)?;
        let shifted = logits.sub(shift)?;
        let lse = shifted
            .exp()?
            .sum_to(&[b, 1])?
            .log()?
            .broadcast_to(&shape)?;
        let log_p = shifted.sub(lse)?;
        let mut onehot = vec![0.0; b * k];
        for (i, &y) in labels.iter().enumerate() {
            onehot[i * k + y] = 1.0;
        }
        let picked = log_p.mul(g.constant(Tensor::new(&shape, onehot)?)?)?;
        picked.sum_all()?.scale(-1.0 / b as f64)
    }

    fn check_signals<S: AsRef<[f64]>>(&self, signals: &[S]) -> Result<()> {
        if let Some(bad) = signals
            .iter()
            .position(|s| s.as_ref().len() != self.input_len)
        {
            return Err(Error::shape(
                "classifier",
                format!(
                    "signal {bad} has length {}, expected {}",
                    signals[bad].as_ref().len(),
                    self.input_len
                ),
            ));
        }
        Ok(())
    }

    /// Class probabilities and embeddings, in input order.
    pub fn probabilities_and_embeddings<S: AsRef<[f64]>>(
        &self,
        signals: &[S],
    ) -> Result<(Vec<Vec<f64>>, EmbeddingSet)> {
        self.check_signals(signals)?;
        let mut probs = Vec::with_capacity(signals.len());
        let mut emb = Vec::with_capacity(signals.len());
        let idx: Vec<usize> = (0..signals.len()).collect();
        for chunk in idx.chunks(INFER_BATCH) {
            let g = Graph::new();
            let bound = self.params.bind(&g, false)?;
            let (e, logits) = self.forward(&bound, g.constant(batch_tensor(signals, chunk)?)?)?;
            emb.extend(e.value().data().chunks(self.channels).map(<[f64]>::to_vec));
            for row in logits.value().data().chunks(self.classes) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                let z: f64 = exp.iter().sum();
                probs.push(exp.into_iter().map(|v| v / z).collect());
            }
        }
        Ok((
            probs,
            EmbeddingSet {
                rows: emb,
                source: Source::Real,
            },
        ))
    }

    pub fn probabilities<S: AsRef<[f64]>>(&self, signals: &[S]) -> Result<Vec<Vec<f64>>> {
        Ok(self.probabilities_and_embeddings(signals)?.0)
    }

    pub fn embed<S: AsRef<[f64]>>(&self, signals: &[S]) -> Result<EmbeddingSet> {
        Ok(self.probabilities_and_embeddings(signals)?.1)
    }

    pub fn predict<S: AsRef<[f64]>>(&self, signals: &[S]) -> Result<Vec<usize>> {
        Ok(self
            .probabilities(signals)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    fn loss_and_accuracy(&self, data: &Dataset, idx: &[usize]) -> Result<(f64, f64)> {
        if idx.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let labels = labels_of(data, idx)?;
        let signals: Vec<&[f64]> = idx.iter().map(|&i| data.signals()[i].as_slice()).collect();
        let probs = self.probabilities(&signals)?;
        let loss = probs
            .iter()
            .zip(&labels)
            .map(|(p, &y)| -p[y].max(1e-300).ln())
            .sum::<f64>()
            / idx.len() as f64;
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, &y)| argmax(p) == y)
            .count();
        Ok((loss, correct as f64 / idx.len() as f64))
    }

    pub fn accuracy(&self, data: &Dataset, idx: &[usize]) -> Result<f64> {
        Ok(self.loss_and_accuracy(data, idx)?.1)
    }

    /// Single-file storage: parameters plus `meta.*` scalars.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = self.params.entries().to_vec();
        for (k, v) in [
            ("meta.classes", self.classes as f64),
            ("meta.input_len", self.input_len as f64),
            ("meta.channels", self.channels as f64),
            ("meta.blocks", self.blocks as f64),
            ("meta.leaky_slope", self.leaky_slope),
        ] {
            entries.push((k.to_string(), Tensor::scalar(v)));
        }
        write_tensors(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut params = ParamSet::from_entries(read_tensors::<f64>(path)?);
        let mut meta = |k: &str| -> Result<f64> {
            params
                .remove(k)
                .map(|t| t.item())
                .ok_or_else(|| Error::format(path, format!("missing `{k}`")))
        };
        let classes = meta("meta.classes")? as usize;
        let input_len = meta("meta.input_len")? as usize;
        let channels = meta("meta.channels")? as usize;
        let blocks = meta("meta.blocks")? as usize;
        let leaky_slope = meta("meta.leaky_slope")?;
        let cfg = ClassifierConfig {
            channels,
            blocks,
            leaky_slope,
            ..ClassifierConfig::default()
        };
        let template = Classifier::init(classes, input_len, &cfg)?;
        for (name, t) in template.params.iter() {
            if params.get(name).map(Tensor::shape) != Some(t.shape()) {
                return Err(Error::format(
                    path,
                    format!("parameter `{name}` missing or mis-shaped"),
                ));
            }
        }
        if params.len() != template.params.len() {
            return Err(Error::format(path, "unexpected extra parameters"));
        }
        Ok(Classifier { params, ..template })
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > p[best] { i } else { best })
}

/// Train on `split.clf_train`, keep the weights with the lowest validation
/// loss, and report accuracy on `split.clf_test`.
pub fn train_surrogate_classifier(
    data: &Dataset,
    split: &SplitAssignment,
    cfg: &ClassifierConfig,
) -> Result<(Classifier, ClassifierReport)> {
    if split.total != data.len() {
        return Err(Error::invalid(
            "split was made for a different dataset size",
        ));
    }
    if cfg.batch_size == 0 || cfg.channels == 0 || cfg.blocks == 0 {
        return Err(Error::invalid(
            "classifier needs positive batch size, channels and blocks",
        ));
    }
    let train_labels = labels_of(data, &split.clf_train)?;
    let classes = labels_of(data, &(0..data.len()).collect::<Vec<_>>())?
        .into_iter()
        .max()
        .unwrap_or(0)
        + 1;
    let distinct = {
        let mut seen = vec![false; classes];
        train_labels.iter().for_each(|&y| seen[y] = true);
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(Error::Data(
            "classifier training data must contain at least two classes".into(),
        ));
    }
    let mut model = Classifier::init(classes, data.signal_len(), cfg)?;
    let mut opt = Adam::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let val_idx = if split.clf_val.is_empty() {
        &split.clf_train
    } else {
        &split.clf_val
    };
    let (mut best_loss, _) = model.loss_and_accuracy(data, val_idx)?;
    let mut best = (model.params.clone(), 0usize);
    let mut order = split.clf_train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let labels = labels_of(data, chunk)?;
            let g = Graph::new();
            let bound = model.params.bind(&g, true)?;
            let x = g.constant(batch_tensor(data.signals(), chunk)?)?;
            let (_, logits) = model.forward(&bound, x)?;
            let loss = Classifier::cross_entropy(logits, &labels)?;
            let grads = g.grad(loss, bound.vars(), false)?;
            let grads: Vec<Tensor<f64>> = grads.iter().map(|v| (*v.value()).clone()).collect();
            opt.step(&mut model.params, &grads)?;
        }
        let (val_loss, _) = model.loss_and_accuracy(data, val_idx)?;
        if val_loss < best_loss {
            best_loss = val_loss;
            best = (model.params.clone(), epoch);
        }
    }
    model.params = best.0;
    let (_, val_accuracy) = model.loss_and_accuracy(data, val_idx)?;
    let (_, test_accuracy) = model.loss_and_accuracy(data, &split.clf_test)?;
    Ok((
        model,
        ClassifierReport {
            best_epoch: best.1,
            best_val_loss: best_loss,
            val_accuracy,
            test_accuracy,
        },
    ))
}

/// Indices of signals whose top class probability exceeds `threshold`, grouped by class.
pub fn class_conditional_select<S: AsRef<[f64]>>(
    classifier: &Classifier,
    signals: &[S],
    threshold: f64,
) -> Result<Vec<Vec<usize>>> {
    if !(threshold > 0.5 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "threshold {threshold} must lie in (0.5, 1)"
        )));
    }
    let mut groups = vec![Vec::new(); classifier.classes];
    for (i, p) in classifier.probabilities(signals)?.iter().enumerate() {
        let k = argmax(p);
        if p[k] > threshold {
            groups[k].push(i);
        }
    }
    Ok(groups)
}
