//! Progressive adversarial training: optimizer, update loop, schedule and checkpoints.

pub mod adam;
mod checkpoint;
pub mod config;
pub mod schedule;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use checkpoint::{CheckpointRecord, RngState};
pub use config::{Precision, TrainConfig};
pub use schedule::{signal_showings, Phase, PhaseKind, StageSchedule};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::ganloss::{
    critic_objective, generator_loss, gradient_penalty, interpolate_pairs, weight_clip, LossReport,
    PenaltyKind,
};
use crate::metrics::{self, Classifier, MetricReport};
use crate::nets::resample::{avgpool_factor_map, upsample_map};
use crate::nets::{Role, StagedNetwork, UpsampleMethod};
use crate::real::Real;

/// Position in the schedule. `epoch` counts completed epochs of `phase`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub phase: usize,
    pub epoch: usize,
    /// Critic steps since the last generator step.
    pub critic_since_gen: usize,
    pub critic_steps: u64,
    pub gen_steps: u64,
}

/// One row of the metric history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub phase: usize,
    pub stage: usize,
    pub kind: PhaseKind,
    pub epoch: usize,
    pub fade_alpha: f64,
    /// Means over the epoch's critic steps.
    pub losses: LossReport,
    pub metrics: MetricReport,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str =
        "phase,stage,kind,epoch,fade_alpha,w_tilde,penalty,drift,gen_loss,inception_score,fid,ed_min_delta,swd";

    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.phase,
            self.stage,
            self.kind.name(),
            self.epoch,
            self.fade_alpha,
            l.critic_difference,
            l.penalty_contribution,
            l.drift_value,
            l.generator_loss,
            m.inception_score,
            m.fid,
            m.ed_min_delta,
            m.swd
        )
    }
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = format!("{}\n", HistoryRow::CSV_HEADER);
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Finished,
    /// Stopped early because the epoch budget ran out.
    Paused,
}

/// Draw `n x latent` standard normal codes.
pub fn sample_latent<T: Real, R: Rng>(n: usize, latent: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n * latent)
        .map(|_| T::from_f64(rng.sample(StandardNormal)))
        .collect();
    Tensor::new(&[n, latent], data).expect("latent shape")
}

/// Run the generator on fresh codes, `batch` at a time.
pub fn generate_signals<T: Real, R: Rng>(
    generator: &StagedNetwork<T>,
    n: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if generator.role() != Role::Generator {
        return Err(Error::invalid("generate_signals needs a generator"));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let b = batch.max(1).min(n - out.len());
        let z = sample_latent::<T, _>(b, generator.config().latent_dim, rng);
        let g = Graph::new();
        let bound = generator.params().bind(&g, false)?;
        let y = generator.forward(&bound, g.constant(z)?)?;
        let len = generator.signal_len();
        out.extend(
            y.value()
                .data()
                .chunks(len)
                .map(|c| c.iter().map(|v| v.to_f64()).collect()),
        );
    }
    Ok(out)
}

/// Average-pool full-length signals down to the length of `stage`.
pub fn stage_signals(data: &Dataset, full_len: usize, stage_len: usize) -> Result<Vec<Vec<f64>>> {
    if data.signal_len() != full_len {
        return Err(Error::Data(format!(
            "signals have length {}, expected {full_len}",
            data.signal_len()
        )));
    }
    if stage_len == full_len {
        return Ok(data.signals().to_vec());
    }
    let map = avgpool_factor_map(full_len, full_len / stage_len)?;
    Ok(data.signals().iter().map(|s| map.apply(s)).collect())
}

/// Cubic upsampling by repeated doubling until `target` samples.
pub fn upsample_to(signals: &[Vec<f64>], target: usize) -> Result<Vec<Vec<f64>>> {
    let Some(first) = signals.first() else {
        return Ok(Vec::new());
    };
    let mut len = first.len();
    let mut out = signals.to_vec();
    while len < target {
        let map = upsample_map(UpsampleMethod::Cubic, len)?;
        out = out.iter().map(|s| map.apply(s)).collect();
        len *= 2;
    }
    if len != target {
        return Err(Error::shape(
            "upsample_to",
            format!("cannot reach {target} samples from {}", first.len()),
        ));
    }
    Ok(out)
}

pub struct Trainer<T: Real> {
    config: TrainConfig,
    schedule: StageSchedule,
    generator: StagedNetwork<T>,
    critic: StagedNetwork<T>,
    gen_opt: Adam<T>,
    critic_opt: Adam<T>,
    rng: ChaCha8Rng,
    progress: Progress,
    history: Vec<HistoryRow>,
    classifier: Option<Classifier>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.precision.bits() != T::BITS {
            return Err(Error::invalid(format!(
                "config asks for {}-bit training but the trainer is {}-bit",
                config.precision.bits(),
                T::BITS
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = StagedNetwork::build(Role::Generator, &config.net, 0, 1.0, &mut rng)?;
        let critic = StagedNetwork::build(Role::Critic, &config.net, 0, 1.0, &mut rng)?;
        Ok(Trainer {
            schedule: Self::schedule_for(&config),
            gen_opt: Adam::new(config.adam),
            critic_opt: Adam::new(config.adam),
            config,
            generator,
            critic,
            rng,
            progress: Progress::default(),
            history: Vec::new(),
            classifier: None,
        })
    }

    fn schedule_for(config: &TrainConfig) -> StageSchedule {
        StageSchedule::new(
            config.last_stage(),
            config.epochs_per_stage,
            config.fade_epochs_per_stage,
            config.net.base_len,
        )
    }

    /// Use `classifier` for IS and FID during evaluation.
    pub fn set_classifier(&mut self, classifier: Option<Classifier>) {
        self.classifier = classifier;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &StageSchedule {
        &self.schedule
    }

    pub fn generator(&self) -> &StagedNetwork<T> {
        &self.generator
    }

    pub fn critic(&self) -> &StagedNetwork<T> {
        &self.critic
    }

    pub fn critic_mut(&mut self) -> &mut StagedNetwork<T> {
        &mut self.critic
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.progress.phase >= self.schedule.len()
    }

    /// One critic step on `real` (`batch x 1 x stage length`).
    pub fn critic_update(&mut self, real: &Tensor<T>) -> Result<LossReport> {
        let batch = real.shape()[0];
        let z = sample_latent::<T, _>(batch, self.config.net.latent_dim, &mut self.rng);
        let fake = {
            let g = Graph::new();
            let gp = self.generator.params().bind(&g, false)?;
            let out = self.generator.forward(&gp, g.constant(z)?)?;
            (*out.value()).clone()
        };
        let penalty_cfg = self.config.penalty;
        let t: Vec<f64> = if penalty_cfg.kind.uses_gradient_penalty() {
            (0..batch).map(|_| self.rng.random::<f64>()).collect()
        } else {
            Vec::new()
        };
        let g = Graph::new();
        let cp = self.critic.params().bind(&g, true)?;
        let d_real = self.critic.forward(&cp, g.constant(real.clone())?)?;
        let d_fake = self.critic.forward(&cp, g.constant(fake.clone())?)?;
        let penalty = if penalty_cfg.kind.uses_gradient_penalty() {
            let x_hat = g.variable(interpolate_pairs(real, &fake, &t)?)?;
            Some(gradient_penalty(
                |x| self.critic.forward(&cp, x),
                x_hat,
                &penalty_cfg,
            )?)
        } else {
            None
        };
        let objective = critic_objective(&penalty_cfg, d_real, d_fake, penalty)?;
        let grads = g.grad(objective.total, cp.vars(), false)?;
        let grads: Vec<Tensor<T>> = grads.iter().map(|v| (*v.value()).clone()).collect();
        drop(cp);
        self.critic_opt.step(self.critic.params_mut(), &grads)?;
        if penalty_cfg.kind == PenaltyKind::WeightClip {
            weight_clip(self.critic.params_mut(), penalty_cfg.clip_bound)?;
        }
        self.progress.critic_steps += 1;
        Ok(objective.report)
    }

    /// One generator step minimizing `-mean D(G(z))`. Returns the loss.
    pub fn generator_update(&mut self, batch: usize) -> Result<f64> {
        let z = sample_latent::<T, _>(batch, self.config.net.latent_dim, &mut self.rng);
        let g = Graph::new();
        let gp = self.generator.params().bind(&g, true)?;
        let cp = self.critic.params().bind(&g, false)?;
        let fake = self.generator.forward(&gp, g.constant(z)?)?;
        let loss = generator_loss(self.critic.forward(&cp, fake)?)?;
        let grads = g.grad(loss, gp.vars(), false)?;
        let grads: Vec<Tensor<T>> = grads.iter().map(|v| (*v.value()).clone()).collect();
        self.gen_opt.step(self.generator.params_mut(), &grads)?;
        self.progress.gen_steps += 1;
        Ok(loss.item())
    }

    fn enter_phase(&mut self, phase: Phase) -> Result<()> {
        while self.generator.stage() < phase.stage {
            let alpha = if phase.kind == PhaseKind::Fade {
                0.0
            } else {
                1.0
            };
            let fresh_g = self.generator.grow(alpha, &mut self.rng)?;
            let fresh_c = self.critic.grow(alpha, &mut self.rng)?;
            for n in fresh_g {
                self.gen_opt.reset(&n);
            }
            for n in fresh_c {
                self.critic_opt.reset(&n);
            }
            let g_names: Vec<String> = self.generator.params().names().map(String::from).collect();
            let c_names: Vec<String> = self.critic.params().names().map(String::from).collect();
            self.gen_opt.retain_only(g_names.iter().map(String::as_str));
            self.critic_opt
                .retain_only(c_names.iter().map(String::as_str));
        }
        Ok(())
    }

    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut out: Vec<Vec<usize>> = order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        // The minibatch statistic needs at least two samples.
        if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
            let tail = out.pop().unwrap();
            out.last_mut().unwrap().extend(tail);
        }
        out
    }

    fn run_epoch(&mut self, real: &[Vec<f64>]) -> Result<LossReport> {
        let len = real[0].len();
        let mut sum = LossReport::default();
        let (mut critic_n, mut gen_n, mut gen_sum) = (0usize, 0usize, 0.0);
        for batch in self.batches(real.len()) {
            let data: Vec<T> = batch
                .iter()
                .flat_map(|&i| real[i].iter().map(|v| T::from_f64(*v)))
                .collect();
            let report = self.critic_update(&Tensor::new(&[batch.len(), 1, len], data)?)?;
            sum.critic_difference += report.critic_difference;
            sum.penalty_value += report.penalty_value;
            sum.penalty_contribution += report.penalty_contribution;
            sum.drift_value += report.drift_value;
            sum.total_critic_loss += report.total_critic_loss;
            critic_n += 1;
            self.progress.critic_since_gen += 1;
            if self.progress.critic_since_gen >= self.config.critic_iters_per_gen {
                gen_sum += self.generator_update(self.config.batch_size)?;
                gen_n += 1;
                self.progress.critic_since_gen = 0;
            }
        }
        let k = critic_n.max(1) as f64;
        Ok(LossReport {
            critic_difference: sum.critic_difference / k,
            penalty_value: sum.penalty_value / k,
            penalty_contribution: sum.penalty_contribution / k,
            drift_value: sum.drift_value / k,
            total_critic_loss: sum.total_critic_loss / k,
            generator_loss: if gen_n > 0 {
                gen_sum / gen_n as f64
            } else {
                f64::NAN
            },
        })
    }

    fn global_epoch(&self) -> u64 {
        let done: usize = self.schedule.phases()[..self.progress.phase.min(self.schedule.len())]
            .iter()
            .map(|p| p.epochs)
            .sum();
        (done + self.progress.epoch) as u64
    }

    /// Compare fresh samples with `real` at the current stage length. Uses its
    /// own random stream so training randomness is unaffected.
    pub fn evaluate(&self, real: &[Vec<f64>]) -> Result<MetricReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(self.global_epoch());
        let fake = generate_signals(
            &self.generator,
            real.len(),
            self.config.batch_size,
            &mut rng,
        )?;
        let seeds = [rng.random::<u64>()];
        let mut report =
            metrics::evaluate(real, &fake, None, self.config.eval_projections, &seeds)?;
        if let Some(clf) = &self.classifier {
            let real_up = upsample_to(real, clf.input_len())?;
            let fake_up = upsample_to(&fake, clf.input_len())?;
            let (probs, fake_emb) = clf.probabilities_and_embeddings(&fake_up)?;
            report.inception_score = metrics::inception_score(&probs)?;
            report.fid = metrics::fid(&clf.embed(&real_up)?.rows, &fake_emb.rows)?;
        }
        Ok(report)
    }

    /// Train until the schedule ends or `max_epochs` epochs have run.
    /// `on_checkpoint` is called at every checkpoint boundary.
    pub fn run(
        &mut self,
        data: &Dataset,
        max_epochs: Option<usize>,
        on_checkpoint: &mut dyn FnMut(&Trainer<T>) -> Result<()>,
    ) -> Result<RunStatus> {
        let full = self.config.net.full_len();
        if data.len() < self.config.batch_size {
            return Err(Error::Data(format!(
                "dataset has {} signals, fewer than one batch of {}",
                data.len(),
                self.config.batch_size
            )));
        }
        let mut budget = max_epochs.unwrap_or(usize::MAX);
        let mut cached: Option<(usize, Vec<Vec<f64>>)> = None;
        while let Some(&phase) = self.schedule.phases().get(self.progress.phase) {
            if budget == 0 {
                return Ok(RunStatus::Paused);
            }
            self.enter_phase(phase)?;
            if cached.as_ref().is_none_or(|(s, _)| *s != phase.stage) {
                cached = Some((
                    phase.stage,
                    stage_signals(data, full, self.config.net.stage_len(phase.stage))?,
                ));
            }
            let real = &cached.as_ref().unwrap().1;
            while self.progress.epoch < phase.epochs {
                if budget == 0 {
                    return Ok(RunStatus::Paused);
                }
                budget -= 1;
                let alpha = phase.fade_alpha(self.progress.epoch);
                self.generator.set_fade_alpha(alpha)?;
                self.critic.set_fade_alpha(alpha)?;
                let losses = self.run_epoch(real)?;
                self.progress.epoch += 1;
                let e = self.progress.epoch;
                let last = e == phase.epochs;
                if last || (self.config.eval_every > 0 && e % self.config.eval_every == 0) {
                    let metrics = self.evaluate(real)?;
                    self.history.push(HistoryRow {
                        phase: self.progress.phase,
                        stage: phase.stage,
                        kind: phase.kind,
                        epoch: e,
                        fade_alpha: alpha,
                        losses,
                        metrics,
                    });
                }
                if last {
                    self.progress.phase += 1;
                    self.progress.epoch = 0;
                }
                if last
                    || (self.config.checkpoint_every > 0 && e % self.config.checkpoint_every == 0)
                {
                    on_checkpoint(self)?;
                }
                if last {
                    break;
                }
            }
            if phase.epochs == 0 {
                self.progress.phase += 1;
                self.progress.epoch = 0;
                on_checkpoint(self)?;
            }
        }
        Ok(RunStatus::Finished)
    }

    /// Finish the current phase.
    pub fn run_phase(
        &mut self,
        data: &Dataset,
        on_checkpoint: &mut dyn FnMut(&Trainer<T>) -> Result<()>,
    ) -> Result<CheckpointRecord<T>> {
        if let Some(phase) = self.schedule.phases().get(self.progress.phase) {
            let remaining = phase.epochs - self.progress.epoch;
            let target = self.progress.phase + 1;
            self.run(data, Some(remaining), on_checkpoint)?;
            if remaining == 0 && self.progress.phase < target {
                self.progress.phase = target;
                self.progress.epoch = 0;
            }
        }
        Ok(self.checkpoint())
    }

    pub fn checkpoint(&self) -> CheckpointRecord<T> {
        CheckpointRecord {
            config: self.config.clone(),
            progress: self.progress,
            stage: self.generator.stage(),
            fade_alpha: self.generator.fade_alpha(),
            generator: self.generator.params().clone(),
            critic: self.critic.params().clone(),
            generator_moments: self.gen_opt.to_entries(),
            critic_moments: self.critic_opt.to_entries(),
            rng: RngState::capture(&self.rng),
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(record: CheckpointRecord<T>) -> Result<Self> {
        let config = record.config;
        config.validate()?;
        let generator = StagedNetwork::from_params(
            Role::Generator,
            &config.net,
            record.stage,
            record.fade_alpha,
            record.generator,
        )?;
        let critic = StagedNetwork::from_params(
            Role::Critic,
            &config.net,
            record.stage,
            record.fade_alpha,
            record.critic,
        )?;
        Ok(Trainer {
            schedule: Self::schedule_for(&config),
            gen_opt: Adam::from_entries(config.adam, record.generator_moments)?,
            critic_opt: Adam::from_entries(config.adam, record.critic_moments)?,
            config,
            generator,
            critic,
            rng: record.rng.restore(),
            progress: record.progress,
            history: record.history,
            classifier: None,
        })
    }
}

/// Train a fresh model through the whole schedule.
pub fn run_progressive<T: Real>(
    data: &Dataset,
    config: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(&Trainer<T>) -> Result<()>,
) -> Result<(CheckpointRecord<T>, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(config.clone())?;
    trainer.run(data, None, on_checkpoint)?;
    Ok((trainer.checkpoint(), trainer.history.clone()))
}
