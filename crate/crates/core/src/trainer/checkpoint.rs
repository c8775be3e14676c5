//! Checkpoint directories.
//!
//! Layout: `config.txt` (training config), `state.txt` (schedule position,
//! counters and random-generator state as `key = value`), parameter files
//! `generator.tsgp`, `critic.tsgp`, optimizer files `adam_generator.tsgp`,
//! `adam_critic.tsgp` (each with a `.manifest`), and `history.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::schedule::{PhaseKind, StageSchedule};
use super::{history_csv, HistoryRow, Progress};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ganloss::LossReport;
use crate::metrics::MetricReport;
use crate::nets::params::{read_tensors, write_tensors};
use crate::nets::ParamSet;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord<T: Real> {
    pub config: TrainConfig,
    pub progress: Progress,
    /// Stage the networks are currently built for.
    pub stage: usize,
    pub fade_alpha: f64,
    pub generator: ParamSet<T>,
    pub critic: ParamSet<T>,
    pub generator_moments: Vec<(String, Tensor<T>)>,
    pub critic_moments: Vec<(String, Tensor<T>)>,
    pub rng: RngState,
    pub history: Vec<HistoryRow>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn parse_history(text: &str, path: &Path) -> Result<Vec<HistoryRow>> {
    let bad = |line: usize| Error::format(path, format!("history line {line} is malformed"));
    let mut rows = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(bad(i + 1));
        }
        let u = |j: usize| f[j].parse::<usize>().map_err(|_| bad(i + 1));
        let x = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 1));
        let kind = match f[2] {
            "fade" => PhaseKind::Fade,
            "stabilize" => PhaseKind::Stabilize,
            _ => return Err(bad(i + 1)),
        };
        rows.push(HistoryRow {
            phase: u(0)?,
            stage: u(1)?,
            kind,
            epoch: u(3)?,
            fade_alpha: x(4)?,
            losses: LossReport {
                critic_difference: x(5)?,
                penalty_value: f64::NAN,
                penalty_contribution: x(6)?,
                drift_value: x(7)?,
                total_critic_loss: f64::NAN,
                generator_loss: x(8)?,
            },
            metrics: MetricReport {
                inception_score: x(9)?,
                fid: x(10)?,
                ed_min_delta: x(11)?,
                swd: x(12)?,
                n_real: 0,
                n_fake: 0,
            },
        });
    }
    Ok(rows)
}

impl<T: Real> CheckpointRecord<T> {
    /// Epochs completed since the start of training, across phases.
    pub fn epoch(&self) -> usize {
        let c = &self.config;
        let schedule = StageSchedule::new(
            c.last_stage(),
            c.epochs_per_stage,
            c.fade_epochs_per_stage,
            c.net.base_len,
        );
        let done: usize = schedule
            .phases()
            .iter()
            .take(self.progress.phase)
            .map(|p| p.epochs)
            .sum();
        done + self.progress.epoch
    }

    fn state_text(&self) -> String {
        let p = &self.progress;
        [
            format!("precision = {}", T::BITS),
            format!("stage = {}", self.stage),
            format!("phase = {}", p.phase),
            format!("epoch = {}", p.epoch),
            format!("fade_alpha = {}", self.fade_alpha),
            format!("critic_since_gen = {}", p.critic_since_gen),
            format!("critic_steps = {}", p.critic_steps),
            format!("gen_steps = {}", p.gen_steps),
            format!("rng_seed = {}", hex(&self.rng.seed)),
            format!("rng_stream = {}", self.rng.stream),
            format!("rng_word_pos = {}", self.rng.word_pos),
        ]
        .join("\n")
            + "\n"
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), self.config.to_text())?;
        fs::write(dir.join("state.txt"), self.state_text())?;
        write_tensors(&dir.join("generator.tsgp"), self.generator.entries())?;
        write_tensors(&dir.join("critic.tsgp"), self.critic.entries())?;
        write_tensors(&dir.join("adam_generator.tsgp"), &self.generator_moments)?;
        write_tensors(&dir.join("adam_critic.tsgp"), &self.critic_moments)?;
        fs::write(dir.join("history.csv"), history_csv(&self.history))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let state_path = dir.join("state.txt");
        let state = parse_kv(&fs::read_to_string(&state_path)?);
        let get = |k: &str| {
            state
                .get(k)
                .ok_or_else(|| Error::format(&state_path, format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<u128> {
            get(k)?
                .parse()
                .map_err(|_| Error::format(&state_path, format!("bad `{k}`")))
        };
        let rng = RngState {
            seed: unhex(get("rng_seed")?)
                .ok_or_else(|| Error::format(&state_path, "bad rng_seed"))?,
            stream: num("rng_stream")? as u64,
            word_pos: num("rng_word_pos")?,
        };
        let progress = Progress {
            phase: num("phase")? as usize,
            epoch: num("epoch")? as usize,
            critic_since_gen: num("critic_since_gen")? as usize,
            critic_steps: num("critic_steps")? as u64,
            gen_steps: num("gen_steps")? as u64,
        };
        let fade_alpha = get("fade_alpha")?
            .parse::<f64>()
            .map_err(|_| Error::format(&state_path, "bad fade_alpha"))?;
        let history_path = dir.join("history.csv");
        Ok(CheckpointRecord {
            config: TrainConfig::load(&dir.join("config.txt"))?,
            progress,
            stage: num("stage")? as usize,
            fade_alpha,
            generator: ParamSet::from_entries(read_tensors(&dir.join("generator.tsgp"))?),
            critic: ParamSet::from_entries(read_tensors(&dir.join("critic.tsgp"))?),
            generator_moments: read_tensors(&dir.join("adam_generator.tsgp"))?,
            critic_moments: read_tensors(&dir.join("adam_critic.tsgp"))?,
            rng,
            history: parse_history(&fs::read_to_string(&history_path)?, &history_path)?,
        })
    }

    /// Stored precision, read without decoding the tensors.
    pub fn stored_precision(dir: &Path) -> Result<u32> {
        let path = dir.join("state.txt");
        parse_kv(&fs::read_to_string(&path)?)
            .get("precision")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(&path, "missing precision"))
    }
}
