//! Critics trained alone on two fixed 1-D Gaussians, with gradient diagnostics.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::ganloss::{
    critic_objective, gradient_penalty, weight_clip, LossReport, PenaltyConfig, PenaltyKind,
};
use crate::nets::layers::{he_scale, linear};
use crate::nets::{Bound, ParamSet};
use crate::spectral::svg::{LinePlot, Series};
use crate::trainer::config::parse_value;
use crate::trainer::{Adam, AdamConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian1d {
    pub mean: f64,
    pub std: f64,
}

/// Lab settings. Text form is `key = value` lines with keys `preset`
/// (`near` or `distant`, applied first), `real_mean`, `real_std`,
/// `fake_mean`, `fake_std`, `regimes` (comma list of penalty names),
/// `lambda`, `clip_bound`, `hidden` (comma list), `leaky_slope`,
/// `learning_rate`, `beta1`, `beta2`, `adam_epsilon`, `steps`,
/// `plateau_tolerance`, `plateau_window`, `batch_size`, `eval_samples`,
/// `seeds` (comma list) and `grid_points`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabConfig {
    pub real: Gaussian1d,
    pub fake: Gaussian1d,
    pub regimes: Vec<PenaltyKind>,
    pub lambda: f64,
    pub clip_bound: f64,
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub adam: AdamConfig,
    pub steps: usize,
    /// Stop once the windowed mean loss moves less than this.
    pub plateau_tolerance: f64,
    pub plateau_window: usize,
    pub batch_size: usize,
    pub eval_samples: usize,
    pub seeds: Vec<u64>,
    pub grid_points: usize,
}

fn list<V: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl LabConfig {
    /// Modes far apart relative to the critic's unit Lipschitz scale.
    pub fn distant() -> Self {
        LabConfig {
            real: Gaussian1d {
                mean: -4.0,
                std: 0.5,
            },
            fake: Gaussian1d {
                mean: 4.0,
                std: 0.5,
            },
            regimes: PenaltyKind::ALL.to_vec(),
            lambda: 10.0,
            clip_bound: 0.05,
            hidden: vec![64, 64, 64],
            leaky_slope: 0.2,
            adam: AdamConfig {
                learning_rate: 5e-3,
                ..AdamConfig::default()
            },
            steps: 2000,
            plateau_tolerance: 1e-5,
            plateau_window: 100,
            batch_size: 256,
            eval_samples: 4096,
            seeds: (0..10).collect(),
            grid_points: 201,
        }
    }

    /// Overlapping modes.
    pub fn near() -> Self {
        LabConfig {
            real: Gaussian1d {
                mean: -0.5,
                std: 0.5,
            },
            fake: Gaussian1d {
                mean: 0.5,
                std: 0.5,
            },
            ..Self::distant()
        }
    }

    pub fn penalty(&self, kind: PenaltyKind) -> PenaltyConfig {
        PenaltyConfig {
            kind,
            lambda: self.lambda,
            clip_bound: self.clip_bound,
            drift_epsilon: 0.0,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => {
                *self = match value {
                    "near" => Self::near(),
                    "distant" => Self::distant(),
                    _ => return Err(Error::invalid(format!("unknown preset `{value}`"))),
                }
            }
            "real_mean" => self.real.mean = parse_value(key, value)?,
            "real_std" => self.real.std = parse_value(key, value)?,
            "fake_mean" => self.fake.mean = parse_value(key, value)?,
            "fake_std" => self.fake.std = parse_value(key, value)?,
            "regimes" => {
                self.regimes = value
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<Result<_>>()?
            }
            "lambda" => self.lambda = parse_value(key, value)?,
            "clip_bound" => self.clip_bound = parse_value(key, value)?,
            "hidden" => self.hidden = list(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_value(key, value)?,
            "learning_rate" => self.adam.learning_rate = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "adam_epsilon" => self.adam.epsilon = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "plateau_tolerance" => self.plateau_tolerance = parse_value(key, value)?,
            "plateau_window" => self.plateau_window = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "eval_samples" => self.eval_samples = parse_value(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "grid_points" => self.grid_points = parse_value(key, value)?,
            _ => return Err(Error::invalid(format!("unknown lab key `{key}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` text on top of the near preset.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        let mut cfg = Self::near();
        pairs.sort_by_key(|(k, _)| *k != "preset");
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let names: Vec<&str> = self.regimes.iter().map(|r| r.name()).collect();
        [
            ("real_mean", self.real.mean.to_string()),
            ("real_std", self.real.std.to_string()),
            ("fake_mean", self.fake.mean.to_string()),
            ("fake_std", self.fake.std.to_string()),
            ("regimes", names.join(",")),
            ("lambda", self.lambda.to_string()),
            ("clip_bound", self.clip_bound.to_string()),
            ("hidden", join(&self.hidden)),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("learning_rate", self.adam.learning_rate.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_epsilon", self.adam.epsilon.to_string()),
            ("steps", self.steps.to_string()),
            ("plateau_tolerance", self.plateau_tolerance.to_string()),
            ("plateau_window", self.plateau_window.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("seeds", join(&self.seeds)),
            ("grid_points", self.grid_points.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.real == self.fake {
            return Err(Error::invalid("the two distributions must differ"));
        }
        if !(self.real.std > 0.0 && self.fake.std > 0.0) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid(
                "critic needs at least one non-empty hidden layer",
            ));
        }
        if self.batch_size < 2
            || self.grid_points < 2
            || self.eval_samples == 0
            || self.seeds.is_empty()
        {
            return Err(Error::invalid(
                "batch >= 2, grid >= 2, eval samples >= 1 and one seed required",
            ));
        }
        if self.regimes.is_empty() {
            return Err(Error::invalid("at least one regime required"));
        }
        for r in &self.regimes {
            self.penalty(*r).validate()?;
        }
        self.adam.validate()
    }

    /// Evenly spaced points covering both supports to three standard deviations.
    pub fn probe_grid(&self) -> Vec<f64> {
        let lo = (self.real.mean - 3.0 * self.real.std).min(self.fake.mean - 3.0 * self.fake.std);
        let hi = (self.real.mean + 3.0 * self.real.std).max(self.fake.mean + 3.0 * self.fake.std);
        let n = self.grid_points;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn between_modes(&self, x: f64) -> bool {
        let (a, b) = (
            self.real.mean.min(self.fake.mean),
            self.real.mean.max(self.fake.mean),
        );
        x > a && x < b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub regime: PenaltyKind,
    pub seed: u64,
    pub w_tilde: f64,
    pub ordering_violation: bool,
    pub mean_grad_between_modes: f64,
    pub steps_run: usize,
    pub diverged: bool,
    pub grid: Vec<f64>,
    pub critic: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Per-step loss parts.
    pub trace: Vec<LossReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabResults {
    pub runs: Vec<SeedResult>,
}

impl LabResults {
    pub fn for_regime(&self, kind: PenaltyKind) -> impl Iterator<Item = &SeedResult> {
        self.runs.iter().filter(move |r| r.regime == kind)
    }

    pub fn field_csv(&self) -> String {
        let mut out = String::from("regime,seed,x,D,dD_dx\n");
        for r in &self.runs {
            for ((x, d), g) in r.grid.iter().zip(&r.critic).zip(&r.gradient) {
                out.push_str(&format!("{},{},{x},{d},{g}\n", r.regime, r.seed));
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("regime,seed,W_tilde,ordering_violation,mean_grad_between_modes\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.regime, r.seed, r.w_tilde, r.ordering_violation, r.mean_grad_between_modes
            ));
        }
        out
    }
}

struct Mlp {
    params: ParamSet<f64>,
    layers: usize,
    slope: f64,
}

impl Mlp {
    fn new(hidden: &[usize], slope: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let widths: Vec<usize> = std::iter::once(1)
            .chain(hidden.iter().copied())
            .chain([1])
            .collect();
        for (i, w) in widths.windows(2).enumerate() {
            let scale = he_scale(w[0]);
            let data = (0..w[0] * w[1])
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    scale * v
                })
                .collect();
            params.insert(
                format!("fc{i}.w"),
                Tensor::new(&[w[0], w[1]], data).expect("shape"),
            );
            params.insert(format!("fc{i}.b"), Tensor::zeros(&[w[1]]));
        }
        Mlp {
            params,
            layers: widths.len() - 1,
            slope,
        }
    }

    fn forward<'g>(&self, bound: &Bound<'g, f64>, x: Var<'g, f64>) -> Result<Var<'g, f64>> {
        let mut h = x;
        for i in 0..self.layers {
            h = linear(
                h,
                bound.get(&format!("fc{i}.w"))?,
                bound.get(&format!("fc{i}.b"))?,
                1.0,
            )?;
            if i + 1 < self.layers {
                h = h.leaky_relu(self.slope)?;
            }
        }
        Ok(h)
    }

    fn values_and_slopes(&self, xs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = Graph::new();
        let bound = self.params.bind(&g, false)?;
        let x = g.variable(Tensor::new(&[xs.len(), 1], xs.to_vec())?)?;
        let d = self.forward(&bound, x)?;
        let slope = g.grad(d.sum_all()?, &[x], false)?[0];
        Ok((d.value().data().to_vec(), slope.value().data().to_vec()))
    }
}

fn sample(dist: Gaussian1d, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let normal = Normal::new(dist.mean, dist.std).map_err(|e| Error::invalid(e.to_string()))?;
    Tensor::new(&[n, 1], (0..n).map(|_| normal.sample(rng)).collect())
}

fn train_one(cfg: &LabConfig, penalty: &PenaltyConfig, seed: u64) -> Result<SeedResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut critic = Mlp::new(&cfg.hidden, cfg.leaky_slope, &mut rng);
    let mut opt = Adam::new(cfg.adam);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut diverged = false;
    let window = cfg.plateau_window.max(1);
    let mut prev_window: Option<f64> = None;
    let mut window_sum = 0.0;
    for step in 0..cfg.steps {
        let real = sample(cfg.real, cfg.batch_size, &mut rng)?;
        let fake = sample(cfg.fake, cfg.batch_size, &mut rng)?;
        let g = Graph::new();
        let bound = critic.params.bind(&g, true)?;
        let outcome = (|| -> Result<(LossReport, Vec<Tensor<f64>>)> {
            let d_real = critic.forward(&bound, g.constant(real.clone())?)?;
            let d_fake = critic.forward(&bound, g.constant(fake.clone())?)?;
            let p = if penalty.kind.uses_gradient_penalty() {
                let t: Vec<f64> = (0..cfg.batch_size).map(|_| rng.random::<f64>()).collect();
                let x_hat = g.variable(crate::ganloss::interpolate_pairs(&real, &fake, &t)?)?;
                Some(gradient_penalty(
                    |x| critic.forward(&bound, x),
                    x_hat,
                    penalty,
                )?)
            } else {
                None
            };
            let obj = critic_objective(penalty, d_real, d_fake, p)?;
            let grads = g.grad(obj.total, bound.vars(), false)?;
            Ok((
                obj.report,
                grads.iter().map(|v| (*v.value()).clone()).collect(),
            ))
        })();
        let (report, grads) = match outcome {
            Ok(v) if v.0.total_critic_loss.is_finite() => v,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        drop(bound);
        opt.step(&mut critic.params, &grads)?;
        if penalty.kind == PenaltyKind::WeightClip {
            weight_clip(&mut critic.params, penalty.clip_bound)?;
        }
        window_sum += report.total_critic_loss;
        trace.push(report);
        if (step + 1) % window == 0 {
            let mean = window_sum / window as f64;
            window_sum = 0.0;
            if prev_window.is_some_and(|p| (p - mean).abs() < cfg.plateau_tolerance) {
                break;
            }
            prev_window = Some(mean);
        }
    }
    let grid = cfg.probe_grid();
    let steps_run = trace.len();
    if diverged {
        let nan = vec![f64::NAN; grid.len()];
        return Ok(SeedResult {
            regime: penalty.kind,
            seed,
            w_tilde: f64::NAN,
            ordering_violation: false,
            mean_grad_between_modes: f64::NAN,
            steps_run,
            diverged,
            grid,
            critic: nan.clone(),
            gradient: nan,
            trace,
        });
    }
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a);
    let real = sample(cfg.real, cfg.eval_samples, &mut eval_rng)?;
    let fake = sample(cfg.fake, cfg.eval_samples, &mut eval_rng)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (d_real, _) = critic.values_and_slopes(real.data())?;
    let (d_fake, _) = critic.values_and_slopes(fake.data())?;
    let (e_real, e_fake) = (mean(&d_real), mean(&d_fake));
    let (values, slopes) = critic.values_and_slopes(&grid)?;
    let between: Vec<f64> = grid
        .iter()
        .zip(&slopes)
        .filter(|(x, _)| cfg.between_modes(**x))
        .map(|(_, s)| s.abs())
        .collect();
    Ok(SeedResult {
        regime: penalty.kind,
        seed,
        w_tilde: e_real - e_fake,
        ordering_violation: e_fake > e_real,
        mean_grad_between_modes: if between.is_empty() {
            f64::NAN
        } else {
            mean(&between)
        },
        steps_run,
        diverged,
        grid,
        critic: values,
        gradient: slopes.iter().map(|s| s.abs()).collect(),
        trace,
    })
}

/// Train one critic per regime and seed. Seeds run in parallel.
pub fn run_lab(cfg: &LabConfig) -> Result<LabResults> {
    cfg.validate()?;
    let jobs: Vec<(PenaltyConfig, u64)> = cfg
        .regimes
        .iter()
        .flat_map(|r| cfg.seeds.iter().map(move |s| (cfg.penalty(*r), *s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|(r, s)| train_one(cfg, r, *s))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabResults { runs })
}

/// Write `field.csv`, `summary.csv`, `critic.svg` and `gradient.svg` into `dir`.
/// The plots overlay the first seed of every regime.
pub fn emit_gradient_field(results: &LabResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("field.csv"), results.field_csv())?;
    fs::write(dir.join("summary.csv"), results.summary_csv())?;
    let mut critic_plot = LinePlot::new("Critic value", "x", "D(x)");
    let mut grad_plot = LinePlot::new("Critic gradient", "x", "|dD/dx|");
    let mut seen = Vec::new();
    for r in &results.runs {
        if seen.contains(&r.regime) {
            continue;
        }
        seen.push(r.regime);
        critic_plot.series.push(Series::new(
            r.regime.name(),
            r.grid.clone(),
            r.critic.clone(),
        ));
        grad_plot.series.push(Series::new(
            r.regime.name(),
            r.grid.clone(),
            r.gradient.clone(),
        ));
    }
    fs::write(dir.join("critic.svg"), critic_plot.render())?;
    fs::write(dir.join("gradient.svg"), grad_plot.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> LabConfig {
        LabConfig {
            steps: 30,
            seeds: vec![0, 1],
            hidden: vec![8, 8],
            batch_size: 32,
            eval_samples: 64,
            grid_points: 11,
            ..LabConfig::near()
        }
    }

    #[test]
    fn grid_covers_both_supports() {
        let g = LabConfig::near().probe_grid();
        assert_eq!(g.len(), 201);
        assert!((g[0] + 2.0).abs() < 1e-12 && (g[200] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_clipped() {
        let cfg = quick();
        let a = run_lab(&cfg).unwrap();
        let b = run_lab(&cfg).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.runs.len(), 8);
        for r in a.for_regime(PenaltyKind::ScaledOneSided) {
            for t in &r.trace {
                if t.critic_difference <= 0.0 {
                    assert_eq!(t.penalty_contribution, 0.0);
                }
            }
        }
        let summary = a.summary_csv();
        assert_eq!(summary.lines().count(), 9);
        assert!(
            summary.starts_with("regime,seed,W_tilde,ordering_violation,mean_grad_between_modes")
        );
    }

    #[test]
    fn text_roundtrip() {
        let cfg = LabConfig {
            lambda: 3.5,
            seeds: vec![4, 9],
            ..LabConfig::distant()
        };
        assert_eq!(LabConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let p = LabConfig::parse("steps = 7\npreset = distant").unwrap();
        assert_eq!((p.steps, p.real.mean), (7, -4.0));
        assert!(LabConfig::parse("bogus = 1").is_err());
        assert!(LabConfig::parse("regimes = gp-two-sided,nope").is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = quick();
        c.fake = c.real;
        assert!(run_lab(&c).is_err());
        assert!(run_lab(&LabConfig {
            hidden: vec![],
            ..quick()
        })
        .is_err());
    }

    #[test]
    fn writes_bundle() {
        let cfg = LabConfig {
            regimes: vec![PenaltyKind::OneSided],
            ..quick()
        };
        let r = run_lab(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_gradient_field(&r, dir.path()).unwrap();
        let field = fs::read_to_string(dir.path().join("field.csv")).unwrap();
        assert_eq!(field.lines().count(), 1 + 2 * 11);
        assert!(fs::read_to_string(dir.path().join("critic.svg"))
            .unwrap()
            .contains("gp-one-sided"));
    }
}
