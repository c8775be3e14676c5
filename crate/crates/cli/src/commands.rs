use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsgan_core::criticlab::{emit_gradient_field, run_lab, LabConfig};
use tsgan_core::dataio::{
    self, normalize, split, synth_generate, Dataset, SplitRatios, SynthConfig,
};
use tsgan_core::metrics::{self, train_surrogate_classifier, Classifier, ClassifierConfig};
use tsgan_core::nets::{Role, StagedNetwork, UpsampleMethod};
use tsgan_core::spectral::{aliasing_experiment, mean_spectrum};
use tsgan_core::trainer::{
    generate_signals, history_csv, stage_signals, upsample_to, CheckpointRecord, Precision,
    RunStatus, TrainConfig, Trainer,
};
use tsgan_core::{Error, Real};

use crate::manifest::RunManifest;
use crate::plots;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidArgument(msg.into()).into()
}

fn load_data(path: &Path) -> Result<Dataset> {
    dataio::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 219)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 768)]
    pub length: usize,
    #[arg(long, default_value_t = dataio::DEFAULT_SAMPLE_RATE)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.csv` selects the text format, anything else binary.
    #[arg(long)]
    pub out: PathBuf,
    /// Write unscaled signals instead of the dataset-wide [-1, 1] scaling.
    #[arg(long)]
    pub raw: bool,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.n_per_class == 0 {
        return Err(usage("--n-per-class must be at least 1"));
    }
    let mut m = RunManifest::new("synth");
    m.seed = Some(a.seed);
    let cfg = SynthConfig {
        n_rest: a.n_per_class,
        n_movement: a.n_per_class,
        length: a.length,
        sample_rate: a.sample_rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg)?;
    let data = if a.raw { data } else { normalize(&data)?.0 };
    dataio::save(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    m.config = format!(
        "n_per_class = {}\nlength = {}\nsample_rate = {}\nraw = {}\n",
        a.n_per_class, a.length, a.sample_rate, a.raw
    );
    m.output("data", &a.out).write(&a.out)?;
    println!(
        "wrote {} signals of length {} to {}",
        data.len(),
        data.signal_len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `key = value` training config; defaults apply for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a checkpoint directory (its config is used).
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, conflicts_with = "resume")]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", conflicts_with = "resume")]
    pub overrides: Vec<String>,
    /// Surrogate classifier for IS and FID in the history.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Stop (resumably) after this many epochs.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let raw = load_data(&a.data)?;
    let (data, norm) = normalize(&raw)?;
    let config = match &a.resume {
        Some(dir) => TrainConfig::load(&dir.join("config.txt"))
            .with_context(|| format!("reading checkpoint {}", dir.display()))?,
        None => {
            let mut cfg = match &a.config {
                Some(p) => {
                    TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?
                }
                None => TrainConfig::default(),
            };
            cfg.apply(&a.overrides.join("\n"))?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            cfg
        }
    };
    let classifier = a.classifier.as_deref().map(Classifier::load).transpose()?;
    create_dir(&a.out_dir.join("checkpoints"))?;
    fs::write(
        a.out_dir.join("normalization.txt"),
        format!("mean = {}\nscale = {}\n", norm.mean, norm.scale),
    )?;
    let started = RunManifest::new("train");
    let status = match config.precision {
        Precision::F32 => run_training::<f32>(&a, &data, config.clone(), classifier)?,
        Precision::F64 => run_training::<f64>(&a, &data, config.clone(), classifier)?,
    };
    let mut m = started.input("data", &a.data);
    m.seed = Some(config.seed);
    m.config = config.to_text();
    if let Some(p) = &a.config {
        m = m.input("config", p);
    }
    if let Some(p) = &a.resume {
        m = m.input("resume", p);
    }
    if let Some(p) = &a.classifier {
        m = m.input("classifier", p);
    }
    m.output("history", &a.out_dir.join("history.csv"))
        .output("checkpoints", &a.out_dir.join("checkpoints"))
        .write(&a.out_dir)?;
    match status {
        RunStatus::Finished => println!("training finished"),
        RunStatus::Paused => println!("epoch budget reached; resume from the latest checkpoint"),
    }
    Ok(())
}

fn run_training<T: Real>(
    a: &TrainArgs,
    data: &Dataset,
    config: TrainConfig,
    classifier: Option<Classifier>,
) -> Result<RunStatus> {
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::<T>::from_checkpoint(CheckpointRecord::load(dir)?)?,
        None => Trainer::<T>::new(config)?,
    };
    trainer.set_classifier(classifier);
    let out = a.out_dir.clone();
    let status = trainer.run(data, a.max_epochs, &mut |t| {
        let record = t.checkpoint();
        let name = format!("epoch-{:06}", record.epoch());
        record.save(&out.join("checkpoints").join(&name))?;
        fs::write(out.join("history.csv"), history_csv(t.history()))?;
        fs::write(out.join("latest"), format!("{name}\n"))?;
        if let Some(row) = t.history().last() {
            eprintln!(
                "{name}: stage {} {} epoch {} W~ {:.5} swd {:.5}",
                row.stage,
                row.kind.name(),
                row.epoch,
                row.losses.critic_difference,
                row.metrics.swd
            );
        }
        Ok(())
    })?;
    Ok(status)
}

#[derive(Args)]
pub struct ClassifierArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    /// Average-pool the signals to this length before training.
    #[arg(long)]
    pub length: Option<usize>,
}

pub fn classifier(a: ClassifierArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let data = match a.length {
        Some(len) if len != data.signal_len() => {
            let signals = stage_signals(&data, data.signal_len(), len)?;
            let rate = data.sample_rate * len as f64 / data.signal_len() as f64;
            Dataset::new(signals, data.labels().to_vec(), rate)?
        }
        _ => data,
    };
    let ratios = if data.len() == 438 {
        SplitRatios::REFERENCE
    } else {
        SplitRatios::Fractions(286.0 / 438.0, 72.0 / 438.0, 80.0 / 438.0)
    };
    let assignment = split(data.len(), ratios, a.seed)?;
    let cfg = ClassifierConfig {
        epochs: a.epochs,
        channels: a.channels,
        seed: a.seed,
        ..ClassifierConfig::default()
    };
    let (clf, report) = train_surrogate_classifier(&data, &assignment, &cfg)?;
    clf.save(&a.out)?;
    let mut m = RunManifest::new("classifier").input("data", &a.data);
    m.seed = Some(a.seed);
    m.config = format!(
        "epochs = {}\nchannels = {}\nlength = {}\nbest_epoch = {}\nval_accuracy = {}\ntest_accuracy = {}\n",
        a.epochs,
        a.channels,
        data.signal_len(),
        report.best_epoch,
        report.val_accuracy,
        report.test_accuracy
    );
    m.output("classifier", &a.out).write(&a.out)?;
    println!(
        "best epoch {} val accuracy {:.4} test accuracy {:.4}",
        report.best_epoch, report.val_accuracy, report.test_accuracy
    );
    Ok(())
}

fn load_generator<T: Real>(dir: &Path) -> Result<StagedNetwork<T>> {
    let rec = CheckpointRecord::<T>::load(dir)
        .with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok(StagedNetwork::from_params(
        Role::Generator,
        &rec.config.net,
        rec.stage,
        rec.fade_alpha,
        rec.generator,
    )?)
}

/// Samples from a checkpoint's generator and the full-resolution length.
fn sample_checkpoint(dir: &Path, n: usize, seed: u64) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if CheckpointRecord::<f64>::stored_precision(dir)? == 32 {
        let g = load_generator::<f32>(dir)?;
        Ok((
            generate_signals(&g, n, 64, &mut rng)?,
            g.config().full_len(),
        ))
    } else {
        let g = load_generator::<f64>(dir)?;
        Ok((
            generate_signals(&g, n, 64, &mut rng)?,
            g.config().full_len(),
        ))
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory whose generator supplies the fake signals.
    #[arg(long, required_unless_present = "fake")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset file used as the fake signals instead of a generator.
    #[arg(long, conflicts_with = "checkpoint")]
    pub fake: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of generated signals (default: as many as real ones).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = metrics::DEFAULT_PROJECTIONS)]
    pub projections: usize,
    /// Apply the dataset-wide scaling to the real data first.
    #[arg(long)]
    pub normalize_real: bool,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut real = load_data(&a.data)?;
    if a.normalize_real {
        real = normalize(&real)?.0;
    }
    let fake = match (&a.checkpoint, &a.fake) {
        (Some(dir), _) => sample_checkpoint(dir, a.n.unwrap_or(real.len()), a.seed)?.0,
        (None, Some(p)) => load_data(p)?.signals().to_vec(),
        (None, None) => return Err(usage("one of --checkpoint or --fake is required")),
    };
    let fake_len = fake.first().map(Vec::len).unwrap_or(0);
    if fake_len > real.signal_len() {
        return Err(Error::Data(format!(
            "fake signals ({fake_len}) are longer than real ones ({})",
            real.signal_len()
        ))
        .into());
    }
    let real_signals = stage_signals(&real, real.signal_len(), fake_len)?;
    let rate = real.sample_rate * fake_len as f64 / real.signal_len() as f64;
    let classifier = a.classifier.as_deref().map(Classifier::load).transpose()?;
    let report = match &classifier {
        Some(c) => {
            let r = upsample_to(&real_signals, c.input_len())?;
            let f = upsample_to(&fake, c.input_len())?;
            let mut rep =
                metrics::evaluate(&r, &f, Some(c), a.projections, &metrics::DEFAULT_SWD_SEEDS)?;
            rep.ed_min_delta = metrics::euclidean_min_delta(&real_signals, &fake)?;
            rep.swd = metrics::sliced_wasserstein_averaged(
                &real_signals,
                &fake,
                a.projections,
                &metrics::DEFAULT_SWD_SEEDS,
            )?;
            rep
        }
        None => metrics::evaluate(
            &real_signals,
            &fake,
            None,
            a.projections,
            &metrics::DEFAULT_SWD_SEEDS,
        )?,
    };
    create_dir(&a.out)?;
    fs::write(a.out.join("metrics.csv"), report.to_csv())?;
    let spectra = [
        ("real", mean_spectrum(&real_signals, rate)?),
        ("fake", mean_spectrum(&fake, rate)?),
    ];
    fs::write(a.out.join("spectra.csv"), plots::spectra_csv(&spectra))?;
    fs::write(
        a.out.join("spectra.svg"),
        plots::spectra_svg("Mean spectra", &spectra),
    )?;
    let dists = [
        ("real", plots::TimeDistribution::of(&real_signals)?),
        ("fake", plots::TimeDistribution::of(&fake)?),
    ];
    fs::write(a.out.join("time_distribution.csv"), plots::time_csv(&dists))?;
    fs::write(a.out.join("time_distribution.svg"), plots::time_svg(&dists))?;
    let mut m = RunManifest::new("eval").input("data", &a.data);
    m.seed = Some(a.seed);
    m.config = format!(
        "projections = {}\nnormalize_real = {}\n",
        a.projections, a.normalize_real
    );
    for (label, p) in [
        ("checkpoint", &a.checkpoint),
        ("fake", &a.fake),
        ("classifier", &a.classifier),
    ] {
        if let Some(p) = p {
            m = m.input(label, p);
        }
    }
    m.output("metrics", &a.out.join("metrics.csv"))
        .write(&a.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

#[derive(Args)]
pub struct CriticlabArgs {
    /// `key = value` lab config (defaults to the near pair).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Run seeds `seed, seed+1, ...` instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn criticlab(a: CriticlabArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => LabConfig::parse(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => LabConfig::near(),
    };
    if let Some(s) = a.seed {
        cfg.seeds = (s..s + cfg.seeds.len() as u64).collect();
    }
    let results = run_lab(&cfg)?;
    create_dir(&a.out_dir)?;
    fs::write(a.out_dir.join("config.txt"), cfg.to_text())?;
    emit_gradient_field(&results, &a.out_dir)?;
    let mut m = RunManifest::new("criticlab");
    m.seed = a.seed;
    m.config = cfg.to_text();
    if let Some(p) = &a.config {
        m = m.input("config", p);
    }
    m.output("summary", &a.out_dir.join("summary.csv"))
        .write(&a.out_dir)?;
    for kind in &cfg.regimes {
        let runs: Vec<_> = results.for_regime(*kind).collect();
        let violations = runs.iter().filter(|r| r.ordering_violation).count();
        let diverged = runs.iter().filter(|r| r.diverged).count();
        println!(
            "{:<20} ordering violations {violations}/{} diverged {diverged}",
            kind.name(),
            runs.len()
        );
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SpectraMode {
    Original,
    Aliasing,
}

#[derive(Args)]
pub struct SpectraArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SpectraMode::Original)]
    pub mode: SpectraMode,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Upsampling methods for the aliasing experiment.
    #[arg(long, value_delimiter = ',', default_value = "nn,linear,cubic")]
    pub methods: Vec<String>,
}

fn class_name(label: u8) -> String {
    match label {
        dataio::REST => "rest".into(),
        dataio::MOVEMENT => "movement".into(),
        l => format!("class{l}"),
    }
}

pub fn spectra(a: SpectraArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    create_dir(&a.out)?;
    let mode = match a.mode {
        SpectraMode::Original => {
            let mut series = vec![(
                "all".to_string(),
                mean_spectrum(data.signals(), data.sample_rate)?,
            )];
            let mut labels: Vec<u8> = data.labels().iter().flatten().copied().collect();
            labels.sort_unstable();
            labels.dedup();
            for l in labels {
                series.push((
                    class_name(l),
                    mean_spectrum(&data.of_class(l), data.sample_rate)?,
                ));
            }
            let named: Vec<(&str, _)> = series
                .iter()
                .map(|(n, s)| (n.as_str(), s.clone()))
                .collect();
            fs::write(a.out.join("spectra.csv"), plots::spectra_csv(&named))?;
            fs::write(
                a.out.join("spectra.svg"),
                plots::spectra_svg("Mean spectra", &named),
            )?;
            "original"
        }
        SpectraMode::Aliasing => {
            let methods = a
                .methods
                .iter()
                .map(|m| m.parse::<UpsampleMethod>())
                .collect::<tsgan_core::Result<Vec<_>>>()?;
            let res = aliasing_experiment(data.signals(), &methods, data.sample_rate)?;
            fs::write(a.out.join("spectra.csv"), res.to_csv())?;
            let mut named = vec![("original", res.original.clone())];
            named.extend(res.methods.iter().map(|(m, s)| (m.name(), s.clone())));
            fs::write(
                a.out.join("spectra.svg"),
                plots::spectra_svg("Downsample-upsample round trips", &named),
            )?;
            let mut summary = String::from("method,high_band_power\n");
            for m in &methods {
                let p = res.high_band_power(*m).expect("method was run");
                summary.push_str(&format!("{},{p}\n", m.name()));
                println!(
                    "{:<8} power above {:.2} Hz: {p:.6e}",
                    m.name(),
                    res.half_band_edge()
                );
            }
            fs::write(a.out.join("aliasing_summary.csv"), summary)?;
            "aliasing"
        }
    };
    let mut m = RunManifest::new("spectra").input("data", &a.data);
    m.config = format!("mode = {mode}\nmethods = {}\n", a.methods.join(","));
    m.output("spectra", &a.out.join("spectra.csv"))
        .write(&a.out)?;
    Ok(())
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.csv` selects the text format.
    #[arg(long)]
    pub out: PathBuf,
    /// Sample rate of full-length signals; scaled down for earlier stages.
    #[arg(long, default_value_t = dataio::DEFAULT_SAMPLE_RATE)]
    pub sample_rate: f64,
}

/// Generated values outside this band suggest a poorly trained generator.
pub const SANITY_BAND: f64 = 1.5;

pub fn generate(a: GenerateArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let (signals, full_len) = sample_checkpoint(&a.checkpoint, a.n, a.seed)?;
    let len = signals[0].len();
    let outside = signals
        .iter()
        .flatten()
        .filter(|v| v.abs() > SANITY_BAND)
        .count();
    if outside > 0 {
        eprintln!(
            "warning: {outside} generated values lie outside [-{SANITY_BAND}, {SANITY_BAND}]"
        );
    }
    let data = Dataset::unlabeled(signals, a.sample_rate * len as f64 / full_len as f64)?;
    dataio::save(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut m = RunManifest::new("generate").input("checkpoint", &a.checkpoint);
    m.seed = Some(a.seed);
    m.config = format!("n = {}\nsample_rate = {}\n", a.n, a.sample_rate);
    m.output("signals", &a.out).write(&a.out)?;
    println!(
        "wrote {} signals of length {len} to {}",
        a.n,
        a.out.display()
    );
    Ok(())
}
