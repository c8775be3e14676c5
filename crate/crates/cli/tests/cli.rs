use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tsgan_core::dataio::{self, Dataset};

fn tsgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsgan"))
        .args(args)
        .env("TSG_THREADS", "1")
        .output()
        .expect("spawn tsgan")
}

fn ok(args: &[&str]) -> String {
    let out = tsgan(args);
    assert!(
        out.status.success(),
        "tsgan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY: &str = "channels = 4\nlatent_dim = 8\nbase_len = 12\nmax_stage = 4\nfinal_stage = 2\n\
batch_size = 8\nepochs_per_stage = 20\nfade_epochs_per_stage = 20\neval_projections = 16\nseed = 3\nprecision = 64\n";

struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn toy() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("toy.tsg");
    ok(&[
        "synth",
        "--n-per-class",
        "16",
        "--length",
        "192",
        "--seed",
        "1",
        "--out",
        s(&data),
    ]);
    let config = root.join("toy.cfg");
    fs::write(&config, TOY).unwrap();
    Toy {
        _dir: dir,
        root,
        data,
        config,
    }
}

fn latest(run: &Path) -> PathBuf {
    let name = fs::read_to_string(run.join("latest")).unwrap();
    run.join("checkpoints").join(name.trim())
}

#[test]
fn synth_reference_size_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsg");
    let b = dir.path().join("b.tsg");
    ok(&[
        "synth",
        "--n-per-class",
        "219",
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    ok(&[
        "synth",
        "--n-per-class",
        "219",
        "--seed",
        "7",
        "--out",
        s(&b),
    ]);
    let data = dataio::load(&a).unwrap();
    assert_eq!((data.len(), data.signal_len()), (438, 768));
    assert!(data.flat().iter().all(|v| v.abs() <= 1.0));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(dir.path().join("a.tsg.manifest.txt").exists());
}

#[test]
fn argument_and_data_errors_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.tsg");
    let r = tsgan(&["synth", "--n-per-class", "0", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("n-per-class"));
    assert_eq!(tsgan(&["train", "--bogus"]).status.code(), Some(2));
    let missing = dir.path().join("missing.tsg");
    let r = tsgan(&[
        "train",
        "--data",
        s(&missing),
        "--out-dir",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.tsg"));
}

#[test]
fn train_resume_generate_and_eval() {
    let t = toy();
    let full = t.root.join("full");
    ok(&[
        "train",
        "--data",
        s(&t.data),
        "--config",
        s(&t.config),
        "--out-dir",
        s(&full),
    ]);
    let checkpoints: Vec<_> = fs::read_dir(full.join("checkpoints")).unwrap().collect();
    assert_eq!(checkpoints.len(), 5);
    let history = fs::read_to_string(full.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 6);
    let manifests = fs::read_dir(&full)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.txt")
        .count();
    assert_eq!(manifests, 1);
    let manifest = fs::read_to_string(full.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = train") && manifest.contains("input.data.hash = "));

    // Pause mid-run, then resume from the last complete checkpoint.
    let part = t.root.join("part");
    let msg = ok(&[
        "train",
        "--data",
        s(&t.data),
        "--config",
        s(&t.config),
        "--out-dir",
        s(&part),
        "--max-epochs",
        "50",
    ]);
    assert!(msg.contains("budget"));
    let rest = t.root.join("rest");
    ok(&[
        "train",
        "--data",
        s(&t.data),
        "--resume",
        s(&latest(&part)),
        "--out-dir",
        s(&rest),
    ]);
    let (a, b) = (latest(&full), latest(&rest));
    assert_eq!(a.file_name(), b.file_name());
    for f in [
        "generator.tsgp",
        "critic.tsgp",
        "adam_generator.tsgp",
        "state.txt",
        "history.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let g1 = t.root.join("g1.tsg");
    let g2 = t.root.join("g2.tsg");
    ok(&[
        "generate",
        "--checkpoint",
        s(&a),
        "--n",
        "10",
        "--seed",
        "4",
        "--out",
        s(&g1),
    ]);
    ok(&[
        "generate",
        "--checkpoint",
        s(&a),
        "--n",
        "10",
        "--seed",
        "4",
        "--out",
        s(&g2),
    ]);
    let gen = dataio::load(&g1).unwrap();
    assert_eq!((gen.len(), gen.signal_len()), (10, 48));
    assert_eq!(fs::read(&g1).unwrap(), fs::read(&g2).unwrap());

    let ev = t.root.join("eval");
    let csv = ok(&[
        "eval",
        "--checkpoint",
        s(&a),
        "--data",
        s(&t.data),
        "--out",
        s(&ev),
        "--n",
        "32",
    ]);
    assert!(csv.starts_with(tsgan_core::metrics::MetricReport::CSV_HEADER));
    for f in [
        "metrics.csv",
        "spectra.csv",
        "spectra.svg",
        "time_distribution.csv",
        "time_distribution.svg",
    ] {
        assert!(ev.join(f).exists(), "{f}");
    }
}

fn metrics_row(csv: &str) -> Vec<f64> {
    csv.lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect()
}

#[test]
fn eval_self_is_zero_and_noise_is_worse() {
    let t = toy();
    let clf = t.root.join("clf.tsgp");
    ok(&[
        "classifier",
        "--data",
        s(&t.data),
        "--out",
        s(&clf),
        "--epochs",
        "3",
        "--channels",
        "4",
    ]);
    let header: Vec<&str> = tsgan_core::metrics::MetricReport::CSV_HEADER
        .split(',')
        .collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let own = metrics_row(&ok(&[
        "eval",
        "--fake",
        s(&t.data),
        "--data",
        s(&t.data),
        "--classifier",
        s(&clf),
        "--out",
        s(&t.root.join("self")),
    ]));
    assert_eq!(own[col("fid")], 0.0);
    assert_eq!(own[col("swd")], 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise: Vec<Vec<f64>> = (0..32)
        .map(|_| (0..192).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let noise_path = t.root.join("noise.tsg");
    dataio::save(&Dataset::unlabeled(noise, 250.0).unwrap(), &noise_path).unwrap();
    let out = t.root.join("noise");
    let noisy = metrics_row(&ok(&[
        "eval",
        "--fake",
        s(&noise_path),
        "--data",
        s(&t.data),
        "--classifier",
        s(&clf),
        "--out",
        s(&out),
    ]));
    assert!(noisy[col("fid")] > own[col("fid")]);
    assert!(noisy[col("swd")] > own[col("swd")]);
    let written = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(
        written.lines().next().unwrap(),
        tsgan_core::metrics::MetricReport::CSV_HEADER
    );
}

#[test]
fn criticlab_bundle_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lab.cfg");
    fs::write(&cfg, "steps = 20\nseeds = 0,1\nhidden = 8,8\nbatch_size = 32\neval_samples = 64\ngrid_points = 21\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["criticlab", "--config", s(&cfg), "--out-dir", s(&out)]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "field.csv",
        "summary.csv",
        "critic.svg",
        "gradient.svg",
        "config.txt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let field = fs::read_to_string(a.join("field.csv")).unwrap();
    assert_eq!(field.lines().next(), Some("regime,seed,x,D,dD_dx"));
    assert_eq!(field.lines().count(), 1 + 4 * 2 * 21);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(
        summary.lines().next(),
        Some("regime,seed,W_tilde,ordering_violation,mean_grad_between_modes")
    );
    assert!(a.join("manifest.txt").exists());
}

#[test]
fn spectra_modes() {
    let t = toy();
    let orig = t.root.join("orig");
    ok(&["spectra", "--data", s(&t.data), "--out", s(&orig)]);
    let csv = fs::read_to_string(orig.join("spectra.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("series,freq_hz,mean_power,std_power")
    );
    for series in ["all,", "rest,", "movement,"] {
        assert_eq!(csv.lines().filter(|l| l.starts_with(series)).count(), 97);
    }
    let alias = t.root.join("alias");
    ok(&[
        "spectra",
        "--data",
        s(&t.data),
        "--mode",
        "aliasing",
        "--out",
        s(&alias),
    ]);
    let again = t.root.join("alias2");
    ok(&[
        "spectra",
        "--data",
        s(&t.data),
        "--mode",
        "aliasing",
        "--out",
        s(&again),
    ]);
    assert_eq!(
        fs::read(alias.join("spectra.csv")).unwrap(),
        fs::read(again.join("spectra.csv")).unwrap()
    );
    let summary = fs::read_to_string(alias.join("aliasing_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let bad = tsgan(&[
        "spectra",
        "--data",
        s(&t.data),
        "--mode",
        "aliasing",
        "--methods",
        "sinc",
        "--out",
        s(&alias),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
