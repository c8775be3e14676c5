use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsgan_core::dataio::Dataset;
use tsgan_core::ganloss::PenaltyKind;
use tsgan_core::nets::{build_critic, build_generator, NetConfig};
use tsgan_core::trainer::{CheckpointRecord, Progress, RunStatus, TrainConfig, Trainer};
use tsgan_core::Tensor;

fn toy_config() -> TrainConfig {
    TrainConfig::parse(
        "channels = 4\nlatent_dim = 8\nbase_len = 8\nmax_stage = 2\nbatch_size = 8\n\
         epochs_per_stage = 2\nfade_epochs_per_stage = 2\neval_projections = 8\nseed = 11\nprecision = 64\n",
    )
    .unwrap()
}

fn toy_data(n: usize, len: usize) -> Dataset {
    let signals = (0..n)
        .map(|i| {
            let f = 1.0 + (i % 3) as f64;
            (0..len)
                .map(|t| 0.8 * (f * t as f64 * 0.4 + i as f64).sin())
                .collect()
        })
        .collect();
    Dataset::unlabeled(signals, 250.0).unwrap()
}

fn real_batch(data: &Dataset, n: usize, factor: usize) -> Tensor<f64> {
    let len = data.signal_len() / factor;
    let mut v = Vec::new();
    for s in &data.signals()[..n] {
        for c in s.chunks(factor) {
            v.push(c.iter().sum::<f64>() / factor as f64);
        }
    }
    Tensor::new(&[n, 1, len], v).unwrap()
}

#[test]
fn critic_update_contracts() {
    let data = toy_data(16, 32);
    let batch = real_batch(&data, 8, 4);
    let mut a = Trainer::<f64>::new(toy_config()).unwrap();
    let mut b = Trainer::<f64>::new(toy_config()).unwrap();
    let ra = a.critic_update(&batch).unwrap();
    let rb = b.critic_update(&batch).unwrap();
    assert!(ra.total_critic_loss.is_finite());
    assert_eq!(format!("{ra:?}"), format!("{rb:?}"));
    assert_eq!(a.critic().params(), b.critic().params());
    let ga = a.generator_update(8).unwrap();
    assert_eq!(ga, b.generator_update(8).unwrap());
    assert!(ga.is_finite());
    assert_eq!(a.generator().params(), b.generator().params());

    let mut cfg = toy_config();
    cfg.penalty.lambda = 0.0;
    cfg.penalty.drift_epsilon = 0.0;
    for kind in PenaltyKind::ALL {
        cfg.penalty.kind = kind;
        let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
        let r = t.critic_update(&batch).unwrap();
        assert_eq!(r.total_critic_loss, -r.critic_difference, "{kind}");
    }
}

#[test]
fn weight_clip_bounds_every_parameter() {
    let data = toy_data(16, 32);
    let batch = real_batch(&data, 8, 4);
    let mut cfg = toy_config();
    cfg.penalty.kind = PenaltyKind::WeightClip;
    let mut t = Trainer::<f64>::new(cfg).unwrap();
    for _ in 0..3 {
        t.critic_update(&batch).unwrap();
        for (_, p) in t.critic().params().iter() {
            assert!(p.data().iter().all(|v| v.abs() <= 0.01));
        }
    }
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let mut cfg = toy_config();
    cfg.epochs_per_stage = 0;
    cfg.final_stage = Some(0);
    let data = toy_data(16, 32);
    let mut t = Trainer::<f64>::new(cfg).unwrap();
    let before = (t.generator().params().clone(), t.critic().params().clone());
    assert_eq!(
        t.run(&data, None, &mut |_| Ok(())).unwrap(),
        RunStatus::Finished
    );
    assert_eq!(
        before,
        (t.generator().params().clone(), t.critic().params().clone())
    );
}

#[test]
fn rejects_short_or_mismatched_data() {
    let mut t = Trainer::<f64>::new(toy_config()).unwrap();
    assert!(t.run(&toy_data(4, 32), None, &mut |_| Ok(())).is_err());
    assert!(t.run(&toy_data(16, 64), None, &mut |_| Ok(())).is_err());
    let mut cfg = toy_config();
    cfg.precision = tsgan_core::trainer::Precision::F32;
    assert!(Trainer::<f64>::new(cfg).is_err());
}

#[test]
fn progressive_run_grows_and_records_history() {
    let data = toy_data(20, 32);
    let mut t = Trainer::<f64>::new(toy_config()).unwrap();
    let mut checkpoints = 0;
    t.run(&data, None, &mut |_| {
        checkpoints += 1;
        Ok(())
    })
    .unwrap();
    assert!(t.is_finished());
    assert_eq!(t.generator().signal_len(), 32);
    assert_eq!(t.critic().signal_len(), 32);
    assert_eq!(checkpoints, 5);
    let h = t.history();
    assert_eq!(h.len(), 5);
    assert_eq!(
        h.iter().map(|r| r.stage).collect::<Vec<_>>(),
        vec![0, 1, 1, 2, 2]
    );
    assert!(h
        .iter()
        .all(|r| r.metrics.swd.is_finite() && r.metrics.inception_score.is_nan()));
    // Three batches per epoch of 20 signals; one generator step per 5 critic steps.
    let Progress {
        critic_steps,
        gen_steps,
        ..
    } = t.progress();
    assert_eq!(critic_steps, 5 * 2 * 3);
    assert_eq!(gen_steps, critic_steps / 5);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = toy_data(20, 32);
    let mut full = Trainer::<f64>::new(toy_config()).unwrap();
    full.run(&data, None, &mut |_| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    for cut in [1, 3, 6] {
        let mut first = Trainer::<f64>::new(toy_config()).unwrap();
        assert_eq!(
            first.run(&data, Some(cut), &mut |_| Ok(())).unwrap(),
            RunStatus::Paused
        );
        let path = dir.path().join(format!("cut{cut}"));
        first.checkpoint().save(&path).unwrap();
        let loaded = CheckpointRecord::<f64>::load(&path).unwrap();
        let mut resumed = Trainer::from_checkpoint(loaded).unwrap();
        resumed.run(&data, None, &mut |_| Ok(())).unwrap();
        assert_eq!(
            resumed.generator().params(),
            full.generator().params(),
            "cut {cut}"
        );
        assert_eq!(
            resumed.critic().params(),
            full.critic().params(),
            "cut {cut}"
        );
        let csv = |t: &Trainer<f64>| tsgan_core::trainer::history_csv(t.history());
        assert_eq!(csv(&resumed), csv(&full), "cut {cut}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let data = toy_data(20, 32);
    let mut t = Trainer::<f64>::new(toy_config()).unwrap();
    t.run(&data, Some(3), &mut |_| Ok(())).unwrap();
    let rec = t.checkpoint();
    let dir = tempfile::tempdir().unwrap();
    rec.save(dir.path()).unwrap();
    let back = CheckpointRecord::<f64>::load(dir.path()).unwrap();
    assert_eq!(back.generator, rec.generator);
    assert_eq!(back.critic_moments, rec.critic_moments);
    assert_eq!(back.rng, rec.rng);
    assert_eq!(back.progress, rec.progress);
    assert_eq!(
        CheckpointRecord::<f64>::stored_precision(dir.path()).unwrap(),
        64
    );
}

/// Counts derived from the layer table: conv9 50->50 has 50*50*9 weights and
/// 50 biases; the stem maps 200 latents to 50 x 12; the critic head reads 50 x 12.
#[test]
fn full_size_parameter_counts() {
    let net = NetConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k + cout;
    let g = build_generator::<f64, _>(&net, 5, 1.0, &mut rng).unwrap();
    let expected_g = (200 * 600 + 600) + 6 * 2 * conv(50, 50, 9) + 2 * conv(50, 1, 1);
    assert_eq!(g.params().num_values(), expected_g);
    assert_eq!(expected_g, 391_302);
    let c = build_critic::<f64, _>(&net, 5, 1.0, &mut rng).unwrap();
    let expected_c = 2 * conv(1, 50, 1)
        + 5 * 2 * conv(50, 50, 9)
        + conv(51, 50, 9)
        + conv(50, 50, 9)
        + 6 * conv(50, 50, 9)
        + (600 + 1);
    assert_eq!(c.params().num_values(), expected_c);
    assert_eq!(expected_c, 407_151);
}
