use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tsgan_bench::{bench_config, gaussian_tensor};
use tsgan_core::trainer::Trainer;

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("stage0_update");
    for &ch in &[8usize, 50] {
        let cfg = bench_config(ch, 16);
        let real = gaussian_tensor(&[16, 1, cfg.net.base_len], 0);
        let mut trainer = Trainer::<f64>::new(cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("critic", ch), &ch, |b, _| {
            b.iter(|| trainer.critic_update(&real).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("generator", ch), &ch, |b, _| {
            b.iter(|| trainer.generator_update(16).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = steps
}
criterion_main!(benches);
