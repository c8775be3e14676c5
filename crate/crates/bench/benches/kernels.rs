use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tsgan_bench::gaussian_tensor;
use tsgan_core::autodiff::kernels::{conv_forward, conv_input_grad, conv_weight_grad, ConvGeom};
use tsgan_core::Graph;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv9");
    for &(ch, len) in &[(16usize, 96usize), (50, 96), (50, 384)] {
        let g = ConvGeom {
            batch: 16,
            in_ch: ch,
            out_ch: ch,
            kernel: 9,
            stride: 1,
            in_len: len,
        };
        let x = gaussian_tensor(&[16, ch, len], 0);
        let w = gaussian_tensor(&[ch, ch, 9], 1);
        let gy = gaussian_tensor(&[16, ch, g.out_len()], 2);
        let id = format!("{ch}x{len}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &g, |b, g| {
            b.iter(|| conv_forward(x.data(), w.data(), g))
        });
        group.bench_with_input(BenchmarkId::new("input_grad", &id), &g, |b, g| {
            b.iter(|| conv_input_grad(gy.data(), w.data(), g))
        });
        group.bench_with_input(BenchmarkId::new("weight_grad", &id), &g, |b, g| {
            b.iter(|| conv_weight_grad(x.data(), gy.data(), g))
        });
    }
    group.finish();
}

fn double_backward(c: &mut Criterion) {
    let x0 = gaussian_tensor(&[16, 8, 96], 3);
    let w0 = gaussian_tensor(&[8, 8, 9], 4);
    c.bench_function("conv_grad_of_grad_norm", |b| {
        b.iter(|| {
            let g = Graph::new();
            let x = g.variable(x0.clone()).unwrap();
            let w = g.variable(w0.clone()).unwrap();
            let y = x
                .conv1d(w, 1)
                .unwrap()
                .leaky_relu(0.2)
                .unwrap()
                .sum_all()
                .unwrap();
            let gx = g.grad(y, &[x], true).unwrap()[0];
            let norm = gx.square().unwrap().sum_all().unwrap();
            g.grad(norm, &[w], false).unwrap()[0].value().data()[0]
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, double_backward
}
criterion_main!(benches);
