use std::time::Duration;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sentinel_core::layers::{
    BackboneKind, CellKind, CellState, ForwardMode, GruCell, LstmCell, ModelConfig,
    SequenceClassifier,
};
use sentinel_core::video::resize_frame;
use sentinel_core::{Padding, Tape, Tensor};

fn rng() -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(0xBE7C)
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn bench_matmul(c: &mut Criterion) {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[128, 128]);
    let b = rand_tensor(&mut r, &[128, 128]);
    c.bench_function("matmul_128", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let ia = tape.leaf(a.clone());
            let ib = tape.leaf(b.clone());
            black_box(tape.matmul(ia, ib).unwrap());
        })
    });
}

fn bench_conv2d(c: &mut Criterion) {
    let mut r = rng();
    let input = rand_tensor(&mut r, &[16, 32, 32]);
    let kernel = rand_tensor(&mut r, &[32, 16, 3, 3]);
    let bias = Tensor::zeros(&[32]);
    c.bench_function("conv2d_32px_16to32ch_forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf(input.clone());
            let k = tape.leaf(kernel.clone());
            let b = tape.leaf(bias.clone());
            black_box(tape.conv2d(x, k, b, 1, Padding::Same).unwrap());
        })
    });
    c.bench_function("conv2d_32px_16to32ch_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.leaf_with_grad(input.clone());
            let k = tape.leaf_with_grad(kernel.clone());
            let b = tape.leaf_with_grad(bias.clone());
            let out = tape.conv2d(x, k, b, 1, Padding::Same).unwrap();
            let loss = tape.sum(out).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(k).unwrap());
        })
    });
}

fn bench_recurrent_steps(c: &mut Criterion) {
    let mut r = rng();
    let gru = GruCell::<f32>::new(1024, 64, &mut r);
    let lstm = LstmCell::<f32>::new(1024, 64, &mut r);
    let x = rand_tensor(&mut r, &[1024]);
    c.bench_function("gru_step_1024_to_64", |bench| {
        let state = CellState::zeros(64, false);
        bench.iter(|| black_box(gru.step(&x, &state).unwrap()))
    });
    c.bench_function("lstm_step_1024_to_64", |bench| {
        let state = CellState::zeros(64, true);
        bench.iter(|| black_box(lstm.step(&x, &state).unwrap()))
    });
}

fn bench_resize(c: &mut Criterion) {
    let mut r = rng();
    let frame = Tensor::from_fn(&[3, 240, 320], |_| r.gen_range(0.0..1.0));
    c.bench_function("resize_320x240_to_112", |bench| {
        bench.iter(|| black_box(resize_frame(&frame, 112).unwrap()))
    });
}

fn bench_sequence_forward(c: &mut Criterion) {
    let cfg = ModelConfig {
        backbone: BackboneKind::Conv3,
        cell: CellKind::Gru,
        hidden_size: 32,
        seq_len: 16,
        frame_size: 32,
        ..ModelConfig::default()
    };
    let model = SequenceClassifier::<f32>::new(&cfg, 7).unwrap();
    let mut r = rng();
    let seq = Tensor::from_fn(&[16, 3, 32, 32], |_| r.gen_range(0.0..1.0));
    c.bench_function("conv3_gru_sequence_inference", |bench| {
        bench.iter(|| black_box(model.predict(&seq).unwrap()))
    });
    c.bench_function("conv3_gru_sequence_train_step", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (p, _bind) = model
                .forward_on_tape(&mut tape, &seq, &ForwardMode::Train { dropout_seed: 1 })
                .unwrap();
            let loss = tape.bce_loss(p, 1.0).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.value(loss).data()[0]);
        })
    });
}

fn config() -> Criterion {
    Criterion::default()
        .warm_up_time(Duration::from_millis(300))
        .measurement_time(Duration::from_secs(2))
        .sample_size(20)
}

criterion_group! {
    name = benches;
    config = config();
    targets = bench_matmul, bench_conv2d, bench_recurrent_steps, bench_resize, bench_sequence_forward
}
criterion_main!(benches);
