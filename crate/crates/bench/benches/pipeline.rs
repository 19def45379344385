use std::hint::black_box;

use binaural_bench::{mono_clip, noise, random_batch, sweep_frames};
use binaural_core::autodiff::{Adam, AdamConfig};
use binaural_core::dsp::{Stft, StftConfig};
use binaural_core::inference::{Binauralizer, CropMode};
use binaural_core::losses::LossConfig;
use binaural_core::model::{ModelConfig, Network};
use binaural_core::train::train_step;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn stft(c: &mut Criterion) {
    let proc = Stft::new(StftConfig::default()).unwrap();
    let segment = noise(10_080, 1);
    let spec = proc.forward(&segment).unwrap();
    let mut g = c.benchmark_group("stft");
    g.bench_function("forward 0.63s", |b| b.iter(|| proc.forward(black_box(&segment)).unwrap()));
    g.bench_function("inverse 0.63s", |b| b.iter(|| proc.inverse(black_box(&spec), 10_080).unwrap()));
    g.finish();
}

fn training(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let (net, store) = Network::build::<f32>(&cfg, 1).unwrap();
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for (label, n, lambda) in [("desk batch 4, rec only", 4, 0.0), ("desk batch 4, rec + scl", 4, 0.1)] {
        let batch = random_batch(n, cfg.freq_bins, cfg.frames, 2);
        let loss = LossConfig {
            lambda,
            ..LossConfig::default()
        };
        g.bench_function(label, |b| {
            b.iter_batched(
                || {
                    let s = store.clone();
                    let adam = Adam::new(AdamConfig::default(), &s);
                    (s, adam)
                },
                |(mut s, mut adam)| train_step(&net, &mut s, &mut adam, &batch, &loss).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let (net, store) = Network::build::<f32>(&ModelConfig::desk(), 3).unwrap();
    let b = Binauralizer::new(net, store, CropMode::Tdss);
    let frames = sweep_frames(20);
    let mut g = c.benchmark_group("binauralize");
    g.sample_size(10);
    for seconds in [0.63, 2.0] {
        let mono = mono_clip(seconds, 4);
        g.bench_function(format!("{seconds}s clip"), |bench| {
            bench.iter(|| b.binauralize(black_box(&mono), 10, &frames[..]).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stft, training, inference);
criterion_main!(benches);
