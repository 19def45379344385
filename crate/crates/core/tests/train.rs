use std::path::Path;

use binaural_core::autodiff::{seeded_rng, Adam, AdamConfig, ParamGroup};
use binaural_core::data::{
    default_stft, sample_training_pair, write_synthetic_dataset, Manifest, SampleConfig, SynthConfig, MANIFEST_FILE,
};
use binaural_core::dsp::StftConfig;
use binaural_core::losses::LossConfig;
use binaural_core::model::{ModelConfig, Network};
use binaural_core::train::{run_training, train_step, Batch, TrainConfig, TrainSetup, LAST_CHECKPOINT, LOSS_LOG};
use binaural_core::Error;

/// Narrower than the desk network so the tests stay quick.
fn small_model() -> ModelConfig {
    ModelConfig {
        image_channels: vec![4, 8, 8, 16],
        audio_channels: vec![4, 8, 16, 16, 32],
        attention_heads: 2,
        attention_dim: 16,
        avad_hidden: 8,
        ..ModelConfig::default()
    }
}

fn dataset(dir: &Path, cfg: &SynthConfig) -> Manifest {
    write_synthetic_dataset(dir, cfg, false).unwrap();
    Manifest::load(&dir.join(MANIFEST_FILE)).unwrap()
}

fn fixed_batch(manifest: &Manifest, n: usize, seed: u64) -> Batch {
    let clip = manifest.open_clip(&manifest.records[0]).unwrap();
    let stft = default_stft().unwrap();
    let mut rng = seeded_rng(seed);
    let examples: Vec<_> = (0..n)
        .map(|_| sample_training_pair(&clip, &stft, &SampleConfig::default(), &mut rng).unwrap())
        .collect();
    Batch::from_examples(&examples, 256).unwrap()
}

fn one_clip(dir: &Path) -> Manifest {
    dataset(
        dir,
        &SynthConfig {
            clips: 1,
            seed: 3,
            duration_s: 2.0,
            split: [1.0, 0.0, 0.0],
            drift_fraction: 0.0,
            ..SynthConfig::default()
        },
    )
}

#[test]
fn single_clip_overfit_drives_mse_down_tenfold() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = one_clip(dir.path());
    let batch = fixed_batch(&manifest, 4, 1);
    let cfg = ModelConfig::desk();
    let (net, mut store) = Network::build::<f32>(&cfg, 2).unwrap();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    let loss = LossConfig {
        lambda: 0.0,
        ..LossConfig::default()
    };
    let mut mse = Vec::new();
    for _ in 0..200 {
        mse.push(train_step(&net, &mut store, &mut adam, &batch, &loss).unwrap().mse);
    }
    let (first, last) = (mse[0], *mse.last().unwrap());
    assert!(last * 10.0 <= first, "mse {first} -> {last}");
}

#[test]
fn first_adam_step_moves_each_group_by_its_learning_rate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = one_clip(dir.path());
    let batch = fixed_batch(&manifest, 2, 4);
    let (net, mut store) = Network::build::<f32>(&small_model(), 5).unwrap();
    let before = store.clone();
    let cfg = AdamConfig::default();
    assert_eq!((cfg.lr_image, cfg.lr_audio), (5e-5, 5e-4));
    let mut adam = Adam::new(cfg, &store);
    train_step(&net, &mut store, &mut adam, &batch, &LossConfig::default()).unwrap();

    // Bias-corrected Adam's first update is lr · g / (|g| + ε), so no element
    // moves by more than its group's rate and elements with large gradients
    // move by almost exactly that much.
    for group in [ParamGroup::Image, ParamGroup::Audio] {
        let lr = cfg.lr(group);
        let mut largest = 0.0f64;
        let mut count = 0;
        for (p, q) in before.params().iter().zip(store.params()) {
            if p.group != group {
                continue;
            }
            count += 1;
            for (a, b) in p.value.data().iter().zip(q.value.data()) {
                let step = (*b as f64 - *a as f64).abs();
                assert!(step <= lr * 1.001 + 1e-9, "{}: moved {step} with lr {lr}", p.name);
                largest = largest.max(step);
            }
        }
        assert!(count > 0);
        assert!(largest >= lr * 0.99, "{group:?}: largest move {largest}");
    }
    assert!(store.params().iter().filter(|p| p.name.starts_with("image")).all(|p| p.group == ParamGroup::Image));
}

#[test]
fn non_finite_loss_aborts_without_touching_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = one_clip(dir.path());
    let batch = fixed_batch(&manifest, 2, 6);
    let (net, mut store) = Network::build::<f32>(&small_model(), 7).unwrap();
    store.params_mut().last_mut().unwrap().value.data_mut()[0] = f32::NAN;
    let before: Vec<Vec<u32>> = store
        .params()
        .iter()
        .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut adam = Adam::new(AdamConfig::default(), &store);
    match train_step(&net, &mut store, &mut adam, &batch, &LossConfig::default()) {
        Err(Error::Numeric(dump)) => {
            let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
            assert_eq!(v["adam_step"], 0);
            assert!(v["losses"].is_object());
            assert!(v["grad_norms"].is_object());
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(adam.step, 0);
    let after: Vec<Vec<u32>> = store
        .params()
        .iter()
        .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect();
    assert_eq!(before, after);
}

fn resume_setup(manifest: Manifest, epochs: usize) -> TrainSetup {
    TrainSetup {
        manifest,
        model: small_model(),
        loss: LossConfig::default(),
        sample: SampleConfig::default(),
        optim: TrainConfig {
            batch_size: 2,
            epochs,
            segments_per_clip: 2,
            val_segments_per_clip: 2,
            seed: 11,
            ..TrainConfig::default()
        },
        stft: StftConfig::default(),
    }
}

#[test]
fn resumed_run_matches_the_uninterrupted_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(
        &dir.path().join("data"),
        &SynthConfig {
            clips: 4,
            duration_s: 1.0,
            split: [0.5, 0.25, 0.25],
            ..SynthConfig::default()
        },
    );
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    let whole = run_training(&resume_setup(manifest.clone(), 3), &straight, None).unwrap();
    assert_eq!((whole.epochs_run, whole.steps_run), (3, 6));

    let first = run_training(&resume_setup(manifest.clone(), 2), &split, None).unwrap();
    assert_eq!(first.steps_run, 4);
    let saved = split.join("after_two.ckpt");
    std::fs::copy(split.join(LAST_CHECKPOINT), &saved).unwrap();
    let rest = run_training(&resume_setup(manifest, 3), &split, Some(&saved)).unwrap();
    assert_eq!((rest.epochs_run, rest.steps_run), (1, 2));

    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&straight.join(LAST_CHECKPOINT)), read(&split.join(LAST_CHECKPOINT)));
    assert_eq!(read(&straight.join(LOSS_LOG)), read(&split.join(LOSS_LOG)));
}
