use binaural_core::autodiff::seeded_rng;
use binaural_core::data::{
    blob_frame, write_synthetic_dataset, Manifest, Motion, SceneSpec, Source, Split, SynthConfig, BACKGROUND, BLOB,
    MANIFEST_FILE, SCENES_FILE,
};
use binaural_core::dsp::{difference_spectrogram, make_mono, recover_channels, stft, StftConfig};
use proptest::prelude::*;

fn scene(x: f64, seed: u64, noise: bool) -> SceneSpec {
    let mut rng = seeded_rng(seed);
    SceneSpec {
        azimuth: x,
        source: if noise { Source::noise(&mut rng) } else { Source::tones(&mut rng, 3) },
        motion: Motion::Static,
        duration_s: 0.5,
        sample_rate: 16_000,
        fps: 10,
        itd: false,
    }
}

#[test]
fn centre_azimuth_has_no_difference_signal() {
    let spec = scene(0.5, 1, false);
    let clip = spec.render().unwrap();
    let (l, r) = clip.audio.stereo_channels().unwrap();
    assert_eq!(l, r);
    let s: Vec<f64> = (0..l.len()).map(|i| spec.source.sample(i as f64 / 16_000.0)).collect();
    for (a, b) in l.iter().zip(&s) {
        assert!((a - b / 2f64.sqrt()).abs() < 1e-15);
    }
    let d = difference_spectrogram(&clip.audio, &StftConfig::default()).unwrap();
    assert!(d.bins().iter().all(|z| z.norm() == 0.0));
    let frame = &clip.frames[0];
    assert_eq!(frame.pixel(240, 120), [BLOB; 3]);
    assert_eq!(frame.pixel(219, 120), [BACKGROUND; 3]);
    assert_eq!(frame.pixel(259, 120), [BLOB; 3]);
}

#[test]
fn full_left_silences_the_right_ear() {
    let clip = scene(0.0, 2, true).render().unwrap();
    let (l, r) = clip.audio.stereo_channels().unwrap();
    assert!(r.iter().all(|&v| v == 0.0));
    let cfg = StftConfig::default();
    let d = difference_spectrogram(&clip.audio, &cfg).unwrap();
    let sl = stft(l, &cfg).unwrap();
    assert_eq!(d.bins(), sl.bins());
}

#[test]
fn left_dominance_shrinks_as_the_source_moves_right() {
    let energy = |x: f64| {
        let clip = scene(x, 3, false).render().unwrap();
        let (l, r) = clip.audio.stereo_channels().unwrap();
        (l.iter().map(|v| v.abs()).sum::<f64>(), r.iter().map(|v| v.abs()).sum::<f64>())
    };
    let mut previous = f64::INFINITY;
    for k in 0..=10 {
        let x = k as f64 / 10.0;
        let (l, r) = energy(x);
        let margin = l - r;
        assert!(margin < previous, "x = {x}: {margin} not below {previous}");
        if x < 0.5 {
            assert!(l > r, "x = {x}");
        }
        previous = margin;
    }
}

#[test]
fn drifting_blob_follows_the_azimuth() {
    let mut spec = scene(0.2, 4, false);
    spec.duration_s = 1.0;
    spec.motion = Motion::Drift { end: 0.6 };
    let clip = spec.render().unwrap();
    assert_eq!(clip.frames.len(), 10);
    assert_eq!(clip.frames[0], blob_frame(0.2));
    assert_eq!(clip.frames[5], blob_frame(spec.azimuth_at(0.5)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn panning_preserves_power(x in 0.0f64..=1.0, seed in 0u64..100, noise in any::<bool>()) {
        let spec = scene(x, seed, noise);
        let clip = spec.render_audio().unwrap();
        let (l, r) = clip.stereo_channels().unwrap();
        let stereo: f64 = l.iter().zip(r).map(|(a, b)| a * a + b * b).sum();
        let source: f64 = (0..l.len()).map(|i| spec.source.sample(i as f64 / 16_000.0).powi(2)).sum();
        prop_assert!((stereo - source).abs() < 1e-6, "{stereo} vs {source}");
    }

    #[test]
    fn generated_clips_are_their_own_oracle(x in 0.0f64..=1.0, seed in 0u64..100, itd in any::<bool>()) {
        let mut spec = scene(x, seed, seed % 2 == 0);
        spec.itd = itd;
        let clip = spec.render_audio().unwrap();
        let cfg = StftConfig::default();
        let mono = make_mono(&clip).unwrap();
        let m = stft(mono.channel(binaural_core::dsp::Channel::Mono).unwrap(), &cfg).unwrap();
        let d = difference_spectrogram(&clip, &cfg).unwrap();
        let (l, r) = recover_channels(&m, &d).unwrap();
        let (gl, gr) = clip.stereo_channels().unwrap();
        let (gl, gr) = (stft(gl, &cfg).unwrap(), stft(gr, &cfg).unwrap());
        for (a, b) in l.bins().iter().zip(gl.bins()).chain(r.bins().iter().zip(gr.bins())) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }
}

#[test]
fn generated_dataset_round_trips_through_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("synth");
    let cfg = SynthConfig {
        clips: 64,
        duration_s: 1.0,
        ..SynthConfig::default()
    };
    let written = write_synthetic_dataset(&root, &cfg, false).unwrap();
    let loaded = Manifest::load(&root.join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.records, written.records);
    assert_eq!(loaded.records.len(), 64);
    let counts: Vec<usize> = [Split::Train, Split::Val, Split::Test]
        .iter()
        .map(|&s| loaded.split(s).count())
        .collect();
    assert_eq!(counts, vec![52, 6, 6]);
    let scenes = std::fs::read_to_string(root.join(SCENES_FILE)).unwrap();
    assert_eq!(scenes.lines().count(), 64);

    let clip = loaded.open_clip(&loaded.records[0]).unwrap();
    assert_eq!(clip.frames, 10);
    assert_eq!(clip.audio.len(), 16_000);
    let original = cfg.scenes().unwrap()[0].render().unwrap();
    // 16-bit storage quantizes the audio; frames are lossless.
    let (a, b) = (clip.audio.stereo_channels().unwrap(), original.audio.stereo_channels().unwrap());
    for (x, y) in a.0.iter().zip(b.0) {
        assert!((x - y).abs() <= 1.0 / 32768.0, "{x} vs {y}");
    }
    assert_eq!(clip.frame(3).unwrap(), original.frames[3]);

    assert!(write_synthetic_dataset(&root, &cfg, false).is_err());
    write_synthetic_dataset(&root, &cfg, true).unwrap();
}

#[test]
fn synthesis_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        clips: 10,
        duration_s: 0.7,
        ..SynthConfig::default()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_synthetic_dataset(&a, &cfg, false).unwrap();
    write_synthetic_dataset(&b, &cfg, false).unwrap();
    let mut files = Vec::new();
    let mut stack = vec![a.clone()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    assert!(files.len() > 20);
    for f in files {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}
