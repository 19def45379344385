use binaural_core::autodiff::seeded_rng;
use binaural_core::data::{blob_frame, write_synthetic_dataset, Image, Manifest, Split, SynthConfig, MANIFEST_FILE};
use binaural_core::dsp::{make_mono, Channel, StftConfig, WaveformClip};
use binaural_core::inference::{
    evaluate_split, overlap_integrate, plan_windows, tdss_crop, Binauralizer, CropMode, Predictor, Region,
};
use binaural_core::metrics::{evaluate_clip, MetricReport};
use binaural_core::model::{ModelConfig, Network};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn ten_second_plan() {
    let plan = plan_windows(160_000, 16_000, 10, 100).unwrap();
    assert_eq!(plan.windows.len(), 95);
    assert_eq!((plan.window_len, plan.hop), (10_080, 1_600));
    let regular: Vec<_> = plan.windows.iter().filter(|w| !w.tail).collect();
    assert_eq!(regular.len(), 94);
    assert!((regular.last().unwrap().start_s - 9.3).abs() < 1e-12);
    let tail = plan.windows.last().unwrap();
    assert!(tail.tail);
    assert_eq!(tail.start_sample, 149_920);
    assert!((tail.start_s - 9.37).abs() < 1e-12);
    assert_eq!(tail.frame_index, 96);
    assert_eq!(plan.windows[0].frame_index, 3);
    assert_eq!(plan.windows[1].frame_index, 4);
    for pair in plan.windows[..94].windows(2) {
        assert_eq!(pair[1].start_sample - pair[0].start_sample, 1_600);
    }
}

#[test]
fn single_window_and_short_clips() {
    let plan = plan_windows(10_080, 16_000, 10, 7).unwrap();
    assert_eq!(plan.windows.len(), 1);
    assert_eq!(plan.windows[0].start_sample, 0);
    assert!(!plan.windows[0].tail);
    assert!(plan_windows(10_079, 16_000, 10, 7).is_err());
}

proptest! {
    #[test]
    fn every_sample_is_covered_by_one_to_eight_windows(len in 10_080usize..60_000) {
        let frames = (len as f64 / 1600.0).round() as usize;
        let plan = plan_windows(len, 16_000, 10, frames.max(1)).unwrap();
        let mut cover = vec![0usize; len];
        for w in &plan.windows {
            for c in &mut cover[w.start_sample..w.start_sample + plan.window_len] {
                *c += 1;
            }
            prop_assert!(w.frame_index < frames.max(1));
        }
        prop_assert!(cover.iter().all(|&c| (1..=8).contains(&c)));
    }

    #[test]
    fn integration_of_constants_is_exact(c in -10.0f64..10.0, len in 10_080usize..30_000) {
        let plan = plan_windows(len, 16_000, 10, 100).unwrap();
        let windows: Vec<_> = plan.windows.iter().map(|w| (w.start_sample, vec![c; plan.window_len])).collect();
        let out = overlap_integrate(&windows, len).unwrap();
        prop_assert!(out.iter().all(|&v| v == c));
    }

    #[test]
    fn integration_ignores_window_order(seed in 0u64..1000) {
        let mut rng = seeded_rng(seed);
        let plan = plan_windows(20_000, 16_000, 10, 100).unwrap();
        let mut windows: Vec<_> = plan
            .windows
            .iter()
            .map(|w| (w.start_sample, (0..plan.window_len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()))
            .collect();
        let a = overlap_integrate(&windows, 20_000).unwrap();
        windows.shuffle(&mut rng);
        let b = overlap_integrate(&windows, 20_000).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn overlap_integration_hand_cases() {
    let single = vec![(0, vec![0.5, -1.0, 2.0])];
    assert_eq!(overlap_integrate(&single, 3).unwrap(), vec![0.5, -1.0, 2.0]);
    let two = vec![(0, vec![1.0; 4]), (2, vec![3.0; 4])];
    assert_eq!(overlap_integrate(&two, 6).unwrap(), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    assert!(overlap_integrate(&[(0, vec![1.0; 2])], 3).is_err());
    assert!(overlap_integrate(&[(2, vec![1.0; 2])], 3).is_err());
}

#[test]
fn crop_schedule_cycles_through_five_regions() {
    use Region::*;
    let regions: Vec<Region> = (0..10).map(Region::for_frame).collect();
    assert_eq!(
        regions,
        vec![TopLeft, TopRight, BottomLeft, BottomRight, Centre, TopLeft, TopRight, BottomLeft, BottomRight, Centre]
    );
    let offsets: Vec<(usize, usize)> = Region::CYCLE.iter().map(|r| r.offset()).collect();
    assert_eq!(offsets, vec![(0, 0), (0, 32), (16, 0), (16, 32), (8, 16)]);

    // Pixel values encode their coordinates, so a crop reveals its offset.
    let mut frame = Image::filled(480, 240, [0, 0, 0]);
    for y in 0..240 {
        for x in 0..480 {
            frame.set_pixel(x, y, [y as u8, (x % 256) as u8, (x / 256) as u8]);
        }
    }
    for (index, (row, col)) in [(0, (0, 0)), (7, (16, 0)), (4, (8, 16)), (13, (16, 32))] {
        let crop = tdss_crop(&frame, index).unwrap();
        assert_eq!((crop.width(), crop.height()), (448, 224));
        for (y, x) in [(0, 0), (223, 447), (100, 300)] {
            assert_eq!(crop.pixel(x, y), frame.pixel(x + col, y + row), "index {index}");
        }
        assert_eq!(tdss_crop(&frame, index).unwrap(), crop);
    }
    assert!(tdss_crop(&Image::filled(448, 224, [0, 0, 0]), 0).is_err());
}

fn zero_mask_binauralizer(crop: CropMode) -> Binauralizer {
    let (net, mut store) = Network::build::<f32>(&ModelConfig::desk(), 5).unwrap();
    for p in store.params_mut() {
        if p.name.starts_with("head.") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Binauralizer::new(net, store, crop)
}

fn tone(len: usize) -> WaveformClip {
    let s = (0..len).map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.1 * (i as f64 * 0.31).cos()).collect();
    WaveformClip::mono(s, 16_000).unwrap()
}

#[test]
fn zero_mask_splits_mono_evenly() {
    let b = zero_mask_binauralizer(CropMode::Tdss);
    assert!(b.store.params().iter().any(|p| p.name.starts_with("head.")));
    let mono = tone(13_000);
    let frames: Vec<Image> = (0..9).map(|i| blob_frame(i as f64 / 8.0)).collect();
    let out = b.binauralize(&mono, 10, &frames[..]).unwrap();
    assert_eq!(out.len(), 13_000);
    let (l, r) = out.stereo_channels().unwrap();
    let m = mono.channel(Channel::Mono).unwrap();
    for ((a, c), x) in l.iter().zip(r).zip(m) {
        assert!((a - x / 2.0).abs() < 1e-6 && (c - x / 2.0).abs() < 1e-6, "{a} {c} {x}");
    }
}

#[test]
fn schedule_is_invisible_on_a_constant_frame() {
    let (net, store) = Network::build::<f32>(&ModelConfig::desk(), 6).unwrap();
    let mono = tone(12_000);
    let frames = vec![Image::filled(480, 240, [90, 140, 60]); 8];
    let on = Binauralizer::new(net.clone(), store.clone(), CropMode::Tdss);
    let off = Binauralizer::new(net, store, CropMode::Centre);
    let a = on.binauralize(&mono, 10, &frames[..]).unwrap();
    let b = off.binauralize(&mono, 10, &frames[..]).unwrap();
    let (al, ar) = a.stereo_channels().unwrap();
    let (bl, br) = b.stereo_channels().unwrap();
    for (x, y) in al.iter().chain(ar).zip(bl.iter().chain(br)) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn threaded_windows_match_sequential() {
    let (net, store) = Network::build::<f32>(&ModelConfig::desk(), 7).unwrap();
    let mono = tone(14_000);
    let frames: Vec<Image> = (0..9).map(|i| blob_frame(i as f64 / 8.0)).collect();
    let mut b = Binauralizer::new(net, store, CropMode::Tdss);
    let seq = b.binauralize(&mono, 10, &frames[..]).unwrap();
    b.threads = 3;
    let par = b.binauralize(&mono, 10, &frames[..]).unwrap();
    assert_eq!(seq, par);
}

fn small_dataset(dir: &std::path::Path) -> Manifest {
    let cfg = SynthConfig {
        clips: 10,
        duration_s: 1.2,
        ..SynthConfig::default()
    };
    write_synthetic_dataset(dir, &cfg, false).unwrap();
    Manifest::load(&dir.join(MANIFEST_FILE)).unwrap()
}

#[test]
fn baseline_report_matches_the_metric_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let stft = StftConfig::default();
    let eval = evaluate_split(&manifest, Split::Train, &Predictor::MonoMono, &stft, serde_json::json!({})).unwrap();
    assert!(eval.skipped.is_empty());
    assert_eq!(eval.report.per_clip.len(), 8);
    let mut expected = Vec::new();
    for r in manifest.split(Split::Train) {
        let clip = manifest.open_clip(r).unwrap();
        let m = make_mono(&clip.audio).unwrap();
        let half: Vec<f64> = m.channel(Channel::Mono).unwrap().iter().map(|v| v / 2.0).collect();
        let pred = WaveformClip::stereo(half.clone(), half, 16_000).unwrap();
        expected.push(evaluate_clip(&r.clip_id, &pred, &clip.audio, &stft).unwrap());
    }
    assert_eq!(eval.report.per_clip, expected);

    let again = evaluate_split(&manifest, Split::Train, &Predictor::MonoMono, &stft, serde_json::json!({})).unwrap();
    assert_eq!(again.report.to_json(), eval.report.to_json());
    assert_eq!(MetricReport::from_json(&eval.report.to_json()).unwrap(), eval.report);
}

#[test]
fn true_difference_through_the_pipeline_is_nearly_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let stft = StftConfig::default();
    let oracle = Predictor::Oracle { stft, freq_bins: 256 };
    let eval = evaluate_split(&manifest, Split::Train, &oracle, &stft, serde_json::json!({})).unwrap();
    let base = evaluate_split(&manifest, Split::Train, &Predictor::MonoMono, &stft, serde_json::json!({})).unwrap();
    for (o, b) in eval.report.per_clip.iter().zip(&base.report.per_clip) {
        assert!(o.stft_d < 1e-3 && o.wav_d < 1e-3, "{o:?}");
        assert!(o.snr_db > 60.0, "{o:?}");
        assert!(o.stft_d < b.stft_d || b.stft_d < 1e-3);
    }
}

#[test]
fn failing_clips_are_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path());
    let victim = manifest.split(Split::Test).next().unwrap().clone();
    std::fs::write(manifest.audio_path(&victim), b"not a wav").unwrap();
    let eval = evaluate_split(
        &manifest,
        Split::Test,
        &Predictor::MonoMono,
        &StftConfig::default(),
        serde_json::json!({}),
    )
    .unwrap();
    assert_eq!(eval.skipped.len(), 1);
    assert_eq!(eval.skipped[0].0, victim.clip_id);
    assert!(eval.report.per_clip.is_empty());
}
