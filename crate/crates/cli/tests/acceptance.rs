//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test -p binaural-cli --test acceptance -- 4 5`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use binaural_core::autodiff::suite::primitive_suite;
use binaural_core::autodiff::{seeded_rng, Mode, ParamStore, Tape, Tensor};
use binaural_core::checks::{full_model_check, loss_suite, FULL_MODEL_TOLERANCE};
use binaural_core::data::Image;
use binaural_core::dsp::{recover_channels, stft, Stft, StftConfig};
use binaural_core::inference::{overlap_integrate, plan_windows, region_crop, tdss_crop, Region};
use binaural_core::losses::{loss_scl, ContrastiveBatch};
use binaural_core::metrics::{Aggregate, MetricReport};
use binaural_core::model::{ModelConfig, Network};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        passed,
        detail: detail.into(),
    })
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_binaural")
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

/// Runs the CLI, failing on a non-zero exit status.
fn cli(args: &[&str], env: &[(&str, &str)]) -> Result<()> {
    let mut cmd = Command::new(binary());
    cmd.args(args).env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().with_context(|| format!("spawning {args:?}"))?;
    if !out.status.success() {
        bail!(
            "binaural {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
    }
    Ok(())
}

fn report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MetricReport::from_json(&text)?)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn random_tensor(seed: u64, shape: &[usize], scale: f64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn gradient_suite() -> Result<Verdict> {
    let started = Instant::now();
    let mut reports = primitive_suite(17);
    reports.extend(loss_suite(17));
    let full = full_model_check(38);
    let mut shapes = std::collections::BTreeMap::<String, usize>::new();
    for r in &reports {
        let op = r.label.split([' ', '[']).next().unwrap_or_default().to_string();
        *shapes.entry(op).or_default() += 1;
    }
    let thin: Vec<_> = shapes.iter().filter(|(_, &n)| n < 5).map(|(k, n)| format!("{k}:{n}")).collect();
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed || r.tol > 1e-3).map(|r| r.label.clone()).collect();
    let worst = reports.iter().map(|r| r.worst()).fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        failed.is_empty() && thin.is_empty() && full.passed && full.tol <= FULL_MODEL_TOLERANCE && secs < 120.0,
        format!(
            "{} checks over {} operations, worst rel err {worst:.2e}; full model {:.2e} (tol {:.0e}); {secs:.1}s; failed {failed:?}; under five shapes {thin:?}",
            reports.len(),
            shapes.len(),
            full.worst(),
            full.tol
        ),
    )
}

fn signal_algebra() -> Result<Verdict> {
    let started = Instant::now();
    let cfg = StftConfig::default();
    let proc = Stft::new(cfg)?;
    let len = 10_080;
    let edge = cfg.window_len();
    let mut rng = seeded_rng(2);
    let mut round_trip: f64 = 0.0;
    let mut recover: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = proc.inverse(&proc.forward(&x)?, len)?;
        for i in edge..len - edge {
            round_trip = round_trip.max((x[i] - y[i]).abs());
        }
        let l: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m: Vec<f64> = l.iter().zip(&r).map(|(a, b)| a + b).collect();
        let d: Vec<f64> = l.iter().zip(&r).map(|(a, b)| a - b).collect();
        let (pl, pr) = recover_channels(&stft(&m, &cfg)?, &stft(&d, &cfg)?)?;
        let (gl, gr) = (stft(&l, &cfg)?, stft(&r, &cfg)?);
        for (a, b) in pl.bins().iter().zip(gl.bins()).chain(pr.bins().iter().zip(gr.bins())) {
            recover = recover.max((a - b).norm());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        round_trip < 1e-4 && recover < 1e-6 && secs < 30.0,
        format!("interior round trip {round_trip:.2e}; channel recovery {recover:.2e}; {secs:.1}s"),
    )
}

fn avad_identity() -> Result<Verdict> {
    let cfg = ModelConfig::miniature();
    let (net, mut store) = Network::build::<f64>(&cfg, 3)?;
    let plain_cfg = ModelConfig { avad: false, ..cfg.clone() };
    let (plain, mut plain_store) = Network::build::<f64>(&plain_cfg, 3)?;
    for p in plain_store.params_mut() {
        let id = store.find(&p.name).with_context(|| format!("{} missing from the AVAD network", p.name))?;
        p.value = store.get(id).value.clone();
    }
    let heads_zero = store
        .params()
        .iter()
        .filter(|p| p.name.contains(".alpha.") || p.name.contains(".beta."))
        .all(|p| p.value.data().iter().all(|&v| v == 0.0));
    let mut identical = 0;
    for seed in 0..10 {
        let mono = random_tensor(100 + seed, &[2, 2, cfg.freq_bins, cfg.frames], 1.0);
        let frames = random_tensor(200 + seed, &[2, 3, cfg.image_height, cfg.image_width], 2.0);
        let mask = |net: &Network, store: &mut ParamStore<f64>| -> Result<Vec<u64>> {
            let mut tape = Tape::new();
            let m = tape.constant(mono.clone());
            let f = tape.constant(frames.clone());
            let out = net.forward(&mut tape, store, m, f, Mode::Train)?;
            Ok(tape.value(out.mask).data().iter().map(|v| v.to_bits()).collect())
        };
        if mask(&net, &mut store)? == mask(&plain, &mut plain_store)? {
            identical += 1;
        }
    }
    verdict(
        heads_zero && identical == 10,
        format!("modulation heads zero at init: {heads_zero}; bitwise-equal decoder outputs on {identical}/10 inputs"),
    )
}

fn scl_value(rows: [&[f64]; 3]) -> Result<f64> {
    let mut t = Tape::<f64>::new();
    let mut var = |r: &[f64]| t.constant(Tensor::from_vec(&[1, r.len()], r.to_vec()).unwrap());
    let cb = ContrastiveBatch {
        anchors: var(rows[0]),
        positives: var(rows[1]),
        negatives: var(rows[2]),
    };
    let v = loss_scl(&mut t, &cb, 0.1)?;
    Ok(t.value(v).item())
}

fn scl_oracle() -> Result<Verdict> {
    let hand = scl_value([&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]])?;
    let e10 = 10f64.exp();
    let expect = -(e10 / (e10 + 1.0)).ln();
    let symmetric = scl_value([&[0.6, 0.8], &[0.0, 1.0], &[0.0, 1.0]])?;
    let (a, b) = ((hand - expect).abs(), (symmetric - std::f64::consts::LN_2).abs());
    verdict(
        a <= 1e-9 && b <= 1e-12,
        format!("s+=1, s-=0: {hand:.12e} (err {a:.1e}); equal similarities: {symmetric:.15} (err {b:.1e})"),
    )
}

fn tdss_determinism() -> Result<Verdict> {
    use Region::*;
    let expected = [TopLeft, TopRight, BottomLeft, BottomRight, Centre];
    let sequence: Vec<Region> = (0..10).map(Region::for_frame).collect();
    let order_ok = sequence.iter().enumerate().all(|(i, r)| *r == expected[i % 5]);
    let offsets: Vec<_> = expected.iter().map(|r| r.offset()).collect();
    let offsets_ok = offsets == [(0, 0), (0, 32), (16, 0), (16, 32), (8, 16)];

    let mut frame = Image::filled(480, 240, [0, 0, 0]);
    for y in 0..240 {
        for x in 0..480 {
            frame.set_pixel(x, y, [y as u8, (x % 256) as u8, (x / 256) as u8]);
        }
    }
    let mut crops_ok = true;
    for i in 0..10 {
        let crop = tdss_crop(&frame, i)?;
        let (row, col) = Region::for_frame(i).offset();
        crops_ok &= crop == tdss_crop(&frame, i)? && crop == region_crop(&frame, sequence[i])?;
        crops_ok &= crop.pixel(0, 0) == frame.pixel(col, row) && crop.pixel(447, 223) == frame.pixel(col + 447, row + 223);
    }

    let mut constant_ok = true;
    for (len, c) in [(10_080, 0.1), (16_000, -0.37), (37_123, 1.0 / 3.0), (160_000, 2.5e-3)] {
        let plan = plan_windows(len, 16_000, 10, len / 1600 + 1)?;
        let windows: Vec<_> = plan.windows.iter().map(|w| (w.start_sample, vec![c; plan.window_len])).collect();
        constant_ok &= overlap_integrate(&windows, len)?.iter().all(|&v| v == c);
    }
    verdict(
        order_ok && offsets_ok && crops_ok && constant_ok,
        format!(
            "sequence {sequence:?}; offsets {offsets:?}; crops deterministic {crops_ok}; constant integration exact {constant_ok}"
        ),
    )
}

fn end_to_end_learning() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().join("run");
    let cfg = desk_config();
    let started = Instant::now();
    cli(&["train", "--config", path_str(&cfg), "--out", path_str(&out)], &[])?;
    let train_secs = started.elapsed().as_secs_f64();
    let resolved = out.join("config.toml");
    let eval = out.join("eval");
    let ckpt = out.join("best.ckpt");
    cli(&["eval", "--config", path_str(&resolved), "--checkpoint", path_str(&ckpt), "--out", path_str(&eval)], &[])?;
    cli(&["eval", "--config", path_str(&resolved), "--baseline", "--out", path_str(&eval)], &[])?;
    let base = report(&eval.join("baseline.json"))?.aggregate;
    let on = report(&eval.join("tdss_on.json"))?.aggregate;
    let off = report(&eval.join("tdss_off.json"))?.aggregate;
    ensure!(base.clips == 6 && on.clips == 6 && off.clips == 6, "expected six test clips");
    let beats = |a: &Aggregate| a.stft_d <= 0.7 * base.stft_d && a.snr_db >= base.snr_db + 3.0;
    let robust = on.stft_d <= 1.02 * off.stft_d;
    verdict(
        beats(&on) && beats(&off) && robust && train_secs <= 1200.0,
        format!(
            "baseline stft {:.4} snr {:.2} dB; tdss on stft {:.4} ({:.2}x) snr {:.2} dB; tdss off stft {:.4} ({:.2}x) snr {:.2} dB; on/off stft {:.3}; training {:.0}s",
            base.stft_d,
            base.snr_db,
            on.stft_d,
            on.stft_d / base.stft_d,
            on.snr_db,
            off.stft_d,
            off.stft_d / base.stft_d,
            off.snr_db,
            on.stft_d / off.stft_d,
            train_secs
        ),
    )
}

/// Settings shared by both arms of the loss ablation.
const ABLATION_ENV: [(&str, &str); 3] = [
    ("BINAURAL__DATA__SYNTH__ITD", "true"),
    ("BINAURAL__LOSS__LAMBDA", "0.0"),
    ("BINAURAL__OPTIM__EPOCHS", "20"),
];

fn loss_ablation() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let cfg = desk_config();
    let full = dir.path().join("full");
    let mse = dir.path().join("mse");
    cli(&["train", "--config", path_str(&cfg), "--out", path_str(&full)], &ABLATION_ENV)?;
    let manifest = full.join("data/manifest.jsonl");
    let mut mse_env = ABLATION_ENV.to_vec();
    mse_env.extend([
        ("BINAURAL__LOSS__ZETA", "0.0"),
        ("BINAURAL__LOSS__ETA", "0.0"),
        ("BINAURAL__DATA__MANIFEST", path_str(&manifest)),
    ]);
    cli(&["train", "--config", path_str(&cfg), "--out", path_str(&mse)], &mse_env)?;
    let mut phs = Vec::new();
    for run in [&full, &mse] {
        let eval = run.join("eval");
        cli(
            &[
                "eval",
                "--config",
                path_str(&run.join("config.toml")),
                "--checkpoint",
                path_str(&run.join("best.ckpt")),
                "--tdss",
                "on",
                "--out",
                path_str(&eval),
            ],
            &[],
        )?;
        phs.push(report(&eval.join("tdss_on.json"))?.aggregate.phs_d);
    }
    verdict(
        phs[0] < phs[1],
        format!("test phs distance: mse+apm+phs {:.4}, mse only {:.4}", phs[0], phs[1]),
    )
}

const SMALL_RUN: &str = r#"
[data.synth]
clips = 8
duration_s = 2.0
split = [0.5, 0.25, 0.25]

[model]
image_channels = [4, 8, 8, 16]
audio_channels = [4, 8, 16, 16, 32]
attention_heads = 2
attention_dim = 16
avad_hidden = 8

[optim]
batch_size = 4
epochs = 2
segments_per_clip = 2
seed = 5
"#;

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL_RUN)?;
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        cli(&["train", "--config", path_str(&cfg), "--out", path_str(&out)], &[])?;
        cli(
            &[
                "eval",
                "--config",
                path_str(&out.join("config.toml")),
                "--checkpoint",
                path_str(&out.join("best.ckpt")),
                "--out",
                path_str(&out.join("eval")),
            ],
            &[],
        )?;
    }
    let files = [
        "best.ckpt",
        "last.ckpt",
        "loss.csv",
        "validation.csv",
        "eval/tdss_on.json",
        "eval/tdss_on.csv",
        "eval/tdss_off.json",
        "eval/tdss_off.csv",
    ];
    let mut differing = Vec::new();
    for f in files {
        let a = std::fs::read(dir.path().join("a").join(f))?;
        let b = std::fs::read(dir.path().join("b").join(f))?;
        if a != b {
            differing.push(f);
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} files compared byte for byte; differing {differing:?}", files.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Verdict>); 8] = [
        ("gradient suite", gradient_suite),
        ("signal algebra", signal_algebra),
        ("AVAD identity", avad_identity),
        ("SCL oracle", scl_oracle),
        ("TDSS determinism", tdss_determinism),
        ("end-to-end synthetic learning", end_to_end_learning),
        ("loss-component ablation", loss_ablation),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let started = Instant::now();
        let v = run().unwrap_or_else(|e| Verdict {
            passed: false,
            detail: format!("error: {e:#}"),
        });
        if !v.passed {
            failures += 1;
        }
        println!(
            "criterion {number} {name}: {} [{:.1}s] {}",
            if v.passed { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
