//! Acceptance suite. Each criterion is one test and reports a PASS/FAIL line
//! on stderr even when output capture is on.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackforge::io::sequence::{write_scene, SequenceDir};
use trackforge::io::{rle, weights};
use trackforge::membank::{should_store, MemoryBank};
use trackforge::metrics::{per_object_metrics, FrameOutcome};
use trackforge::pipeline::{self, OracleNoise, TrackOptions};
use trackforge::propagation::{
    attention, attention_weights, encode_frame, propagate, IdentityBank, ModelParams, Tracker, TrackerConfig,
};
use trackforge::refiner::{select, MaskSource, RefinerKind, SelectionMode};
use trackforge::synth::{preset, ObjectSpec, PathKey, SceneSpec, Shape, SizeKey};
use trackforge::tensor::Tensor;
use trackforge::{Bitmask, RleMask};

struct Criterion {
    id: u32,
    name: &'static str,
    start: Instant,
}

impl Criterion {
    fn start(id: u32, name: &'static str) -> Self {
        Self {
            id,
            name,
            start: Instant::now(),
        }
    }

    fn within(&self, limit: Duration) {
        let took = self.start.elapsed();
        assert!(took < limit, "criterion {} took {took:?}, limit {limit:?}", self.id);
    }
}

impl Drop for Criterion {
    fn drop(&mut self) {
        let verdict = if std::thread::panicking() { "FAIL" } else { "PASS" };
        let line = format!(
            "[{verdict}] criterion {}: {} ({:.2}s)\n",
            self.id,
            self.name,
            self.start.elapsed().as_secs_f64()
        );
        let _ = std::io::stderr().lock().write_all(line.as_bytes());
    }
}

fn outcome(v: bool, p: bool, ov: f64) -> FrameOutcome {
    FrameOutcome::new(v, p, ov).unwrap()
}

#[test]
fn criterion_1_metric_algebra() {
    let c = Criterion::start(1, "metric algebra");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..120);
        let list: Vec<FrameOutcome> = (0..n)
            .map(|_| {
                let ov = match rng.random_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random::<f64>(),
                };
                outcome(rng.random_bool(0.7), rng.random_bool(0.7), ov)
            })
            .collect();
        let m = per_object_metrics(1, &list).unwrap();
        // independent tally
        let visible = list.iter().filter(|o| o.gt_visible).count();
        let r = list.iter().filter(|o| o.gt_visible && o.predicted && o.overlap > 0.0).count();
        let nre = list.iter().filter(|o| o.gt_visible && !o.predicted).count();
        let dre = list.iter().filter(|o| o.gt_visible && o.predicted && o.overlap == 0.0).count();
        assert_eq!((m.counts.tracked, m.counts.not_reported, m.counts.drifted), (r, nre, dre));
        if visible > 0 {
            assert_eq!(r + nre + dre, visible);
            assert_eq!(m.robustness, r as f64 / visible as f64);
            assert_eq!(m.nre, nre as f64 / visible as f64);
            assert_eq!(m.dre, dre as f64 / visible as f64);
        }
        for v in [m.auc, m.accuracy, m.robustness, m.nre, m.dre, m.adq, m.quality] {
            assert!((0.0..=1.0).contains(&v), "{v} out of range");
        }
    }

    let mut golden = vec![
        outcome(true, true, 0.9),
        outcome(true, true, 0.8),
        outcome(true, true, 0.0),
        outcome(true, false, 0.0),
        outcome(true, true, 0.7),
        outcome(true, true, 0.6),
    ];
    golden.extend((0..4).map(|_| outcome(false, false, 0.0)));
    let m = per_object_metrics(1, &golden).unwrap();
    assert_eq!(m.accuracy, 0.6);
    assert_eq!(m.robustness, 4.0 / 6.0);
    assert_eq!(m.nre, 1.0 / 6.0);
    assert_eq!(m.dre, 1.0 / 6.0);
    assert_eq!(m.adq, 1.0);
    assert_eq!(m.quality, 0.7);
    c.within(Duration::from_secs(5));
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(vec![rows, cols], |_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

#[test]
fn criterion_2_attention_oracle() {
    let c = Criterion::start(2, "attention oracle");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let n = rng.random_range(1..=32);
        let t = rng.random_range(1..=32);
        let ch = rng.random_range(1..=16);
        let cv = rng.random_range(1..=8);
        let scale = [0.1, 1.0, 5.0][rng.random_range(0..3)];
        let q = random_tensor(&mut rng, n, ch, scale);
        let k = random_tensor(&mut rng, t, ch, scale);
        let v = random_tensor(&mut rng, t, cv, 1.0);

        let got = attention(&q, &k, &v).unwrap();
        let w = attention_weights(&q, &k).unwrap();
        for i in 0..n {
            let mut logits = vec![0.0; t];
            for j in 0..t {
                let mut dot = 0.0;
                for d in 0..ch {
                    dot += q.values()[i * ch + d] * k.values()[j * ch + d];
                }
                logits[j] = dot / (ch as f64).sqrt();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..t {
                assert!((w.values()[i * t + j] - e[j] / z).abs() < 1e-9);
            }
            let row_sum: f64 = w.values()[i * t..(i + 1) * t].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-9);
            for d in 0..cv {
                let mut want = 0.0;
                for j in 0..t {
                    want += e[j] / z * v.values()[j * cv + d];
                }
                assert!((got.values()[i * cv + d] - want).abs() < 1e-9);
            }
        }
    }
    c.within(Duration::from_secs(10));
}

fn random_scene(rng: &mut ChaCha8Rng, m: usize, length: usize) -> SceneSpec {
    let objects = (0..m)
        .map(|i| {
            let x0 = rng.random_range(5.0..27.0);
            let y0 = rng.random_range(5.0..27.0);
            ObjectSpec {
                shape: if rng.random_bool(0.5) { Shape::Rect } else { Shape::Disk },
                path: vec![
                    PathKey { t: 0, x: x0, y: y0 },
                    PathKey {
                        t: length,
                        x: x0 + rng.random_range(-4.0..4.0),
                        y: y0 + rng.random_range(-4.0..4.0),
                    },
                ],
                size: vec![SizeKey {
                    t: 0,
                    w: rng.random_range(5.0..10.0),
                    h: rng.random_range(5.0..10.0),
                }],
                depth: i,
                visible: vec![],
                gray: rng.random_range(0.4..1.0),
            }
        })
        .collect();
    SceneSpec {
        width: 32,
        height: 32,
        length,
        seed: rng.random(),
        background: Default::default(),
        objects,
        distractors: vec![],
    }
}

#[test]
fn criterion_3_identity_equivariance() {
    let c = Criterion::start(3, "identity equivariance");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..20u64 {
        let m = 2 + (seed % 3) as usize;
        let scene = random_scene(&mut rng, m, 4);
        let frames = scene.generate().unwrap();
        let config = TrackerConfig {
            seed,
            ..Default::default()
        };
        let params = Arc::new(ModelParams::seeded(&config));
        let mut perm: Vec<u32> = (1..=m as u32).collect();
        while perm.iter().enumerate().all(|(i, &p)| p == i as u32 + 1) {
            perm.shuffle(&mut rng);
        }
        let bank = IdentityBank::seeded(m as u32, config.id_channels, seed);
        let annotation = &frames[0].gt;
        let (mut a, _) =
            Tracker::with_bank(config.clone(), params.clone(), bank.clone(), &frames[0].image, annotation).unwrap();
        let (mut b, _) = Tracker::with_bank(
            config.clone(),
            params.clone(),
            bank.permuted(&perm).unwrap(),
            &frames[0].image,
            &annotation.permute(&perm).unwrap(),
        )
        .unwrap();
        for f in &frames[1..] {
            let ra = a.predict(&f.image).unwrap();
            let rb = b.predict(&f.image).unwrap();
            assert_eq!(rb.labelmap, ra.labelmap.permute(&perm).unwrap(), "seed {seed}");
            for i in 0..m {
                assert_eq!(rb.masks[perm[i] as usize - 1], ra.masks[i]);
            }
        }
    }
    c.within(Duration::from_secs(60));
}

#[test]
fn criterion_4_cascade_contract() {
    let c = Criterion::start(4, "cascade contract");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (w, h) in [(32, 32), (64, 48), (50, 37), (17, 33)] {
        let mut scene = random_scene(&mut rng, 2, 3);
        scene.width = w;
        scene.height = h;
        let frames = scene.generate().unwrap();
        let config = TrackerConfig::default();
        let params = Arc::new(ModelParams::seeded(&config));
        let (mut tracker, _) = Tracker::new(config.clone(), params.clone(), &frames[0].image, &frames[0].gt).unwrap();
        for f in &frames[1..] {
            let view = tracker.memory().gather().unwrap();
            let pyramid = encode_frame(&f.image, &params).unwrap();
            let (prop, trace) = propagate(&pyramid, &view, &params.gpm).unwrap();
            assert_eq!(trace.gpm_calls, [3, 1, 0]);
            for s in [16usize, 8, 4] {
                let dims = [h.div_ceil(s), w.div_ceil(s)];
                assert_eq!(pyramid.level(s).shape(), &[dims[0], dims[1], config.vis_channels]);
                assert_eq!(prop.level(s).vis.shape(), &[dims[0], dims[1], config.vis_channels]);
                assert_eq!(prop.level(s).id.shape(), &[dims[0], dims[1], config.id_channels]);
            }
            let r = tracker.predict(&f.image).unwrap();
            let trace = tracker.last_trace();
            assert_eq!((trace.calls_at(16), trace.calls_at(8), trace.calls_at(4)), (3, 1, 0));
            assert_eq!((r.labelmap.width(), r.labelmap.height()), (w, h));
        }
    }
    c.within(Duration::from_secs(30));
}

#[test]
fn criterion_5_memory_schedule() {
    let c = Criterion::start(5, "memory schedule");
    let (gap, cap) = (50, 8);
    let mut bank = MemoryBank::new(cap);
    bank.initialize(0usize);
    for t in 1..10_000 {
        if should_store(t, gap) {
            bank.store(t).unwrap();
        }
        bank.update_short_term(t);
        assert!(bank.long_term_len() <= cap);
        assert_eq!(bank.initial(), Some(&0));
        if t == 450 {
            let mut want = vec![0];
            want.extend((100..=450).step_by(50));
            assert_eq!(bank.frame_indices().unwrap(), want);
        }
    }

    // unrelated fields leave the schedule alone
    let base = TrackerConfig {
        memory_gap: 3,
        long_term_capacity: 2,
        ..Default::default()
    };
    let variants = [
        TrackerConfig { tau: 0.7, ..base.clone() },
        TrackerConfig { seed: 99, ..base.clone() },
        TrackerConfig {
            vis_channels: 8,
            id_channels: 4,
            ..base.clone()
        },
        TrackerConfig {
            gpm_layers_16: 1,
            gpm_layers_8: 2,
            ..base.clone()
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = random_scene(&mut rng, 2, 14).generate().unwrap();
    let schedule = |cfg: &TrackerConfig| {
        let params = Arc::new(ModelParams::seeded(cfg));
        let (mut tr, _) = Tracker::new(cfg.clone(), params, &frames[0].image, &frames[0].gt).unwrap();
        frames[1..]
            .iter()
            .map(|f| {
                tr.predict(&f.image).unwrap();
                tr.memory().frame_indices().unwrap()
            })
            .collect::<Vec<_>>()
    };
    let reference = schedule(&base);
    assert_eq!(reference.last().unwrap(), &vec![0, 9, 12, 13]);
    for v in &variants {
        assert_eq!(schedule(v), reference);
    }

    let dir = tempfile::tempdir().unwrap();
    let seq = write_scene(&preset("reappear").unwrap(), dir.path()).unwrap();
    let logs: Vec<_> = std::iter::once(&base)
        .chain(&variants)
        .map(|cfg| {
            let opts = TrackOptions::oracle(cfg.clone(), OracleNoise::default());
            pipeline::track(&seq, &opts).unwrap().1.memory
        })
        .collect();
    assert!(logs.iter().all(|l| *l == logs[0]));
    assert_eq!(logs[0].stores, 19);
    c.within(Duration::from_secs(5));
}

fn refined_cells(report: &trackforge::io::report::RunReport) -> Vec<(usize, u32)> {
    report
        .decisions
        .iter()
        .filter(|d| d.source == trackforge::io::report::Source::Refined)
        .map(|d| (d.frame, d.object))
        .collect()
}

#[test]
fn criterion_6_selector() {
    let c = Criterion::start(6, "selector soundness and ordering");
    let dir = tempfile::tempdir().unwrap();

    // (a) closed gate equals no refinement
    let mut short = preset("occlusion").unwrap();
    short.length = 10;
    let vseq = write_scene(&short, dir.path().join("short")).unwrap();
    let vmos = TrackOptions::vmos(TrackerConfig::default());
    let (plain, _) = pipeline::track(&vseq, &vmos).unwrap();
    for k in [
        RefinerKind::Noise { flip_prob: 0.3, seed: 1 },
        RefinerKind::Dilate { radius: 2 },
        RefinerKind::OracleSnap {
            improve_above: 0.3,
            degrade_below: 0.3,
            seed: 5,
        },
    ] {
        let opts = vmos.clone().with_refinement(k, SelectionMode::Gated { tau: 1.0 });
        assert_eq!(pipeline::track(&vseq, &opts).unwrap().0, plain, "{k}");
    }

    // (b) the gate is monotone in tau
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..500 {
        let n = rng.random_range(1..40);
        let p = rng.random::<f64>();
        let a = Bitmask::from_bits(n, 1, (0..n).map(|_| rng.random_bool(p)).collect()).unwrap();
        let b = Bitmask::from_bits(n, 1, (0..n).map(|_| rng.random_bool(p)).collect()).unwrap();
        let mut taus: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        taus.sort_by(f64::total_cmp);
        let chosen: Vec<MaskSource> = taus.iter().map(|&t| select(1, &a, &b, t).unwrap().1.chosen).collect();
        let first_vmos = chosen.iter().position(|&s| s == MaskSource::Vmos).unwrap_or(chosen.len());
        assert!(chosen[first_vmos..].iter().all(|&s| s == MaskSource::Vmos));
    }

    let seq = write_scene(&preset("occlusion").unwrap(), dir.path().join("occ")).unwrap();
    let base = TrackOptions::oracle(
        TrackerConfig::default(),
        OracleNoise {
            erosion: 1,
            miss_prob: 0.0,
            seed: 7,
        },
    );
    let snap = RefinerKind::OracleSnap {
        improve_above: 0.3,
        degrade_below: 0.3,
        seed: 5,
    };
    let taus = [0.0, 0.1, 0.3, 0.6, 1.0];
    let cells: Vec<_> = taus
        .iter()
        .map(|&tau| {
            let opts = base.clone().with_refinement(snap, SelectionMode::Gated { tau });
            refined_cells(&pipeline::track(&seq, &opts).unwrap().1)
        })
        .collect();
    for w in cells.windows(2) {
        assert!(w[1].iter().all(|cell| w[0].contains(cell)));
    }
    assert!(cells[4].is_empty());

    // (c) gating beats refining everything under a degrading refiner
    let rows = pipeline::ablate_tau(&seq, &base, snap, &[0.1], true).unwrap();
    let (gated, all) = (rows[0].metrics.quality, rows[1].metrics.quality);
    let _ = writeln!(std::io::stderr(), "    Q gated(tau=0.1) = {gated:.4}, Q refine-all = {all:.4}");
    assert!(all >= 0.0);
    assert!(gated - all >= 0.01, "gated {gated} vs refine-all {all}");
    c.within(Duration::from_secs(60));
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn random_mask(rng: &mut ChaCha8Rng) -> Bitmask {
    let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
    let p = [0.0, 0.05, 0.5, 0.95, 1.0][rng.random_range(0..5)];
    Bitmask::from_bits(w, h, (0..w * h).map(|_| rng.random_bool(p)).collect()).unwrap()
}

fn random_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => -0.0,
        1 => f64::MIN_POSITIVE / 8.0,
        2 => f64::MAX,
        3 => -f64::MAX,
        _ => f64::from_bits(rng.random::<u64>() & !(0x7ff << 52)) * rng.random_range(-1e6..1e6),
    }
}

#[test]
fn criterion_7_determinism_and_formats() {
    let c = Criterion::start(7, "determinism and formats");
    let dir = tempfile::tempdir().unwrap();
    let mut spec = preset("occlusion").unwrap();
    spec.length = 12;
    let opts = TrackOptions::vmos(TrackerConfig::default())
        .with_refinement(RefinerKind::Noise { flip_prob: 0.1, seed: 3 }, SelectionMode::Gated { tau: 0.5 });
    let runs: Vec<PathBuf> = (0..2)
        .map(|i| {
            let root = dir.path().join(format!("run{i}"));
            let seq = write_scene(&spec, root.join("seq")).unwrap();
            let report = pipeline::track_to_dir(&seq, &opts, &root.join("out")).unwrap();
            let timeless = report.without_timing().to_json().unwrap();
            std::fs::write(root.join("report_timeless.json"), timeless).unwrap();
            std::fs::remove_file(root.join("out/report.json")).unwrap();
            root
        })
        .collect();
    let files = files_under(&runs[0]);
    assert_eq!(files, files_under(&runs[1]));
    assert!(files.len() > 2 * spec.length);
    for f in &files {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap(), "{f:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let m = random_mask(&mut rng);
        let line = m.to_rle().to_string();
        let back: RleMask = line.parse().unwrap();
        assert_eq!(back.to_string(), line);
        assert_eq!(back.decode().unwrap(), m);
        let file = rle::encode(std::slice::from_ref(&m));
        assert_eq!(rle::encode(&rle::decode(&file, Some(1)).unwrap()), file);
    }
    for _ in 0..1000 {
        let count = rng.random_range(1..5);
        let tensors: Vec<(String, Tensor)> = (0..count)
            .map(|i| {
                let shape: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..5)).collect();
                let n: usize = shape.iter().product();
                let values = (0..n).map(|_| random_f64(&mut rng)).collect();
                (format!("t{i}.w"), Tensor::new(shape, values).unwrap())
            })
            .collect();
        let bytes = weights::encode(tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let back = weights::decode(&bytes).unwrap();
        assert_eq!(back.len(), tensors.len());
        for ((n0, t0), (n1, t1)) in tensors.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            assert!(t0.values().iter().zip(t1.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(weights::encode(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap(), bytes);
    }
    c.within(Duration::from_secs(60));
}

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_trackforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn metric(json: &serde_json::Value, key: &str) -> f64 {
    json[key].as_f64().unwrap()
}

#[test]
fn criterion_8_end_to_end() {
    let c = Criterion::start(8, "end-to-end sanity");
    let dir = tempfile::tempdir().unwrap();
    for name in ["reappear", "occlusion"] {
        let seq = dir.path().join(name);
        let seq_s = seq.to_str().unwrap();
        cli(&["synth", name, seq_s]);

        let clean = seq.join("clean");
        cli(&["track", seq_s, "--predictor", "oracle", "--oracle", "--out", clean.to_str().unwrap()]);
        let out = cli(&["eval", clean.to_str().unwrap(), seq_s]);
        let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        for key in ["auc", "accuracy", "robustness", "adq", "quality"] {
            assert_eq!(metric(&m, key), 1.0, "{name} {key}");
        }
        assert_eq!((metric(&m, "nre"), metric(&m, "dre")), (0.0, 0.0));

        let missed = seq.join("missed");
        cli(&[
            "track", seq_s, "--predictor", "oracle", "--oracle", "--miss-prob", "1", "--out",
            missed.to_str().unwrap(),
        ]);
        let out = cli(&["eval", missed.to_str().unwrap(), seq_s]);
        let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let absent: u64 = m["per_object"]
            .as_array()
            .unwrap()
            .iter()
            .map(|o| o["counts"]["absent"].as_u64().unwrap())
            .sum();
        assert!(absent > 0, "{name} has no absence interval");
        assert_eq!(metric(&m, "nre"), 1.0, "{name}");
        assert_eq!(metric(&m, "adq"), 1.0, "{name}");
        assert!(SequenceDir::open(&seq).unwrap().has_full_gt());
    }
    c.within(Duration::from_secs(30));
}
