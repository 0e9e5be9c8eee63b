//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release -p crossview-cli --test acceptance` runs all nine;
//! pass criterion numbers (`-- 1 3`) to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crossview::baselines::interpolation_baseline;
use crossview::datapipe::{generate, Dataset, GenConfig, SampleRecord, Split};
use crossview::dit::{Conditioning, ConditionDropout, Dit, DitConfig, ModelCheckpoint};
use crossview::flowmatch::{initial_noise, sample_tokens, train, FlowError, SampleConfig, TrainConfig, TrainSample, VelocityField};
use crossview::geometry::{make_camera_path, render_pair, Box2D, BoxSequence, PathKind, Scene, SceneParams};
use crossview::gradcheck::{check_dit, check_op_f32, check_op_f64, op_cases};
use crossview::metrics::{iou, map50, mean_iou, tube_iou};
use crossview::signal::{dct_decode, dct_encode};
use crossview_cli::commands::train_samples;
use crossview_cli::evaluate::{evaluate_method, EvalMethod, EvalOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scenes in the desk dataset; about 2.3k training pairs after filtering.
const DESK_SCENES: usize = 300;
const DESK_STEPS: usize = 3000;
const DESK_LR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk_data() -> GenConfig {
    GenConfig {
        n_scenes: DESK_SCENES,
        grid: 8,
        seed: 0,
        eval_fraction: 0.045,
        val_fraction: 0.02,
        ..GenConfig::default()
    }
}

fn desk_model(data: &GenConfig) -> DitConfig {
    DitConfig {
        frames: data.frames,
        grid: data.grid,
        dct_order: data.dct_order,
        ..DitConfig::desk()
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        steps: DESK_STEPS,
        lr: DESK_LR,
        seed: 0,
        eval_every: 0,
        ..TrainConfig::default()
    }
}

struct Context {
    dataset: Option<Dataset>,
    model: Option<(Dit<f32>, Duration)>,
}

impl Context {
    fn dataset(&mut self) -> &Dataset {
        self.dataset
            .get_or_insert_with(|| generate(&desk_data()).expect("desk dataset generates"))
    }

    fn eval_records(&mut self) -> Vec<SampleRecord> {
        self.dataset().split(Split::Eval).cloned().collect()
    }

    fn trained(&mut self) -> (Dit<f32>, Duration) {
        if self.model.is_none() {
            let ds = self.dataset().clone();
            let cfg = desk_model(&ds.manifest.generation);
            let data = train_samples(&ds.records, Split::Train, cfg.direction);
            let start = Instant::now();
            let (ckpt, curve) = train(Dit::<f32>::new(cfg, 0).unwrap(), &data, &[], &desk_train(), |p| {
                if p.step % 500 == 0 {
                    eprintln!("  [train] step {} loss {:.4}", p.step, p.loss);
                }
            })
            .expect("desk training runs");
            eprintln!(
                "  [train] {} samples, {} steps, final smoothed loss {:.4}",
                data.len(),
                DESK_STEPS,
                curve.smoothed(100).last().copied().unwrap_or(f64::NAN)
            );
            self.model = Some((ckpt.model, start.elapsed()));
        }
        self.model.clone().unwrap()
    }
}

fn opts() -> EvalOptions {
    EvalOptions::default()
}

/// Zero-noise corner warp on 100 eval pairs.
fn geometry_oracle(ctx: &mut Context) -> Outcome {
    let mut records = ctx.eval_records();
    if records.len() < 100 {
        return outcome(false, format!("only {} eval pairs", records.len()));
    }
    records.truncate(100);
    let start = Instant::now();
    let report = evaluate_method(&records, EvalMethod::WarpCorners, None, &opts()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        report.mean_iou >= 0.95 && secs < 10.0,
        format!("mean IoU {:.4} (need >= 0.95) on 100 pairs in {secs:.2} s (need < 10 s)", report.mean_iou),
    )
}

/// Desk-trained model against interpolation on the eval split.
fn model_beats_interpolation(ctx: &mut Context) -> Outcome {
    let train_count = ctx.dataset().manifest.counts.train;
    let records = ctx.eval_records();
    let (model, train_time) = ctx.trained();
    let start = Instant::now();
    let m = evaluate_method(&records, EvalMethod::Model, Some(&model), &opts()).unwrap();
    let total = train_time + start.elapsed();
    let i = evaluate_method(&records, EvalMethod::Interpolation, None, &opts()).unwrap();
    let pass = m.mean_iou >= i.mean_iou + 0.05
        && m.map50 >= i.map50 + 0.05
        && train_count >= 2000
        && total.as_secs() <= 3600;
    outcome(
        pass,
        format!(
            "IoU {:.4} vs {:.4}, mAP {:.4} vs {:.4} (need +0.05 each); {} train pairs, {} steps, {:.1} min",
            m.mean_iou,
            i.mean_iou,
            m.map50,
            i.map50,
            train_count,
            DESK_STEPS,
            total.as_secs_f64() / 60.0
        ),
    )
}

/// noisy-high < noisy-low < clean warp in mAP@0.5.
fn noise_ordering(ctx: &mut Context) -> Outcome {
    let records = ctx.eval_records();
    let score = |m| evaluate_method(&records, m, None, &opts()).unwrap().map50;
    let (high, low, clean) = (
        score(EvalMethod::NoisyHigh),
        score(EvalMethod::NoisyLow),
        score(EvalMethod::WarpCorners),
    );
    outcome(
        low - high >= 0.02 && clean - low >= 0.02,
        format!("mAP noisy-high {high:.4} < noisy-low {low:.4} < clean {clean:.4} (gaps >= 0.02)"),
    )
}

/// Dropping the trajectory stream hurts on camera-moving samples.
fn trajectory_ablation(ctx: &mut Context) -> Outcome {
    let records: Vec<_> = ctx.eval_records().into_iter().filter(|r| !r.is_static_camera()).collect();
    let (model, _) = ctx.trained();
    let full = evaluate_method(&records, EvalMethod::Model, Some(&model), &opts()).unwrap();
    let ablated = evaluate_method(&records, EvalMethod::ModelNoTrajectories, Some(&model), &opts()).unwrap();
    outcome(
        full.mean_iou - ablated.mean_iou >= 0.05,
        format!(
            "IoU {:.4} full vs {:.4} without trajectories on {} moving-camera pairs (need drop >= 0.05)",
            full.mean_iou,
            ablated.mean_iou,
            records.len()
        ),
    )
}

/// Finite-difference gradients of every op and the tiny DiT over 10 seeds.
fn autodiff(_: &mut Context) -> Outcome {
    let mut worst64 = 0.0f64;
    let mut worst32 = 0.0f64;
    let cases = op_cases();
    for seed in 0..10 {
        for case in &cases {
            worst64 = worst64.max(check_op_f64(case, seed));
            worst32 = worst32.max(check_op_f32(case, seed));
        }
        worst64 = worst64.max(check_dit::<f64>(seed, 3));
        worst32 = worst32.max(check_dit::<f32>(seed, 3));
    }
    outcome(
        worst64 < 1e-6 && worst32 < 1e-4,
        format!(
            "{} ops + tiny DiT, 10 seeds: worst rel err {worst64:.2e} at 64-bit (need < 1e-6), {worst32:.2e} at 32-bit (need < 1e-4)",
            cases.len()
        ),
    )
}

/// DCT roundtrip, Parseval truncation and basis orthonormality.
fn dct_properties(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut roundtrip = 0.0f64;
    let mut parseval = 0.0f64;
    let mut ortho = 0.0f64;
    for len in 1..=128usize {
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = dct_encode(&x, len).unwrap();
        let back = dct_decode(&c, len).unwrap();
        roundtrip = roundtrip.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        for k in 1..=len {
            let trunc = dct_decode(&dct_encode(&x, k).unwrap(), len).unwrap();
            let mse = x.iter().zip(&trunc).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / len as f64;
            let dropped = c[k..].iter().map(|v| v * v).sum::<f64>() / len as f64;
            parseval = parseval.max((mse - dropped).abs());
        }
        // decoding unit coefficient vectors gives the basis; its Gram matrix is I
        let basis: Vec<Vec<f64>> = (0..len)
            .map(|k| {
                let mut e = vec![0.0; len];
                e[k] = 1.0;
                dct_decode(&e, len).unwrap()
            })
            .collect();
        for i in 0..len {
            for j in 0..len {
                let dot: f64 = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                ortho = ortho.max((dot - want).abs());
            }
        }
    }
    outcome(
        roundtrip < 1e-9 && parseval < 1e-9 && ortho < 1e-9,
        format!(
            "T = 1..128: roundtrip {roundtrip:.1e}, Parseval gap {parseval:.1e}, orthonormality {ortho:.1e} (each < 1e-9)"
        ),
    )
}

/// Field pointing straight from each item's initial draw to a fixed target.
struct ConstantField {
    frames: usize,
    target: Vec<f64>,
    seed: u64,
}

impl VelocityField for ConstantField {
    fn frames(&self) -> usize {
        self.frames
    }

    fn velocity(&self, x_t: &[f64], _: &[f64], _: &[Conditioning]) -> Result<Vec<f64>, FlowError> {
        let per = self.frames * 4;
        Ok((0..x_t.len() / per)
            .flat_map(|i| {
                let z = initial_noise(self.frames, self.seed + i as u64);
                self.target.iter().zip(z).map(|(a, b)| a - b).collect::<Vec<_>>()
            })
            .collect())
    }
}

/// Single-sample memorization and exact one-step Euler on a constant field.
fn flow_matching(_: &mut Context) -> Outcome {
    let c = DitConfig {
        layers: 2,
        model_dim: 32,
        heads: 2,
        mlp_ratio: 2,
        frames: 24,
        grid: 2,
        dct_order: 3,
        context_size: 4,
        context_patch: 2,
        ..DitConfig::default()
    };
    let x1: Vec<f64> = (0..c.frames)
        .flat_map(|f| {
            let s = f as f64 / (c.frames - 1) as f64;
            [0.3 + 0.4 * s, 0.5 - 0.1 * s, 0.2 + 0.05 * s, 0.3]
        })
        .collect();
    let cond = Conditioning {
        reference: Some((0..c.frames * 4).map(|i| 0.3 + 0.01 * (i % 7) as f64).collect()),
        trajectories: Some(vec![0.1; c.trajectory_tokens() * c.trajectory_features()]),
        context: Some(vec![0.2; c.context_size * c.context_size]),
    };
    let data = [TrainSample {
        id: "only".into(),
        x1: x1.clone(),
        cond: cond.clone(),
    }];
    let cfg = TrainConfig {
        steps: 2000,
        lr: 2e-3,
        weight_decay: 0.0,
        batch_size: 16,
        seed: 0,
        eval_every: 0,
        dropout: ConditionDropout {
            trajectories: 0.0,
            context: 0.0,
            reference: 0.0,
        },
        ..TrainConfig::default()
    };
    let (ck, curve) = train(Dit::<f32>::new(c.clone(), 0).unwrap(), &data, &[], &cfg, |_| {}).unwrap();
    let loss = *curve.smoothed(100).last().unwrap();
    let pred = sample_tokens(&ck.model, &[cond], &SampleConfig::default()).unwrap();
    let l1 = pred.iter().zip(&x1).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64;

    let field = ConstantField {
        frames: 5,
        target: (0..20).map(|i| 0.1 * i as f64 - 0.7).collect(),
        seed: 3,
    };
    let one = SampleConfig {
        num_steps: 1,
        seed: 3,
        clamp_output: false,
    };
    let out = sample_tokens(&field, &[Conditioning::default()], &one).unwrap();
    let euler = out.iter().zip(&field.target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        loss < 0.05 && l1 < 0.05 && euler < 1e-9,
        format!(
            "2000-step loss {loss:.4} (< 0.05), 28-step sample L1 {l1:.4} (< 0.05), one-step Euler error {euler:.1e} (< 1e-9)"
        ),
    )
}

/// Metric examples plus static-camera pairs under interpolation.
fn metric_suite(_: &mut Context) -> Outcome {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let a = Box2D::from_corners(0.0, 0.0, 2.0, 2.0);
    let b = Box2D::from_corners(1.0, 0.0, 3.0, 2.0);
    check((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15, "corner boxes give 1/3");
    check(iou(&a, &a) == 1.0, "identical boxes give 1");
    let far = Box2D::from_corners(5.0, 5.0, 6.0, 6.0);
    check(iou(&a, &far) == 0.0, "disjoint boxes give 0");

    let gt: BoxSequence = (0..8).map(|i| Box2D::new(0.1 * i as f64, 0.5, 0.2, 0.2)).collect();
    let alternating: BoxSequence = gt
        .iter()
        .enumerate()
        .map(|(i, g)| if i % 2 == 0 { *g } else { Box2D::new(g.cx + 5.0, g.cy, g.w, g.h) })
        .collect();
    check(map50(&gt, &gt).unwrap() == 1.0, "map50 of gt is 1");
    check(map50(&alternating, &gt).unwrap() == 0.5, "alternating hits give 0.5");

    let third: BoxSequence = std::iter::repeat_n(b, 4).collect();
    let base: BoxSequence = std::iter::repeat_n(a, 4).collect();
    check((tube_iou(&third, &base).unwrap() - 1.0 / 3.0).abs() < 1e-15, "constant 1/3 tube");
    // one exact frame and one disjoint frame with equal unions
    let p2 = BoxSequence::new(vec![a, Box2D::from_corners(10.0, 0.0, 12.0, 1.0)]);
    let g2 = BoxSequence::new(vec![a, Box2D::from_corners(0.0, 0.0, 1.0, 2.0)]);
    check((tube_iou(&p2, &g2).unwrap() - 0.5).abs() < 1e-15, "exact + disjoint frame gives 0.5");

    // tube IoU lies between the extreme per-frame IoUs, and map50 never drops
    // when a frame is corrected, on random sequences
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rbox = |rng: &mut ChaCha8Rng| {
        Box2D::new(
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.05..0.5),
            rng.random_range(0.05..0.5),
        )
    };
    for _ in 0..500 {
        let n = rng.random_range(1..12);
        let p: BoxSequence = (0..n).map(|_| rbox(&mut rng)).collect();
        let g: BoxSequence = (0..n).map(|_| rbox(&mut rng)).collect();
        let per: Vec<f64> = p.iter().zip(g.iter()).map(|(x, y)| iou(x, y)).collect();
        let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let t = tube_iou(&p, &g).unwrap();
        check(t >= lo - 1e-12 && t <= hi + 1e-12, "tube IoU within per-frame bounds");
        let k = rng.random_range(0..n);
        let mut fixed = p.clone();
        fixed.boxes[k] = g[k];
        check(map50(&fixed, &g).unwrap() >= map50(&p, &g).unwrap(), "map50 monotone under correction");
    }

    let mut statics = 0;
    let mut worst = 1.0f64;
    for seed in 0..40u64 {
        let scene = Scene::generate(seed, 24, &SceneParams::default());
        let path = make_camera_path(PathKind::Static, 24, 1.0, seed).unwrap();
        let Ok(pair) = render_pair(&scene, &path, 4) else { continue };
        statics += 1;
        worst = worst.min(mean_iou(&interpolation_baseline(&pair.b_ref), &pair.b_tgt).unwrap());
    }
    if statics == 0 || worst != 1.0 {
        failures.push(format!("static-camera pairs: {statics} rendered, worst IoU {worst}"));
    }
    failures.dedup();
    let pass = failures.is_empty();
    let detail = if pass {
        format!("metric examples and properties hold; {statics} static-camera pairs all at IoU 1.0")
    } else {
        format!("failed: {}", failures.join("; "))
    };
    outcome(pass, detail)
}

fn run_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crossview"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<bool, String> {
    for n in names {
        let x = std::fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(n)).map_err(|e| e.to_string())?;
        if x != y {
            return Ok(false);
        }
    }
    Ok(true)
}

/// gen-data, train and transform twice each through the binary.
fn determinism(_: &mut Context) -> Outcome {
    let run = || -> Result<(bool, bool, bool), String> {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let dirs = [root.path().join("a"), root.path().join("b")];
        for d in &dirs {
            let data = d.join("data");
            let data = data.to_str().unwrap();
            run_bin(&[
                "gen-data", "--out", data, "--scenes", "40", "--paths-per-scene", "4", "--grid", "6", "--seed", "7",
                "--eval-fraction", "0.1",
            ])?;
            let ckpt = d.join("model.ckpt");
            run_bin(&[
                "train", "--data", data, "--out", ckpt.to_str().unwrap(), "--steps", "40", "--batch-size", "8",
                "--seed", "3", "--eval-every", "20", "--eval-samples", "4", "--log-every", "0",
            ])?;
            let eval = std::fs::read_to_string(d.join("data/eval.jsonl")).map_err(|e| e.to_string())?;
            let first: serde_json::Value =
                serde_json::from_str(eval.lines().next().ok_or("empty eval split")?).map_err(|e| e.to_string())?;
            run_bin(&[
                "transform", "--data", data, "--checkpoint", ckpt.to_str().unwrap(), "--record",
                first["id"].as_str().unwrap(), "--method", "model", "--seed", "11", "--out",
                d.join("transform.json").to_str().unwrap(),
            ])?;
        }
        let gen = same_files(
            &dirs[0].join("data"),
            &dirs[1].join("data"),
            &["manifest.json", "train.jsonl", "val.jsonl", "eval.jsonl"],
        )?;
        let trained = same_files(&dirs[0], &dirs[1], &["model.ckpt", "model.loss.csv"])?;
        let transformed = same_files(&dirs[0], &dirs[1], &["transform.json"])?;
        ModelCheckpoint::load(dirs[0].join("model.ckpt")).map_err(|e| e.to_string())?;
        Ok((gen, trained, transformed))
    };
    match run() {
        Ok((g, t, x)) => outcome(
            g && t && x,
            format!("byte-identical reruns: gen-data {g}, train {t}, transform {x}"),
        ),
        Err(e) => outcome(false, e),
    }
}

type Criterion = (usize, &'static str, fn(&mut Context) -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "geometry oracle consistency", geometry_oracle),
        (2, "model beats interpolation", model_beats_interpolation),
        (3, "noise-degradation ordering", noise_ordering),
        (4, "trajectory ablation", trajectory_ablation),
        (5, "autodiff correctness", autodiff),
        (6, "DCT properties", dct_properties),
        (7, "flow-matching sanity", flow_matching),
        (8, "metric unit suite", metric_suite),
        (9, "determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Context {
        dataset: None,
        model: None,
    };
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = f(&mut ctx);
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {n} ({name}): {} | {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
