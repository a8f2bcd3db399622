//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p d2s-core --test acceptance`, or pass
//! criterion numbers to run a subset: `... --test acceptance -- 2 4`.
//! Criteria 5 and 7 train nine models twice and dominate the runtime; the
//! runs are spread over all available cores.
//!
//! The exit status is zero unless `ACCEPTANCE_STRICT` is set, in which case
//! any FAIL line makes it nonzero.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use common::{brute_force_counts, naive_conv, random_conv_case, random_mask};
use d2s_core::data::{generate_road_scene, load_split, make_dataset, JitterRanges, Sample, Split};
use d2s_core::gradcheck::{run_suite, Fault, GRAD_TOL};
use d2s_core::metrics::{confusion_counts, ConfusionCounts, EvalReport};
use d2s_core::model::{build, Phase};
use d2s_core::nn::{conv2d_forward, depth_to_space, space_to_depth};
use d2s_core::profiler::{compare_models, count_macs};
use d2s_core::train::{train_on_samples, TrainConfig, TrainHistory};
use d2s_core::{ModelConfig, ModelGraph, ModelKind, Rng, Shape, Tensor};

const DATA_SEED: u64 = 2024;
const TRAIN_SEEDS: [u64; 3] = [1, 2, 3];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let report = match run_suite(0, Fault::None) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("suite error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    for op in &report.ops {
        println!("    {} cases {} max_rel_err {:.3e}", op.name, op.cases, op.max_rel_err);
    }
    let min_cases = report.ops.iter().map(|o| o.cases).min().unwrap_or(0);
    verdict(
        report.passed() && min_cases >= 20 && secs < 120.0,
        format!(
            "max rel err {:.3e} (tol {GRAD_TOL:.0e}), min cases {min_cases}, {secs:.1}s (limit 120s)",
            report.max_rel_err()
        ),
    )
}

fn d2s_mechanism() -> Verdict {
    let mut rng = Rng::new(7);
    let mut failures = 0;
    for case in 0..1000 {
        let r = [1, 2, 4, 8][case % 4];
        let [n, c, h, w] = [
            rng.int_inclusive(1, 2),
            rng.int_inclusive(1, 3),
            rng.int_inclusive(1, 4),
            rng.int_inclusive(1, 4),
        ];
        let len = n * c * r * r * h * w;
        let x = Tensor::<f32>::from_vec([n, c * r * r, h, w], (0..len).map(|_| rng.normal() as f32).collect()).unwrap();
        let y = depth_to_space(&x, r).unwrap();
        let back = space_to_depth(&y, r).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let (mut a, mut b) = (bits(&x), bits(&y));
        let exact = bits(&back) == a;
        a.sort_unstable();
        b.sort_unstable();
        if !exact || a != b || y.shape() != Shape([n, c, h * r, w * r]) {
            failures += 1;
        }
    }
    let mut x = Tensor::<f32>::zeros([1, 8, 2, 2]).unwrap();
    x.set(0, 3, 0, 0, 5.0);
    let y = depth_to_space(&x, 2).unwrap();
    let example = y.shape() == Shape([1, 2, 4, 4]) && y.get(0, 0, 1, 1) == 5.0 && y.sum() == 5.0;
    verdict(
        failures == 0 && example,
        format!(
            "{failures}/1000 round-trip failures, index example {}",
            if example { "holds" } else { "broken" }
        ),
    )
}

fn conv_oracle() -> Verdict {
    let mut rng = Rng::new(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (x, p) = random_conv_case(&mut rng);
        let fast = conv2d_forward(&x, &p).unwrap();
        let slow = naive_conv(&x, &p);
        for (a, b) in fast.data().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        worst <= 1e-6,
        format!("max abs diff {worst:.2e} over 50 configs (tol 1e-6)"),
    )
}

fn compute_claims() -> Verdict {
    let start = Instant::now();
    let input = Shape([1, 3, 64, 64]);
    let vgg: ModelGraph = build(&ModelConfig::new(ModelKind::VggD2s)).unwrap();
    let res: ModelGraph = build(&ModelConfig::new(ModelKind::ResnetD2s)).unwrap();
    let seg: ModelGraph = build(&ModelConfig::new(ModelKind::Segnet)).unwrap();
    let cmp = compare_models(&vgg, &seg, input).unwrap();
    let seg_enc = cmp.b.phase_macs(Phase::Encoder);
    let seg_dec = cmp.b.phase_macs(Phase::Decoder);
    let dec_ratio = seg_dec as f64 / seg_enc as f64;
    let res_cost = count_macs(&res, input).unwrap();
    let head_share = |r: &d2s_core::profiler::CostReport| r.phase_macs(Phase::Head) as f64 / r.total_macs as f64;
    let (vgg_head, res_head) = (head_share(&cmp.a), head_share(&res_cost));
    let secs = start.elapsed().as_secs_f64();
    print!(
        "{}",
        cmp.to_lines().lines().map(|l| format!("    {l}\n")).collect::<String>()
    );
    let pass =
        (0.9..=1.1).contains(&dec_ratio) && cmp.ratio <= 0.55 && vgg_head <= 0.02 && res_head <= 0.02 && secs < 1.0;
    verdict(
        pass,
        format!(
            "segnet dec/enc {dec_ratio:.4} ({seg_dec}/{seg_enc}); vgg_d2s/segnet {:.4}; head share vgg {:.4} resnet {:.4}; {secs:.3}s",
            cmp.ratio, vgg_head, res_head
        ),
    )
}

/// Every file under `dir` with its bytes, keyed by relative name.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

struct Run {
    kind: ModelKind,
    seed: u64,
    history: TrainHistory,
    secs: f64,
}

/// Trains every (model, seed) pair `repeats` times on a worker pool.
fn train_grid(train: &[Sample], val: &[Sample], repeats: usize, workers: usize, out: &Path) -> Vec<Run> {
    let jobs: Vec<(ModelKind, u64, usize)> = (0..repeats)
        .flat_map(|rep| {
            ModelKind::ALL
                .into_iter()
                .flat_map(move |k| TRAIN_SEEDS.into_iter().map(move |s| (k, s, rep)))
        })
        .collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    println!("    {} training runs on {workers} worker thread(s)", jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(kind, seed, rep)) = jobs.get(i) else { break };
                let cfg = TrainConfig {
                    seed,
                    epochs: 30,
                    warmup_epochs: 5,
                    ..TrainConfig::new(kind)
                };
                let start = Instant::now();
                let outcome = train_on_samples(&cfg, train, val, |_| {}).expect("training run");
                let secs = start.elapsed().as_secs_f64();
                let name = format!("{}_seed{seed}_run{rep}.history", kind.name());
                fs::write(out.join(&name), outcome.history.to_text()).unwrap();
                let final_iou = outcome.history.final_iou().unwrap_or(0.0);
                println!(
                    "    {name}: final val iou {final_iou:.4}, best {:.4}, {secs:.0}s",
                    outcome.best_iou
                );
                results.lock().unwrap().push((
                    rep,
                    Run {
                        kind,
                        seed,
                        history: outcome.history,
                        secs,
                    },
                ));
            });
        }
    });
    let mut runs = results.into_inner().unwrap();
    runs.sort_by_key(|(rep, r)| (*rep, r.kind.name(), r.seed));
    runs.into_iter().map(|(_, r)| r).collect()
}

struct TrainingEvidence {
    first: Vec<Run>,
    second: Vec<Run>,
    data_identical: bool,
    wall_secs: f64,
    workers: usize,
}

fn run_training() -> TrainingEvidence {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("data_a"), dir.path().join("data_b"));
    let manifest = make_dataset(500, 100, 64, DATA_SEED, &a).unwrap();
    make_dataset(500, 100, 64, DATA_SEED, &b).unwrap();
    let data_identical = tree(&a) == tree(&b);
    let train = load_split(&manifest, Split::Train).unwrap();
    let val = load_split(&manifest, Split::Val).unwrap();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let mut runs = train_grid(&train, &val, 2, workers, dir.path());
    let wall_secs = start.elapsed().as_secs_f64();
    let second = runs.split_off(runs.len() / 2);
    TrainingEvidence {
        first: runs,
        second,
        data_identical,
        wall_secs,
        workers,
    }
}

fn table_analog(ev: &TrainingEvidence) -> Verdict {
    let iou = |kind: ModelKind, seed: u64| {
        ev.first
            .iter()
            .find(|r| r.kind == kind && r.seed == seed)
            .and_then(|r| r.history.final_iou())
            .unwrap_or(0.0)
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in ModelKind::ALL {
        let v: Vec<f64> = TRAIN_SEEDS.iter().map(|&s| iou(kind, s)).collect();
        ok &= v.iter().all(|&x| x >= 0.5);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "    {kind}: val iou {:?} mean {mean:.4}",
            v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        );
        parts.push(format!("{kind} mean {mean:.3}"));
    }
    let mut worst_gap = 0.0f64;
    for kind in [ModelKind::VggD2s, ModelKind::ResnetD2s] {
        for &s in &TRAIN_SEEDS {
            let gap = iou(kind, s) - iou(ModelKind::Segnet, s);
            worst_gap = worst_gap.max(gap.abs());
            println!(
                "    seed {s}: {kind} - segnet = {gap:+.4} ({})",
                if gap >= 0.0 { "d2s ahead" } else { "segnet ahead" }
            );
        }
    }
    ok &= worst_gap <= 0.10;
    parts.push(format!("max |d2s - segnet| {worst_gap:.3} (tol 0.10)"));
    let serial: f64 = ev.first.iter().map(|r| r.secs).sum();
    let round = ev.wall_secs / 2.0;
    if ev.workers >= 4 {
        ok &= round <= 45.0 * 60.0;
        parts.push(format!(
            "one round {:.1} min on {} workers (limit 45)",
            round / 60.0,
            ev.workers
        ));
    } else {
        parts.push(format!(
            "one round {:.1} min on {} core(s), {:.0}s serial; 4-core limit not checkable here",
            round / 60.0,
            ev.workers,
            serial
        ));
    }
    verdict(ok, parts.join("; "))
}

fn determinism(ev: &TrainingEvidence) -> Verdict {
    let same = ev.first.len() == ev.second.len()
        && ev.first.iter().zip(&ev.second).all(|(a, b)| {
            a.kind == b.kind && a.seed == b.seed && a.history.without_timing() == b.history.without_timing()
        });
    verdict(
        same && ev.data_identical,
        format!(
            "histories {} across two runs (timing column excluded); dataset regeneration {}; both runs {:.0}s wall",
            if same { "identical" } else { "DIFFER" },
            if ev.data_identical { "byte-identical" } else { "DIFFERS" },
            ev.wall_secs
        ),
    )
}

fn overfit() -> Verdict {
    let sample = generate_road_scene(99, 64).unwrap();
    let one = std::slice::from_ref(&sample);
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in ModelKind::ALL {
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 1,
            warmup_epochs: 0,
            base_lr: OVERFIT_LR,
            dropout: 0.0,
            jitter: JitterRanges::none(),
            patience: 200,
            seed: 5,
            ..TrainConfig::new(kind)
        };
        let out = train_on_samples(&cfg, one, one, |_| {}).unwrap();
        let losses: Vec<f64> = out.history.records.iter().map(|r| r.loss).collect();
        let hit = losses.iter().position(|&l| l < 0.05);
        ok &= hit.is_some();
        let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        parts.push(match hit {
            Some(step) => format!("{kind} < 0.05 at step {}", step + 1),
            None => format!("{kind} min loss {min:.4}"),
        });
    }
    verdict(ok, parts.join("; "))
}

const OVERFIT_LR: f64 = 1e-3;

fn iou_oracle() -> Verdict {
    let mut rng = Rng::new(8);
    let mut mismatches = 0;
    for _ in 0..100 {
        let p = random_mask([1, 1, 16, 16], rng.uniform(), &mut rng);
        let g = random_mask([1, 1, 16, 16], rng.uniform(), &mut rng);
        let c = confusion_counts(&p, &g).unwrap();
        if (c.true_pos, c.false_pos, c.false_neg, c.true_neg) != brute_force_counts(&p, &g) {
            mismatches += 1;
        }
    }
    let mk = |tp, fp, fn_| ConfusionCounts {
        true_pos: tp,
        false_pos: fp,
        false_neg: fn_,
        true_neg: 0,
    };
    let report = EvalReport::from_image_counts(&[mk(1, 0, 3), mk(3, 0, 0)]);
    let example = report.iou == 4.0 / 7.0 && report.mean_image_iou == 0.625;
    verdict(
        mismatches == 0 && example,
        format!(
            "{mismatches}/100 count mismatches; global iou {:.6} vs per-image mean {:.3}",
            report.iou, report.mean_image_iou
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id: u32, name: &'static str, f: &dyn Fn() -> Verdict| {
        if wants(id) {
            println!("criterion {id}: {name} ...");
            let v = f();
            println!(
                "criterion {id} {}: {name}: {}",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            );
            results.push((id, name, v));
        }
    };
    record(1, "gradient suite", &gradient_suite);
    record(2, "depth-to-space mechanism", &d2s_mechanism);
    record(3, "convolution oracle", &conv_oracle);
    record(4, "compute claims", &compute_claims);
    record(6, "single-image overfit", &overfit);
    record(8, "IoU oracle", &iou_oracle);
    if wants(5) || wants(7) {
        println!("criteria 5, 7: training 3 models x 3 seeds, twice ...");
        let ev = run_training();
        record(5, "scaled table analog", &|| table_analog(&ev));
        record(7, "determinism", &|| determinism(&ev));
    }
    results.sort_by_key(|(id, _, _)| *id);
    println!();
    println!("acceptance summary");
    for (id, name, v) in &results {
        println!("criterion {id} {}: {name}", if v.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|(_, _, v)| !v.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 || std::env::var_os("ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
