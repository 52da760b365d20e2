//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line
//! with the measured value and the bound it is held to; the process exits
//! non-zero if any check fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chroma_core::block::{
    assemble_scheme_b, dc_value, extract_samples, pool_luma_boundary, read_dataset, sample_at, write_dataset,
    DatasetManifest, BLOCK_SIZES,
};
use chroma_core::cclm::derive_lm;
use chroma_core::net::{
    check_model_gradients, init_params, load_checkpoint, save_checkpoint, ChromaNet, Mode, ModelInput,
};
use chroma_core::train::{aggregate, compare, train, EvalReport, LogRecord, PreparedSet};
use chroma_core::{ChromaFormat, ModelConfig, Tensor, TrainConfig, Variant};
use rand::Rng;

fn verdict(name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let ok = pass && elapsed <= budget;
    println!(
        "{} {name}: {detail}; {:.2?} (budget {:?})",
        if ok { "PASS" } else { "FAIL" },
        elapsed,
        budget
    );
    ok
}

fn dc_fill_at_frame_origin() -> bool {
    let t = Instant::now();
    let want = 512.0f64 / 1023.0;
    let mut checked = 0;
    let mut mismatches = 0;
    for format in [ChromaFormat::Yuv420, ChromaFormat::Yuv444] {
        let frame = common::random_frame(64, 64, format, 5);
        for n in BLOCK_SIZES {
            let s = sample_at(&frame, n, (0, 0)).unwrap();
            for b in [&s.b_y, &s.b_cb, &s.b_cr] {
                for (&v, &avail) in b.values.iter().zip(&b.available) {
                    checked += 1;
                    if v != want as f32 || avail {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let exact = dc_value(10) == want;
    verdict(
        "dc_fill",
        mismatches == 0 && exact,
        format!("{mismatches} of {checked} boundary entries differ from 512/1023"),
        t.elapsed(),
        Duration::from_secs(1),
    )
}

fn boundary_pooling_with_replicate_padding() -> bool {
    let t = Instant::now();
    let mut r = common::rng(11);
    let mut mismatches = 0;
    let mut checked = 0;
    for n in BLOCK_SIZES {
        for _ in 0..50 {
            let b: Vec<f64> = (0..4 * n + 1).map(|_| r.gen_range(0.0..1.0)).collect();
            let out = pool_luma_boundary(&b).unwrap();
            if out.len() != 2 * n + 1 {
                mismatches += 1;
                continue;
            }
            for (i, &o) in out.iter().enumerate() {
                let right = if 2 * i + 1 < b.len() {
                    b[2 * i + 1]
                } else {
                    b[b.len() - 1]
                };
                checked += 1;
                if o != (b[2 * i] + right) / 2.0 {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(
        "boundary_pooling",
        mismatches == 0,
        format!("{mismatches} of {checked} pooled entries differ (exact f64)"),
        t.elapsed(),
        Duration::from_secs(1),
    )
}

fn averaging_kernel_degeneracy() -> bool {
    let t = Instant::now();
    let cfg = ModelConfig::new(Variant::SchemeA).with_seed(4);
    let mut net = ChromaNet::new(cfg, init_params(&cfg).unwrap()).unwrap();
    let w = net.params.get_mut("luma.down.weight");
    let d1 = w.shape()[3];
    for (i, val) in w.data_mut().iter_mut().enumerate() {
        let (ky, kx) = (i / (3 * d1), (i / d1) % 3);
        *val = if ky < 2 && kx < 2 { 0.25 } else { 0.0 };
    }
    for b in net.params.get_mut("luma.down.bias").data_mut() {
        *b = 0.0;
    }
    let mut r = common::rng(12);
    let mut worst = 0.0f64;
    for n in BLOCK_SIZES {
        let side = 2 * n;
        for _ in 0..10 {
            let luma: Vec<f32> = (0..side * side).map(|_| r.gen_range(0.0..1.0)).collect();
            let x = ModelInput {
                variant: Variant::SchemeA,
                n,
                boundary: Tensor::zeros([2 * n + 1, 3]),
                luma: Tensor::new(vec![side, side, 1], luma.clone()).unwrap(),
            };
            let (_, trace) = net.forward_traced(&x).unwrap();
            let down = trace.downsampled_luma().unwrap();
            assert_eq!(down.shape(), &[n, n, d1]);
            for i in 0..n {
                for j in 0..n {
                    let at = |y: usize, x: usize| luma[y * side + x] as f64;
                    let mean =
                        (at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1))
                            / 4.0;
                    for c in 0..d1 {
                        worst = worst.max((down.data()[(i * n + j) * d1 + c] as f64 - mean).abs());
                    }
                }
            }
        }
    }
    verdict(
        "averaging_degeneracy",
        worst <= 1e-6,
        format!("max |down - mean pool| = {worst:.3e} (tol 1e-6)"),
        t.elapsed(),
        Duration::from_secs(1),
    )
}

fn scheme_b_input_assembly() -> bool {
    let t = Instant::now();
    let frame = common::random_frame(64, 64, ChromaFormat::Yuv444, 13);
    let mut problems = Vec::new();
    for n in BLOCK_SIZES {
        let s = sample_at(&frame, n, (5, 9)).unwrap();
        let (s1, x1) = assemble_scheme_b::<f64>(&s).unwrap();
        if s1.shape() != [5, 2 * n + 1] {
            problems.push(format!("S1 shape {:?} at N={n}", s1.shape()));
        }
        if x1.shape() != [n, n, 3] {
            problems.push(format!("X1 shape {:?} at N={n}", x1.shape()));
        }
        let nf = n as f32;
        for i in 0..n {
            for j in 0..n {
                let base = (i * n + j) * 3;
                if x1.data()[base + 1] != (j as f32 / nf) as f64 || x1.data()[base + 2] != (i as f32 / nf) as f64 {
                    problems.push(format!("block location at ({i}, {j}), N={n}"));
                }
            }
        }
        // Boundary runs from the bottom of the left column up to the corner,
        // then along the top row.
        let m = 2 * n + 1;
        for k in 0..m {
            let (x, y) = if k < n {
                (-1, (n - 1 - k) as i32)
            } else {
                (k as i32 - n as i32 - 1, -1)
            };
            let a = s1.data()[3 * m + k];
            let o = s1.data()[4 * m + k];
            if a != (x as f32 / nf) as f64 || o != (y as f32 / nf) as f64 {
                problems.push(format!("boundary location {k}, N={n}"));
            }
        }
    }
    verdict(
        "scheme_b_assembly",
        problems.is_empty(),
        if problems.is_empty() {
            "shapes 5x(2N+1), NxNx3 and location maps exact for N in 4/8/16".into()
        } else {
            problems.join(", ")
        },
        t.elapsed(),
        Duration::from_secs(1),
    )
}

fn gradient_suite() -> bool {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut op_worst = 0.0f64;
    for seed in 0..20 {
        for (op, err, tol) in common::op_grad_errors(seed) {
            op_worst = op_worst.max(err);
            if err > tol || err.is_nan() {
                failures.push(format!("{op} seed {seed}: {err:.3e} > {tol:e}"));
            }
        }
    }
    let mut model = Vec::new();
    for v in Variant::ALL {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let r = check_model_gradients(v, seed, Some(24)).unwrap();
            worst = worst.max(r.max_rel_error);
            if r.max_rel_error > 1e-4 || r.max_rel_error.is_nan() {
                failures.push(format!("{v} seed {seed}: {:.3e} at {}", r.max_rel_error, r.worst_param));
            }
        }
        let full = check_model_gradients(v, 20, None).unwrap();
        worst = worst.max(full.max_rel_error);
        if full.max_rel_error > 1e-4 || full.max_rel_error.is_nan() {
            failures.push(format!(
                "{v} exhaustive: {:.3e} at {}",
                full.max_rel_error, full.worst_param
            ));
        }
        model.push(format!("{v} {worst:.2e}"));
    }
    verdict(
        "gradient_suite",
        failures.is_empty(),
        format!(
            "ops worst {op_worst:.2e} over 20 seeds; model worst {} over 20 sampled seeds + 1 full (tol 1e-4){}",
            model.join(", "),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
        t.elapsed(),
        Duration::from_secs(300),
    )
}

/// Closed-form solve of the 2x2 normal equations on raw moments.
fn normal_equations(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

fn linear_model_oracle() -> bool {
    let t = Instant::now();
    let mut r = common::rng(14);
    let mut worst_oracle = 0.0f64;
    let mut worst_affine = 0.0f64;
    for _ in 0..100 {
        let n = BLOCK_SIZES[r.gen_range(0..3)];
        let len = 2 * n + 1;
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-0.5..0.5));
        let x: Vec<f64> = (0..len).map(|_| r.gen_range(0.0..1.0)).collect();
        let noisy: Vec<f64> = x.iter().map(|&v| a * v + b + r.gen_range(-0.1..0.1)).collect();
        let lm = derive_lm(&x, &noisy).unwrap();
        let (oa, ob) = normal_equations(&x, &noisy);
        worst_oracle = worst_oracle.max((lm.alpha - oa).abs()).max((lm.beta - ob).abs());
        let exact: Vec<f64> = x.iter().map(|&v| a * v + b).collect();
        let lm = derive_lm(&x, &exact).unwrap();
        worst_affine = worst_affine.max((lm.alpha - a).abs()).max((lm.beta - b).abs());
    }
    verdict(
        "linear_model_oracle",
        worst_oracle <= 1e-9 && worst_affine <= 1e-9,
        format!("vs normal equations {worst_oracle:.2e}, affine recovery {worst_affine:.2e} (tol 1e-9)"),
        t.elapsed(),
        Duration::from_secs(1),
    )
}

fn overfit_toy_set() -> bool {
    let t = Instant::now();
    let mut ratios = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let set = common::random_samples(common::format_for(v), 4, 16, 15);
        let mut cfg = TrainConfig::new(v);
        cfg.max_steps = 2000;
        cfg.val_interval = 0;
        cfg.seed = 15;
        let prepared = PreparedSet::new(v, &set).unwrap();
        let mc = cfg.model_config();
        let init = ChromaNet::new(mc, init_params(&mc).unwrap()).unwrap();
        let before = prepared.mean_loss(&init, 16).unwrap();
        let out = train(&cfg, &set, &[]).unwrap();
        let after = prepared.mean_loss(&out.last, 16).unwrap();
        let ratio = after / before;
        pass &= ratio <= 0.1;
        ratios.push(format!("{v} {ratio:.2e}"));
    }
    verdict(
        "overfit",
        pass,
        format!(
            "final/initial loss after 2000 steps at lr 1e-4: {} (tol 0.1)",
            ratios.join(", ")
        ),
        t.elapsed(),
        Duration::from_secs(600),
    )
}

fn determinism_and_persistence() -> bool {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let frame = common::random_frame(96, 96, ChromaFormat::Yuv420, 16);
    let mut files = Vec::new();
    for run in 0..2 {
        let samples: Vec<_> = BLOCK_SIZES
            .iter()
            .flat_map(|&n| extract_samples(&frame, n, 20, 77 + n as u64).unwrap())
            .collect();
        let path = dir.path().join(format!("set{run}.chrb"));
        write_dataset(&path, ChromaFormat::Yuv420, &samples).unwrap();
        files.push(std::fs::read(&path).unwrap());
        let (_, back) = read_dataset(&path).unwrap();
        if back != samples {
            problems.push("dataset read-back differs".to_owned());
        }
    }
    if files[0] != files[1] {
        problems.push("datasets differ".to_owned());
    }
    let (_, set) = read_dataset(dir.path().join("set0.chrb")).unwrap();
    for v in [Variant::Baseline, Variant::SchemeA] {
        let mut cfg = TrainConfig::new(v);
        cfg.max_steps = 60;
        cfg.val_interval = 20;
        cfg.seed = 3;
        let mut logs: Vec<Vec<LogRecord>> = Vec::new();
        let mut ckpts = Vec::new();
        for run in 0..2 {
            let out = train(&cfg, &set, &set[..12]).unwrap();
            let path = dir.path().join(format!("{v}{run}.ckpt"));
            save_checkpoint(&out.best.params, &out.best.config, &path).unwrap();
            ckpts.push(std::fs::read(&path).unwrap());
            logs.push(out.log);
        }
        let same_log = logs[0].len() == logs[1].len()
            && logs[0].iter().zip(&logs[1]).all(|(a, b)| {
                a.step == b.step
                    && a.train_loss.map(f64::to_bits) == b.train_loss.map(f64::to_bits)
                    && a.val_loss.map(f64::to_bits) == b.val_loss.map(f64::to_bits)
            });
        if !same_log {
            problems.push(format!("{v} loss curves differ"));
        }
        if ckpts[0] != ckpts[1] {
            problems.push(format!("{v} checkpoints differ"));
        }
    }
    for v in Variant::ALL {
        let cfg = ModelConfig::new(v).with_seed(8);
        let mut net = ChromaNet::new(cfg, init_params(&cfg).unwrap()).unwrap();
        let mut r = common::rng(8);
        for tensor in net.params.tensors_mut() {
            for val in tensor.data_mut() {
                *val += r.gen_range(-0.01f32..0.01);
            }
        }
        let path = dir.path().join(format!("{v}.rt.ckpt"));
        save_checkpoint(&net.params, &net.config, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for s in common::random_samples(common::format_for(v), 8, 4, 9) {
            let x = ModelInput::<f32>::from_sample(v, &s).unwrap();
            let a = net.forward(&x, Mode::Inference).unwrap();
            let b = back.forward(&x, Mode::Inference).unwrap();
            if !a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()) {
                problems.push(format!("{v} round-trip outputs differ"));
                break;
            }
        }
    }
    verdict(
        "determinism",
        problems.is_empty(),
        if problems.is_empty() {
            "datasets, loss curves, checkpoints and round-trip outputs bit-identical".into()
        } else {
            problems.join(", ")
        },
        t.elapsed(),
        Duration::from_secs(120),
    )
}

fn desk_dir() -> PathBuf {
    std::env::var_os("CHROMA_DESK_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../runs/desk"))
}

fn last_step(log: &Path) -> usize {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<LogRecord>(l).unwrap().step)
        .max()
        .unwrap_or(0)
}

/// Seconds on the final progress line, e.g. `step 50000 ... (980s)`.
fn train_seconds(txt: &Path) -> f64 {
    let text = std::fs::read_to_string(txt).unwrap();
    text.lines()
        .rev()
        .find_map(|l| {
            let inner = l.trim_end().strip_suffix(')')?.rsplit_once('(')?.1;
            let num = inner.strip_suffix('s')?;
            let (value, unit) = match num.strip_suffix('m') {
                Some(ms) => (ms, 1e-3),
                None => (num, 1.0),
            };
            value.parse::<f64>().ok().map(|v| v * unit)
        })
        .unwrap_or(f64::NAN)
}

fn desk_scale_comparison() -> bool {
    let t = Instant::now();
    let dir = desk_dir();
    let mut problems = Vec::new();
    for f in ["420", "444"] {
        let m: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("data{f}.train.manifest.json"))).unwrap())
                .unwrap();
        if m.count < 50_000 {
            problems.push(format!("{f} training set has {} blocks", m.count));
        }
    }
    let names = ["baseline420", "scheme_a", "scheme_b", "baseline444"];
    let mut reports = Vec::new();
    let mut seconds = 0.0;
    for name in names {
        let step = last_step(&dir.join(format!("{name}.log.ndjson")));
        if step < 50_000 {
            problems.push(format!("{name} trained for {step} steps"));
        }
        seconds += train_seconds(&dir.join(format!("{name}.train.txt")));
        let net = load_checkpoint(dir.join(format!("{name}.ckpt"))).unwrap();
        let report = EvalReport::load_json(dir.join(format!("{name}.report.json"))).unwrap();
        if net.config.variant != report.variant {
            problems.push(format!("{name} checkpoint and report disagree on the variant"));
        }
        let recomputed = aggregate(&report.records);
        if recomputed != report.aggregates {
            problems.push(format!("{name} aggregates do not match its records"));
        }
        for n in BLOCK_SIZES {
            if report.for_size(n).is_none() {
                problems.push(format!("{name} has no N={n} rows"));
            }
        }
        for a in &report.aggregates {
            let best = a.nn.mse.min(a.lm.mse);
            if a.selected_mse > best * (1.0 + 1e-12) {
                problems.push(format!(
                    "{name} N={:?}: selected {:e} > best {best:e}",
                    a.n, a.selected_mse
                ));
            }
        }
        reports.push(report);
    }
    if seconds > 4.0 * 3600.0 || seconds.is_nan() {
        problems.push(format!("training took {seconds:.0}s"));
    }
    let main = compare(&reports[..3]).unwrap();
    let committed = std::fs::read_to_string(dir.join("compare.csv")).unwrap();
    if committed != main.to_csv() {
        problems.push("compare.csv differs from a fresh comparison".into());
    }
    for v in ["baseline", "scheme_a", "scheme_b"] {
        for size in ["4", "8", "16", "overall"] {
            if !main
                .rows
                .iter()
                .any(|r| r.variant == v && r.size == size && r.nn_mse.is_some())
            {
                problems.push(format!("no {v} row for size {size}"));
            }
        }
    }
    let b444 = &reports[3].overall().nn.mse;
    let sb = &reports[2].overall().nn.mse;
    println!(
        "REPORT desk direction: scheme_b {sb:.4e} vs baseline444 {b444:.4e} overall NN MSE ({})",
        if sb < b444 {
            "scheme_b better"
        } else {
            "scheme_b not better"
        }
    );
    for r in &reports {
        let o = r.overall();
        println!(
            "REPORT {} {}: nn {:.4e} lm {:.4e} selected {:.4e} (nn chosen {}/{})",
            r.variant, r.chroma_format, o.nn.mse, o.lm.mse, o.selected_mse, o.mode_counts.nn, o.blocks
        );
    }
    verdict(
        "desk_comparison",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} runs of >= 50k steps on >= 50k blocks in {:.1} CPU-h; per-N tables present; selected <= best everywhere",
                names.len(),
                seconds / 3600.0
            )
        } else {
            problems.join("; ")
        },
        t.elapsed(),
        Duration::from_secs(60),
    )
}

type Check = (&'static str, fn() -> bool);

fn main() {
    let checks: [Check; 9] = [
        ("dc_fill_at_frame_origin", dc_fill_at_frame_origin),
        (
            "boundary_pooling_with_replicate_padding",
            boundary_pooling_with_replicate_padding,
        ),
        ("averaging_kernel_degeneracy", averaging_kernel_degeneracy),
        ("scheme_b_input_assembly", scheme_b_input_assembly),
        ("gradient_suite", gradient_suite),
        ("linear_model_oracle", linear_model_oracle),
        ("overfit_toy_set", overfit_toy_set),
        ("determinism_and_persistence", determinism_and_persistence),
        ("desk_scale_comparison", desk_scale_comparison),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(true) => {}
            Ok(false) => failed.push(name),
            Err(_) => {
                println!("FAIL {name}: panicked");
                failed.push(name);
            }
        }
    }
    println!("acceptance: {} of {} passed", checks.len() - failed.len(), checks.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
