use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context as _, Result};
use chroma_core::block::{extract_samples, read_dataset, sample_at, write_dataset, DatasetManifest, BLOCK_SIZES};
use chroma_core::media_io::{decode_image, read_yuv, rgb_to_yuv444, subsample_420, write_yuv, YuvMeta};
use chroma_core::net::{check_model_gradients, load_checkpoint, save_checkpoint, Mode, ModelInput};
use chroma_core::train::{compare as compare_reports, evaluate, train_with, LogRecord, Predictor};
use chroma_core::{cclm, ChromaFormat, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{CompareArgs, EvalArgs, ExtractArgs, GradcheckArgs, PredictArgs, PrepareArgs, TrainArgs};

pub struct Context {
    pub seed: u64,
    pub verbose: bool,
}

fn show_config(command: &str, config: &impl Serialize) -> Result<()> {
    eprintln!("{command} config: {}", serde_json::to_string(config)?);
    Ok(())
}

fn sorted_files(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        if path.is_file() && keep(&ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Serialize)]
struct PrepareConfig<'a> {
    input: &'a Path,
    out: &'a Path,
    format: ChromaFormat,
    scales: &'a [usize],
    bit_depth: u8,
    seed: u64,
}

pub fn prepare(ctx: &Context, a: PrepareArgs) -> Result<()> {
    show_config(
        "prepare",
        &PrepareConfig {
            input: &a.input,
            out: &a.out,
            format: a.format,
            scales: &a.scales,
            bit_depth: a.bit_depth,
            seed: ctx.seed,
        },
    )?;
    ensure!(
        !a.scales.is_empty() && a.scales.iter().all(|&s| s >= 1),
        "scales must be >= 1"
    );
    let images = sorted_files(&a.input, |e| matches!(e, "png" | "ppm" | "pnm"))?;
    ensure!(!images.is_empty(), "no PNG or PPM images in {}", a.input.display());
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut written = 0;
    for path in &images {
        let img = decode_image(path)?;
        for &scale in &a.scales {
            let scaled = if scale == 1 { img.clone() } else { img.downscale(scale)? };
            let frame = rgb_to_yuv444(&scaled, a.bit_depth)?;
            let frame = match a.format {
                ChromaFormat::Yuv444 => frame,
                ChromaFormat::Yuv420 => subsample_420(&frame)?,
            };
            let out = a.out.join(format!("{}_s{scale}.yuv", stem(path)));
            write_yuv(&frame, &out)?;
            YuvMeta::of(&frame, path.display().to_string(), scale).save_for(&out)?;
            if ctx.verbose {
                eprintln!(
                    "{} -> {} ({}x{})",
                    path.display(),
                    out.display(),
                    frame.width(),
                    frame.height()
                );
            }
            written += 1;
        }
    }
    println!(
        "prepared {written} frames from {} images in {}",
        images.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ExtractConfig<'a> {
    yuv: &'a Path,
    sizes: &'a [usize],
    per_size: usize,
    out: &'a Path,
    seed: u64,
}

const EXTRACT_POLICY: &str =
    "per size, blocks split evenly over frames in file-name order; origins uniform over all positions where the block fits";

pub fn extract(ctx: &Context, a: ExtractArgs) -> Result<()> {
    show_config(
        "extract",
        &ExtractConfig {
            yuv: &a.yuv,
            sizes: &a.sizes,
            per_size: a.per_size,
            out: &a.out,
            seed: ctx.seed,
        },
    )?;
    for n in &a.sizes {
        ensure!(BLOCK_SIZES.contains(n), "block size {n} is not one of {BLOCK_SIZES:?}");
    }
    let files = sorted_files(&a.yuv, |e| e == "yuv")?;
    ensure!(!files.is_empty(), "no .yuv files in {}", a.yuv.display());
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let meta = YuvMeta::load_for(path).with_context(|| format!("sidecar of {}", path.display()))?;
        frames.push(read_yuv(
            path,
            meta.width,
            meta.height,
            meta.bit_depth,
            meta.chroma_format,
        )?);
    }
    let format = frames[0].chroma_format;
    ensure!(
        frames
            .iter()
            .all(|f| f.chroma_format == format && f.bit_depth == frames[0].bit_depth),
        "frames in {} mix chroma formats or bit depths",
        a.yuv.display()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut samples = Vec::new();
    for &n in &a.sizes {
        let eligible: Vec<usize> = (0..frames.len())
            .filter(|&i| frames[i].cb.width >= n && frames[i].cb.height >= n)
            .collect();
        ensure!(!eligible.is_empty(), "no frame is large enough for {n}x{n} blocks");
        let (base, extra) = (a.per_size / eligible.len(), a.per_size % eligible.len());
        for (k, &i) in eligible.iter().enumerate() {
            let count = base + usize::from(k < extra);
            let frame_seed: u64 = rng.gen();
            samples.extend(extract_samples(&frames[i], n, count, frame_seed)?);
        }
    }
    write_dataset(&a.out, format, &samples)?;
    DatasetManifest {
        chroma_format: format,
        sources: files.iter().map(|p| p.display().to_string()).collect(),
        seed: ctx.seed,
        sizes: a.sizes.clone(),
        per_size: a.per_size,
        count: samples.len(),
        policy: EXTRACT_POLICY.into(),
    }
    .save_for(&a.out)?;
    println!(
        "extracted {} {format} blocks from {} frames into {}",
        samples.len(),
        files.len(),
        a.out.display()
    );
    Ok(())
}

fn log_path_for(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".log.ndjson");
    name.into()
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::new(a.variant);
    cfg.batch_size = a.batch_size;
    cfg.learning_rate = a.lr;
    cfg.max_steps = a.steps;
    cfg.seed = ctx.seed;
    cfg.val_interval = a.val_interval;
    cfg.train_path = Some(a.dataset.display().to_string());
    cfg.val_path = a.val.as_ref().map(|p| p.display().to_string());
    let log_path = a.log.clone().unwrap_or_else(|| log_path_for(&a.out));

    #[derive(Serialize)]
    struct Shown<'a> {
        #[serde(flatten)]
        train: &'a TrainConfig,
        out: &'a Path,
        log: &'a Path,
        progress_every: usize,
    }
    show_config(
        "train",
        &Shown {
            train: &cfg,
            out: &a.out,
            log: &log_path,
            progress_every: a.progress_every,
        },
    )?;
    cfg.validate()?;

    let (_, train_set) = read_dataset(&a.dataset)?;
    let val_set = match &a.val {
        Some(p) => read_dataset(p)?.1,
        None => Vec::new(),
    };
    eprintln!(
        "training on {} blocks, validating on {}",
        train_set.len(),
        val_set.len()
    );

    let mut log =
        BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_error = None;
    let start = Instant::now();
    let mut window = (0.0, 0usize);
    let every = if ctx.verbose {
        a.progress_every.clamp(1, 100)
    } else {
        a.progress_every
    };
    let outcome = train_with(&cfg, &train_set, &val_set, |r: &LogRecord| {
        let line = serde_json::to_string(r).map_err(anyhow::Error::from).and_then(|s| {
            writeln!(log, "{s}")?;
            Ok(())
        });
        if let Err(e) = line {
            log_error.get_or_insert(e);
        }
        if let Some(l) = r.train_loss {
            window.0 += l;
            window.1 += 1;
        }
        if let Some(v) = r.val_loss {
            eprintln!("step {:>7}  val loss {v:.6e}  ({:.0?})", r.step, start.elapsed());
        }
        if every > 0 && r.step > 0 && r.step.is_multiple_of(every) {
            eprintln!(
                "step {:>7}  train loss {:.6e}  ({:.0?})",
                r.step,
                window.0 / window.1.max(1) as f64,
                start.elapsed()
            );
            window = (0.0, 0);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.context(format!("writing {}", log_path.display())));
    }
    log.flush()?;
    save_checkpoint(&outcome.best.params, &outcome.best.config, &a.out)?;
    println!(
        "saved {} checkpoint from step {} to {} ({:.1?})",
        cfg.model.variant,
        outcome.best_step,
        a.out.display(),
        start.elapsed()
    );
    Ok(())
}

pub fn gradcheck(ctx: &Context, a: GradcheckArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Shown {
        variant: chroma_core::Variant,
        first_seed: u64,
        seeds: u64,
        per_tensor: Option<usize>,
        tolerance: f64,
        block_size: usize,
    }
    let per_tensor = (!a.exhaustive).then_some(a.per_tensor);
    show_config(
        "gradcheck",
        &Shown {
            variant: a.variant,
            first_seed: ctx.seed,
            seeds: a.seeds,
            per_tensor,
            tolerance: a.tolerance,
            block_size: 4,
        },
    )?;
    ensure!(a.seeds >= 1, "need at least one seed");
    let mut worst = 0.0f64;
    for seed in ctx.seed..ctx.seed + a.seeds {
        let r = check_model_gradients(a.variant, seed, per_tensor)?;
        if ctx.verbose {
            eprintln!(
                "seed {seed}: {:.3e} over {} coordinates (worst {}[{}]: analytic {:e}, numeric {:e})",
                r.max_rel_error, r.checked, r.worst_param, r.worst_index, r.analytic, r.numeric
            );
        }
        worst = worst.max(r.max_rel_error);
    }
    println!("{} max relative error {worst:.3e} over {} seeds", a.variant, a.seeds);
    if worst > a.tolerance {
        bail!("max relative error {worst:.3e} exceeds {:.1e}", a.tolerance);
    }
    Ok(())
}

pub fn eval(ctx: &Context, a: EvalArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Shown<'a> {
        ckpt: &'a Path,
        dataset: &'a Path,
        out: &'a Path,
        records_csv: &'a Path,
        seed: u64,
    }
    let csv_path = a.out.with_extension("csv");
    show_config(
        "eval",
        &Shown {
            ckpt: &a.ckpt,
            dataset: &a.dataset,
            out: &a.out,
            records_csv: &csv_path,
            seed: ctx.seed,
        },
    )?;
    let net = load_checkpoint(&a.ckpt)?;
    let (_, blocks) = read_dataset(&a.dataset)?;
    let mut report = evaluate(&net, &blocks)?;
    report.dataset = Some(a.dataset.display().to_string());
    report.save_json(&a.out)?;
    fs::write(&csv_path, report.records_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    print!("{}", compare_reports(std::slice::from_ref(&report))?.to_table());
    Ok(())
}

pub fn predict(ctx: &Context, a: PredictArgs) -> Result<()> {
    let [x, y, n] = a.block[..] else {
        bail!("--block expects x,y,N");
    };
    #[derive(Serialize)]
    struct Shown<'a> {
        ckpt: &'a Path,
        yuv: &'a Path,
        x: usize,
        y: usize,
        n: usize,
        seed: u64,
    }
    show_config(
        "predict",
        &Shown {
            ckpt: &a.ckpt,
            yuv: &a.yuv,
            x,
            y,
            n,
            seed: ctx.seed,
        },
    )?;
    ensure!(BLOCK_SIZES.contains(&n), "block size {n} is not one of {BLOCK_SIZES:?}");
    let net = load_checkpoint(&a.ckpt)?;
    let meta = YuvMeta::load_for(&a.yuv).with_context(|| format!("sidecar of {}", a.yuv.display()))?;
    let frame = read_yuv(&a.yuv, meta.width, meta.height, meta.bit_depth, meta.chroma_format)?;
    let sample = sample_at(&frame, n, (x, y))?;
    let input = ModelInput::from_sample(net.config.variant, &sample)?;
    let out = net.forward(&input, Mode::Inference)?;
    let (lm_cb, lm_cr) = cclm::predict_sample(&sample)?;

    let max = frame.max_value() as f64;
    let to_rows = |values: &mut dyn Iterator<Item = f64>| -> Vec<Vec<u16>> {
        let flat: Vec<u16> = values.map(|v| (v * max).round() as u16).collect();
        flat.chunks(n).map(<[u16]>::to_vec).collect()
    };
    let mse = |pred: &[f64], target: &[f32]| {
        pred.iter()
            .zip(target)
            .map(|(p, &t)| (p - t as f64).powi(2))
            .sum::<f64>()
            / target.len() as f64
    };
    let nn_cb: Vec<f64> = out.data().iter().step_by(2).map(|&v| v as f64).collect();
    let nn_cr: Vec<f64> = out.data().iter().skip(1).step_by(2).map(|&v| v as f64).collect();
    let nn_mse = 0.5 * (mse(&nn_cb, &sample.target_cb) + mse(&nn_cr, &sample.target_cr));
    let lm_mse = 0.5 * (mse(&lm_cb, &sample.target_cb) + mse(&lm_cr, &sample.target_cr));

    #[derive(Serialize)]
    struct Prediction {
        variant: chroma_core::Variant,
        x: usize,
        y: usize,
        n: usize,
        bit_depth: u8,
        cb: Vec<Vec<u16>>,
        cr: Vec<Vec<u16>>,
        nn_mse: f64,
        lm_mse: f64,
        selected: Predictor,
    }
    let p = Prediction {
        variant: net.config.variant,
        x,
        y,
        n,
        bit_depth: frame.bit_depth,
        cb: to_rows(&mut nn_cb.iter().copied()),
        cr: to_rows(&mut nn_cr.iter().copied()),
        nn_mse,
        lm_mse,
        selected: if nn_mse < lm_mse { Predictor::Nn } else { Predictor::Lm },
    };
    println!("{}", serde_json::to_string(&p)?);
    Ok(())
}

pub fn compare(ctx: &Context, a: CompareArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Shown<'a> {
        reports: &'a [PathBuf],
        out: &'a Path,
        json: &'a Path,
        seed: u64,
    }
    let json_path = a.out.with_extension("json");
    show_config(
        "compare",
        &Shown {
            reports: &a.reports,
            out: &a.out,
            json: &json_path,
            seed: ctx.seed,
        },
    )?;
    let reports = a
        .reports
        .iter()
        .map(|p| chroma_core::EvalReport::load_json(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_reports(&reports)?;
    fs::write(&a.out, table.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    fs::write(&json_path, serde_json::to_string_pretty(&table)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    print!("{}", table.to_table());
    Ok(())
}
