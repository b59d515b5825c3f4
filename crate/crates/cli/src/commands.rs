use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use segattn_core::config::{parse_size, RunConfig};
use segattn_core::data::{self, ClassMap, SegSample, SyntheticConfig, IGNORE_INDEX};
use segattn_core::network::{self, save_checkpoint, Fusion, ModelConfig, SegModel};
use segattn_core::nn::InitSpec;
use segattn_core::train::{self, ConfusionMatrix, Evaluation};
use segattn_core::{Error, Tensor};

use crate::Axis;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

/// Caps rayon's pool at `SEGATTN_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SEGATTN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("SEGATTN_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn size_arg(s: &str) -> Result<(usize, usize)> {
    parse_size(s)
        .filter(|&(h, w)| h > 0 && w > 0)
        .ok_or_else(|| anyhow!(Error::InvalidConfig(format!("bad size `{s}` (expected HxW)"))))
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn load_data(manifest: &Path, palette: Option<&Path>) -> Result<Vec<SegSample>> {
    let cm = palette
        .map(|p| ClassMap::load_palette(p).with_context(|| format!("reading palette {}", p.display())))
        .transpose()?;
    let samples = data::load_dataset(manifest, cm.as_ref())
        .with_context(|| format!("loading dataset {}", manifest.display()))?;
    if samples.is_empty() {
        bail!(Error::Dataset(format!("{} lists no samples", manifest.display())));
    }
    Ok(samples)
}

fn data_path(flag: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.data.as_ref().map(PathBuf::from))
        .ok_or_else(|| anyhow!(Error::InvalidConfig("no dataset: pass --data or set `data` in the config".into())))
}

/// Rejects data the model cannot consume.
fn check_compatible(model: &ModelConfig, samples: &[SegSample]) -> Result<()> {
    for s in samples {
        if s.channels() != model.in_channels {
            bail!(Error::ChannelMismatch {
                expected: model.in_channels,
                got: s.channels(),
            });
        }
        if let Some(&l) = s.mask.labels.iter().find(|&&l| l != IGNORE_INDEX && usize::from(l) >= model.num_classes) {
            bail!(Error::InvalidConfig(format!(
                "sample `{}` has label {l} but the model predicts {} classes",
                s.id, model.num_classes
            )));
        }
    }
    Ok(())
}

pub fn gen_data(out: &Path, n: usize, size: &str, classes: usize, seed: u64) -> Result<ExitCode> {
    let hw = size_arg(size)?;
    let samples = data::gen_synthetic(&SyntheticConfig::new(n, hw, classes, seed))?;
    let manifest = data::write_dataset(out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), manifest.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(
    config: Option<&Path>,
    data_flag: Option<&Path>,
    out: &Path,
    palette: Option<&Path>,
    epochs: Option<usize>,
) -> Result<ExitCode> {
    let mut cfg = load_run_config(config)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let samples = load_data(&data_path(data_flag, &cfg)?, palette)?;
    check_compatible(&cfg.model, &samples)?;
    let (train_set, val_set) = train::split_dataset(samples, cfg.train_ratio, cfg.train.seed)?;
    let mut model = SegModel::build(&cfg.model, InitSpec::new(cfg.train.seed))?;
    model.check_input(train_set[0].height(), train_set[0].width())?;

    std::fs::create_dir_all(out)?;
    let total = cfg.train.epochs;
    let outcome = train::train(&mut model, &train_set, &val_set, &cfg.train, |r| {
        eprintln!(
            "epoch {}/{total}  loss {:.4}  train acc {:.4}  val acc {:.4}  val mIoU {:.4}  ({:.1}s)",
            r.epoch, r.train_loss, r.train_pixel_acc, r.val_pixel_acc, r.val_miou, r.seconds
        );
    })?;
    save_checkpoint(&model, out.join("checkpoint.bin"))?;
    let mut best = model.clone();
    best.params_mut().clone_from_slice(&outcome.best_params);
    save_checkpoint(&best, out.join("best.bin"))?;
    std::fs::write(out.join("report.csv"), outcome.report.to_csv())?;
    match outcome.report.last() {
        Some(r) => println!("final val mIoU {:.4} (best epoch {})", r.val_miou, outcome.best_epoch),
        None => println!("no epochs run"),
    }
    Ok(ExitCode::SUCCESS)
}

fn print_metrics(ev: &Evaluation) {
    let k = ev.per_class_iou.len();
    let header: Vec<String> = (1..=k).map(|c| format!("{c:>7}")).collect();
    let row: Vec<String> = ev
        .per_class_iou
        .iter()
        .map(|v| v.map_or(format!("{:>7}", "-"), |v| format!("{v:>7.3}")))
        .collect();
    println!("class {}", header.join(""));
    println!("IoU   {}", row.join(""));
    println!("mean IoU            {:.3}", ev.mean_iou);
    println!("mean class accuracy {:.3}", ev.mean_class_accuracy);
    println!("pixel accuracy      {:.3}", ev.pixel_accuracy);
}

fn write_metrics(path: &Path, ev: &Evaluation) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "iou", "accuracy"])?;
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for c in 0..ev.per_class_iou.len() {
        w.write_record([
            (c + 1).to_string(),
            fmt(ev.per_class_iou[c]),
            fmt(ev.confusion.class_accuracy(c)),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        format!("{:.6}", ev.mean_iou),
        format!("{:.6}", ev.mean_class_accuracy),
    ])?;
    w.write_record(["pixel".to_string(), String::new(), format!("{:.6}", ev.pixel_accuracy)])?;
    w.flush()?;
    Ok(())
}

pub fn eval(
    checkpoint: Option<&Path>,
    data_path: &Path,
    out: &Path,
    palette: Option<&Path>,
    oracle: bool,
    classes: Option<usize>,
    batch: usize,
) -> Result<ExitCode> {
    let samples = load_data(data_path, palette)?;
    let model = checkpoint
        .map(|p| network::load_checkpoint(p).with_context(|| format!("reading checkpoint {}", p.display())))
        .transpose()?;
    let ev = if oracle {
        let k = match (&model, classes) {
            (_, Some(k)) => k,
            (Some(m), None) => m.config().num_classes,
            (None, None) => {
                let max = samples
                    .iter()
                    .flat_map(|s| s.mask.labels.iter().copied())
                    .filter(|&l| l != IGNORE_INDEX)
                    .max()
                    .unwrap_or(0);
                usize::from(max) + 1
            }
        };
        let mc = ModelConfig {
            num_classes: k,
            in_channels: samples[0].channels(),
            ..ModelConfig::default()
        };
        check_compatible(&mc, &samples)?;
        let mut cm = ConfusionMatrix::new(k);
        for s in &samples {
            cm.accumulate(&s.mask.labels, &s.mask.labels, Some(IGNORE_INDEX))?;
        }
        Evaluation::from(cm)
    } else {
        let model = model.ok_or_else(|| anyhow!("--checkpoint is required without --oracle"))?;
        check_compatible(model.config(), &samples)?;
        if let Some(k) = classes {
            if k != model.config().num_classes {
                bail!(Error::InvalidConfig(format!(
                    "--classes {k} disagrees with the checkpoint's {} classes",
                    model.config().num_classes
                )));
            }
        }
        train::evaluate(&model, &samples, batch)?
    };
    print_metrics(&ev);
    std::fs::create_dir_all(out)?;
    write_metrics(&out.join("metrics.csv"), &ev)?;
    Ok(ExitCode::SUCCESS)
}

/// Extends the stage lists to `n` stages, repeating the last width and
/// doubling the last dilation.
fn extend_stages(m: &mut ModelConfig, n: usize) {
    while m.stage_channels.len() < n {
        let c = *m.stage_channels.last().expect("non-empty");
        let d = *m.dilation_schedule.last().expect("non-empty");
        m.stage_channels.push(c);
        m.dilation_schedule.push(d * 2);
    }
}

/// Model variants of one ablation axis with their row labels.
pub fn ablation_variants(axis: Axis, base: &ModelConfig) -> Vec<(Vec<String>, ModelConfig)> {
    match axis {
        Axis::Pooling => (0..=5)
            .map(|p| {
                let mut m = base.clone();
                extend_stages(&mut m, 5);
                m.pooling_count = p;
                (vec![format!("Pooling x{p}")], m)
            })
            .collect(),
        Axis::Branches => [(1, Fusion::None), (1, Fusion::Concat), (2, Fusion::None), (2, Fusion::Concat)]
            .into_iter()
            .map(|(b, f)| {
                let mut m = base.clone();
                m.branches = b;
                m.fusion = f;
                (vec![b.to_string(), f.to_string()], m)
            })
            .collect(),
    }
}

pub fn ablate(
    axis: Axis,
    config: Option<&Path>,
    data_flag: Option<&Path>,
    out: &Path,
    palette: Option<&Path>,
    epochs: Option<usize>,
    parallel: bool,
) -> Result<ExitCode> {
    let mut cfg = load_run_config(config)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let samples = load_data(&data_path(data_flag, &cfg)?, palette)?;
    check_compatible(&cfg.model, &samples)?;
    let (train_set, val_set) = train::split_dataset(samples, cfg.train_ratio, cfg.train.seed)?;
    let variants = ablation_variants(axis, &cfg.model);
    for (label, m) in &variants {
        SegModel::build(m, InitSpec::new(0))?
            .check_input(train_set[0].height(), train_set[0].width())
            .with_context(|| format!("variant {}", label.join(",")))?;
    }

    let run = |(label, m): &(Vec<String>, ModelConfig)| -> Result<(Vec<String>, f64)> {
        let mut model = SegModel::build(m, InitSpec::new(cfg.train.seed))?;
        let outcome = train::train(&mut model, &train_set, &val_set, &cfg.train, |_| {})?;
        let miou = outcome.report.last().map_or(0.0, |r| r.val_miou);
        eprintln!("{}: val mIoU {miou:.4}", label.join(","));
        Ok((label.clone(), miou))
    };
    let rows: Vec<(Vec<String>, f64)> = if parallel {
        variants.par_iter().map(run).collect::<Result<_>>()?
    } else {
        variants.iter().map(run).collect::<Result<_>>()?
    };

    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    match axis {
        Axis::Pooling => w.write_record(["pooling", "miou"])?,
        Axis::Branches => w.write_record(["branches", "fusion", "miou"])?,
    }
    for (label, miou) in &rows {
        let mut rec = label.clone();
        rec.push(format!("{miou:.6}"));
        w.write_record(&rec)?;
        println!("{}", rec.join(","));
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn profile(config: Option<&Path>, input_size: &str, batch: usize, warmup: usize, iters: usize) -> Result<ExitCode> {
    let cfg = load_run_config(config)?;
    let (h, w) = size_arg(input_size)?;
    let model = SegModel::build(&cfg.model, InitSpec::new(cfg.train.seed))?;
    model.check_input(h, w)?;
    let shape = [batch.max(1), cfg.model.in_channels, h, w];
    let flops = model.count_flops([1, cfg.model.in_channels, h, w])?;
    let fps = train::benchmark_fps(&model, shape, warmup, iters)?;
    println!("input_size,flops,params,ms,fps");
    println!(
        "{h}x{w},{flops},{},{:.6},{:.6}",
        model.count_params(),
        fps.ms_per_frame,
        fps.fps
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(
    config: Option<&Path>,
    tol: f64,
    step: f64,
    seed: u64,
    size: &str,
    batch: usize,
    inject_fault: bool,
) -> Result<ExitCode> {
    let model_cfg = match config {
        Some(p) => load_run_config(Some(p))?.model,
        None => ModelConfig::minimal(),
    };
    let (h, w) = size_arg(size)?;
    if inject_fault && !segattn_core::fault::set_relu_backward_fault(true) {
        bail!(Error::InvalidConfig("this build has no fault injection".into()));
    }
    let mut model = SegModel::build(&model_cfg, InitSpec::new(seed))?;
    model.jitter_zero_params(seed);
    model.check_input(h, w)?;
    let n = batch.max(1);
    let x = Tensor::from_fn(&[n, model_cfg.in_channels, h, w], |i| {
        let v = (i as u64).wrapping_mul(2_654_435_761).wrapping_add(seed.wrapping_mul(97)) % 1000;
        v as f64 / 1000.0 - 0.5
    });
    let targets: Vec<u8> = (0..n * h * w)
        .map(|i| ((i * 7 + seed as usize) % model_cfg.num_classes) as u8)
        .collect();
    let results = network::check_gradients(&model, &x, &targets, step, tol)?;
    segattn_core::fault::set_relu_backward_fault(false);

    println!("param,numel,max_rel_err,max_abs_grad,status");
    for r in &results {
        println!(
            "{},{},{:.3e},{:.3e},{}",
            r.name,
            r.numel,
            r.max_rel_err,
            r.max_abs_grad,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed = results.iter().filter(|r| !r.pass).count();
    if failed == 0 {
        println!("PASS: {} parameter groups, max rel err {worst:.3e} < {tol:e}", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL: {failed} of {} parameter groups exceed {tol:e}", results.len());
        Ok(ExitCode::from(1))
    }
}
