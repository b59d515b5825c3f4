use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use segattn_core::data::{load_dataset, MANIFEST_NAME};
use segattn_core::network::load_checkpoint;
use segattn_core::train::evaluate;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_segattn"));
    c.env("SEGATTN_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn segattn")
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen(dir: &Path, n: usize, size: &str, seed: u64) -> String {
    let out = dir.to_str().unwrap();
    let o = run(&["gen-data", "--out", out, "--n", &n.to_string(), "--size", size, "--classes", "3", "--seed", &seed.to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(MANIFEST_NAME).to_string_lossy().into_owned()
}

fn tiny_config(dir: &Path, epochs: usize) -> String {
    let path = dir.join("tiny.cfg");
    let text = format!(
        "in_channels = 3\nnum_classes = 3\nstage_channels = 4\ndilation_schedule = 1\n\
         pooling_count = 0\nstem_padding = 1\nbatch = 4\nepochs = {epochs}\nseed = 3\n"
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_data_writes_pairs_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), 8, "32x32", 7);
    gen(b.path(), 8, "32x32", 7);
    let count = |d: &Path, sub: &str| std::fs::read_dir(d.join(sub)).unwrap().count();
    assert_eq!(count(a.path(), "images"), 8);
    assert_eq!(count(a.path(), "masks"), 8);
    let manifest = std::fs::read_to_string(a.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    for sub in ["images", "masks"] {
        for entry in std::fs::read_dir(a.path().join(sub)).unwrap() {
            let p = entry.unwrap().path();
            let q = b.path().join(sub).join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{}", p.display());
        }
    }
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert_eq!(run(&["gen-data", "--out", out, "--classes", "1"]).status.code(), Some(2));
    assert_eq!(run(&["gen-data", "--out", out, "--size", "banana"]).status.code(), Some(2));
    assert_eq!(run(&["profile", "--input-size", "0x32"]).status.code(), Some(2));
    assert_eq!(run(&["profile", "--input-size", "4x4"]).status.code(), Some(2));
    let bad = d.path().join("bad.cfg");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(run(&["profile", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let o = run(&["train", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));
}

#[test]
fn train_report_rows_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let manifest = gen(&d.path().join("data"), 20, "16x16", 1);
    let cfg = tiny_config(d.path(), 3);
    let mut reports = Vec::new();
    let mut ckpts = Vec::new();
    for run_id in ["a", "b"] {
        let out = d.path().join(run_id);
        let o = run(&["train", "--config", &cfg, "--data", &manifest, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("final val mIoU"));
        let text = std::fs::read_to_string(out.join("report.csv")).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap().len(), 6);
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 3);
        reports.push(rows.iter().map(|row| row.iter().take(5).collect::<Vec<_>>().join(",")).collect::<Vec<_>>());
        ckpts.push((std::fs::read(out.join("checkpoint.bin")).unwrap(), std::fs::read(out.join("best.bin")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(ckpts[0], ckpts[1]);

    let o = run(&["train", "--config", &cfg, "--data", &manifest, "--out", d.path().join("c").to_str().unwrap(), "--epochs", "1"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(d.path().join("c/report.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn eval_metrics_match_library() {
    let d = tempfile::tempdir().unwrap();
    let manifest = gen(&d.path().join("data"), 12, "16x16", 2);
    let cfg = tiny_config(d.path(), 1);
    let run_dir = d.path().join("run");
    assert!(run(&["train", "--config", &cfg, "--data", &manifest, "--out", run_dir.to_str().unwrap()]).status.success());
    let ckpt = run_dir.join("checkpoint.bin");
    let eval_dir = d.path().join("eval");
    let o = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", &manifest, "--out", eval_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let model = load_checkpoint(&ckpt).unwrap();
    let samples = load_dataset(&manifest, None).unwrap();
    let ev = evaluate(&model, &samples, 8).unwrap();

    let text = stdout(&o);
    assert!(text.contains(&format!("mean IoU            {:.3}", ev.mean_iou)), "{text}");
    assert!(text.contains(&format!("mean class accuracy {:.3}", ev.mean_class_accuracy)), "{text}");
    assert!(text.lines().next().unwrap().split_whitespace().skip(1).eq(["1", "2", "3"]));

    let mut r = csv::Reader::from_path(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["class", "iou", "accuracy"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 + 2);
    for (c, row) in rows.iter().take(3).enumerate() {
        assert_eq!(&row[0], (c + 1).to_string());
        let want_iou = ev.per_class_iou[c].map_or(String::new(), |v| format!("{v:.6}"));
        assert_eq!(&row[1], want_iou);
        let want_acc = ev.confusion.class_accuracy(c).map_or(String::new(), |v| format!("{v:.6}"));
        assert_eq!(&row[2], want_acc);
    }
    assert_eq!(&rows[3][0], "mean");
    assert_eq!(rows[3][1].parse::<f64>().unwrap(), format!("{:.6}", ev.mean_iou).parse::<f64>().unwrap());
    assert_eq!(&rows[4][0], "pixel");
    assert_eq!(&rows[4][2], format!("{:.6}", ev.pixel_accuracy));

    let o = run(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", &manifest, "--out", eval_dir.to_str().unwrap(), "--classes", "4",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_eval_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    let manifest = gen(&d.path().join("data"), 6, "16x16", 3);
    let o = run(&["eval", "--oracle", "--data", &manifest, "--out", d.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean IoU            1.000"));
}

fn profile_row(cfg: &str, size: &str) -> Vec<String> {
    let o = run(&["profile", "--config", cfg, "--input-size", size, "--warmup", "1", "--iters", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(r.headers().unwrap(), vec!["input_size", "flops", "params", "ms", "fps"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    rows[0].iter().map(String::from).collect()
}

#[test]
fn profile_rows() {
    let cfg = fixture("reference.cfg");
    let row = profile_row(&cfg, "32x32");
    assert_eq!(row.len(), 5);
    assert_eq!(row[0], "32x32");
    let model = segattn_core::network::SegModel::build(
        &segattn_core::config::RunConfig::load(&cfg).unwrap().model,
        segattn_core::nn::InitSpec::new(0),
    )
    .unwrap();
    assert_eq!(row[2].parse::<usize>().unwrap(), model.count_params());
    assert_eq!(row[1].parse::<u64>().unwrap(), model.count_flops([1, 3, 32, 32]).unwrap());
    assert!(row[3].parse::<f64>().unwrap() > 0.0 && row[4].parse::<f64>().unwrap() > 0.0);
    let big = profile_row(&cfg, "64x64");
    let (f1, f2) = (row[1].parse::<f64>().unwrap(), big[1].parse::<f64>().unwrap());
    assert!((f2 / f1 - 4.0).abs() < 1e-3, "{f1} -> {f2}");
    let conv_only = fixture("ablation_base.cfg");
    let small = profile_row(&conv_only, "32x32")[1].parse::<u64>().unwrap();
    let large = profile_row(&conv_only, "64x64")[1].parse::<u64>().unwrap();
    assert_eq!(large, 4 * small);
}

#[test]
fn gradcheck_passes_and_catches_fault() {
    let o = run(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("param,numel,max_rel_err,max_abs_grad,status"));
    let groups: Vec<&str> = lines.clone().take_while(|l| !l.starts_with("PASS") && !l.starts_with("FAIL")).collect();
    assert!(groups.len() > 10);
    for g in &groups {
        let f: Vec<&str> = g.split(',').collect();
        assert_eq!(f.len(), 5, "{g}");
        assert!(f[2].parse::<f64>().unwrap() < 1e-4, "{g}");
        assert_eq!(f[4], "pass");
    }
    assert!(text.lines().last().unwrap().starts_with("PASS"));

    // Test builds enable the fault switch through the dev-dependency.
    let o = run(&["gradcheck", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn ablation_tables() {
    let d = tempfile::tempdir().unwrap();
    let manifest = gen(&d.path().join("data"), 10, "32x32", 4);
    let cfg = fixture("ablation_base.cfg");
    for (axis, rows, cols) in [("pooling", 6, 2), ("branches", 4, 3)] {
        let out = d.path().join(axis);
        let o = run(&[
            "ablate", "--axis", axis, "--config", &cfg, "--data", &manifest, "--out", out.to_str().unwrap(), "--epochs", "1",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut r = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
        assert_eq!(r.headers().unwrap().len(), cols);
        let recs: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        assert_eq!(recs.len(), rows);
        for rec in &recs {
            let m: f64 = rec[cols - 1].parse().unwrap();
            assert!((0.0..=1.0).contains(&m));
        }
        if axis == "pooling" {
            let labels: Vec<&str> = recs.iter().map(|r| r.get(0).unwrap()).collect();
            assert_eq!(labels, ["Pooling x0", "Pooling x1", "Pooling x2", "Pooling x3", "Pooling x4", "Pooling x5"]);
        }
    }
}
