use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmsnet"))
        .args(args)
        .env_remove("HMS_THREADS")
        .output()
        .expect("spawn hmsnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, count: &str, extra: &[&str]) -> Output {
    let mut args = vec!["gen", "--out", p(dir), "--count", count, "--size", "32"];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["input", "gt"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for n in names {
            out.push((n.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&n).unwrap()));
        }
    }
    out.push(("manifest".into(), fs::read(dir.join("manifest.tsv")).unwrap()));
    out
}

#[test]
fn gen_is_reproducible_and_validates() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    gen(&a, "4", &["--seed", "5"]);
    gen(&b, "4", &["--seed", "5"]);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    let dense = t.path().join("dense");
    gen(&dense, "4", &["--density", "1.0"]);
    let first = fs::read_to_string(dense.join("manifest.tsv")).unwrap();
    let (inp, gt) = first.lines().next().unwrap().split_once('\t').unwrap();
    assert_eq!(fs::read(dense.join(inp)).unwrap(), fs::read(dense.join(gt)).unwrap());

    let o = run(&["gen", "--out", p(&t.path().join("none")), "--count", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\t"));
}

#[test]
fn usage_errors_exit_two() {
    let o = run(&["gen", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error\tusage\t"));
    assert_eq!(stderr(&o).lines().count(), 1);

    let o = run(&["gradcheck", "no_such_op"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("gen.cfg");
    fs::write(&cfg, "# scene settings\ncount=3\nsize=24\nseed=9\n").unwrap();
    let out = t.path().join("g");
    let o = run(&["gen", "--config", p(&cfg), "--out", p(&out), "--seed", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = stdout(&o).lines().next().unwrap().to_string();
    assert!(resolved.starts_with("resolved\t"));
    assert!(resolved.contains("count=3") && resolved.contains("size=24") && resolved.contains("seed=11"));
    assert_eq!(fs::read_to_string(out.join("manifest.tsv")).unwrap().lines().count(), 3);

    fs::write(&cfg, "colour=blue\n").unwrap();
    let o = run(&["gen", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\tconfig\t"));
}

#[test]
fn gradcheck_reports_pass_and_fail() {
    let o = run(&["gradcheck", "si_conv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l == "PASS"));

    let o = run(&["gradcheck", "si_conv", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l == "FAIL"));
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn eval_of_ground_truth_predictions_is_zero() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    gen(&d, "4", &[]);
    let text = fs::read_to_string(d.join("manifest.tsv")).unwrap();
    let rows: String = text
        .lines()
        .map(|l| {
            let gt = l.split('\t').nth(1).unwrap();
            format!("{gt}\t{gt}\n")
        })
        .collect();
    fs::write(d.join("self.tsv"), rows).unwrap();
    let o = run(&["eval", "--predictions", p(&d.join("self.tsv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<_> = out.lines().collect();
    let row = lines.last().unwrap();
    let vals: Vec<f64> = row.split('\t').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&vals[..5], &[0.0; 5]);
}

#[test]
fn train_predict_eval_sweep_and_resume() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    gen(&d, "6", &["--density", "0.1"]);
    let data = d.join("manifest.tsv");
    let run_dir = t.path().join("run");
    let o = run(&["train", "--data", p(&data), "--out", p(&run_dir), "--epochs", "2", "--batch-size", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(run_dir.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(run_dir.join("best.ckpt").exists() && run_dir.join("last.ckpt").exists());

    // resuming a finished run is a no-op; resume from a copy with more epochs is refused
    let o = run(&["train", "--data", p(&data), "--out", p(&run_dir), "--resume", p(&run_dir.join("last.ckpt"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "train", "--data", p(&data), "--out", p(&run_dir), "--resume", p(&run_dir.join("last.ckpt")), "--epochs", "5",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let ck = run_dir.join("best.ckpt");
    let preds = t.path().join("pred");
    let o = run(&["predict", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&preds)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["eval", "--predictions", p(&preds.join("manifest.tsv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rmse: f64 = stdout(&o).lines().last().unwrap().split('\t').next().unwrap().parse().unwrap();
    assert!(rmse.is_finite() && rmse > 0.0);

    let o = run(&["eval", "--data", p(&data), "--checkpoint", p(&ck)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["eval", "--data", p(&data), "--baseline", "nn-fill"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let curve = t.path().join("curve.tsv");
    let o = run(&["sweep", "--data", p(&data), "--checkpoint", p(&ck), "--out", p(&curve)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&curve).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(stdout(&o).ends_with(&text));
    assert_eq!(fs::read(&ck).unwrap(), fs::read(run_dir.join("best.ckpt")).unwrap());

    let c = t.path().join("noisy");
    let o = run(&["corrupt", "--data", p(&data), "--out", p(&c), "--protocol", "scene_noise", "--level", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["eval", "--data", p(&c.join("manifest.tsv")), "--baseline", "nn-fill"]);
    assert!(o.status.success(), "{}", stderr(&o));
}
