use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use hmsnet::data::{load_dataset, make_dataset, read_depth_pgm, read_manifest, write_depth_pgm, write_manifest, DepthSample, SceneSpec, MAX_PGM_DEPTH};
use hmsnet::eval::{compute_dataset_metrics, evaluate, format_curve, robustness_sweep, DepthPredictor, MetricReport, NnFill, Protocol};
use hmsnet::gradcheck::{check_network, check_op, GradReport, OpName, NETWORK_TOLERANCE, OP_TOLERANCE};
use hmsnet::selftest::{format_table, run_selftest};
use hmsnet::trainer::{resume, split_dataset, train, Checkpoint, EpochLog, TrainConfig};
use hmsnet::{Array3, Error, Mask2, MaskedMap, Result};

/// Sparse depth completion with sparsity-invariant multi-scale networks.
#[derive(Parser, Debug)]
#[command(name = "hmsnet", version)]
struct Cli {
    /// Plain-text key=value file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker cap for per-sample passes.
    #[arg(long, global = true, env = "HMS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate synthetic scenes with sparsified inputs and a manifest.
    Gen(GenArgs),
    /// Train a network on a manifest.
    Train(TrainArgs),
    /// Write dense predictions of a checkpoint as depth PGMs.
    Predict(PredictArgs),
    /// Evaluate a checkpoint, a baseline or stored predictions.
    Eval(EvalArgs),
    /// Write corrupted copies of a dataset's inputs.
    Corrupt(CorruptArgs),
    /// Robustness curve of a fixed model over corruption levels.
    Sweep(SweepArgs),
    /// Finite-difference check of an operator or the whole network.
    Gradcheck(GradcheckArgs),
    /// Run the invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Square scene side in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    /// Range falloff exponent of the simulated sensor (0 = uniform).
    #[arg(long)]
    falloff: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint; its recorded settings are used.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    loss_floor_patience: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `nn-fill` evaluates the nearest-valid-neighbour baseline.
    #[arg(long)]
    baseline: Option<String>,
    /// Manifest of `prediction<TAB>ground truth` pairs.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// scene_noise, region_noise or sparsity.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated corruption levels.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the curve to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Operator name or `network`.
    target: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Parameters sampled by the network check.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long)]
    seed: Option<u64>,
}

/// Resolved string settings: defaults, then the config file, then flags.
struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    fn new(defaults: &[(&str, String)]) -> Self {
        Self {
            map: defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    fn overlay_file(&mut self, path: Option<&Path>) -> Result<()> {
        let Some(path) = path else { return Ok(()) };
        let text = fs::read_to_string(path)?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in config file, got '{line}'")))?;
            self.set(k.trim(), v.trim().to_string())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: String) -> Result<()> {
        match self.map.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown setting '{key}' for this command"))),
        }
    }

    fn flag<T: ToString>(&mut self, key: &str, value: &Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    fn str(&self, key: &str) -> &str {
        self.map.get(key).map(String::as_str).unwrap_or("")
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.str(key)
            .parse()
            .map_err(|_| Error::Config(format!("bad value '{}' for '{key}'", self.str(key))))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        match self.str(key) {
            "" => Err(Error::Config(format!("--{} is required", key.replace('_', "-")))),
            p => Ok(PathBuf::from(p)),
        }
    }

    fn line(&self) -> String {
        let mut s = String::from("resolved");
        for (k, v) in &self.map {
            let _ = write!(s, "\t{k}={v}");
        }
        s
    }
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
            _ => {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                eprintln!("error\tusage\t{first}");
                return ExitCode::from(2);
            }
        },
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error\t{}\t{}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let threads = cli.threads.unwrap_or(1).to_string();
    let file = cli.config.as_deref();
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(a, file),
        Cmd::Train(a) => cmd_train(a, file, threads),
        Cmd::Predict(a) => cmd_predict(a, file),
        Cmd::Eval(a) => cmd_eval(a, file),
        Cmd::Corrupt(a) => cmd_corrupt(a, file),
        Cmd::Sweep(a) => cmd_sweep(a, file),
        Cmd::Gradcheck(a) => cmd_gradcheck(a, file),
        Cmd::Selftest(a) => cmd_selftest(a, file),
    }
}

fn cmd_gen(a: &GenArgs, file: Option<&Path>) -> Result<ExitCode> {
    let d = SceneSpec::default();
    let mut s = Settings::new(&[
        ("out", String::new()),
        ("count", "200".into()),
        ("size", d.height.to_string()),
        ("density", d.density.to_string()),
        ("falloff", d.falloff.to_string()),
        ("seed", d.seed.to_string()),
        ("objects_min", d.objects.0.to_string()),
        ("objects_max", d.objects.1.to_string()),
        ("min_depth", d.min_depth.to_string()),
        ("max_depth", d.max_depth.to_string()),
    ]);
    s.overlay_file(file)?;
    s.flag("out", &path_str(&a.out))?;
    s.flag("count", &a.count)?;
    s.flag("size", &a.size)?;
    s.flag("density", &a.density)?;
    s.flag("falloff", &a.falloff)?;
    s.flag("seed", &a.seed)?;
    println!("{}", s.line());

    let out = s.path("out")?;
    let size = s.get("size")?;
    let spec = SceneSpec {
        height: size,
        width: size,
        seed: s.get("seed")?,
        objects: (s.get("objects_min")?, s.get("objects_max")?),
        min_depth: s.get("min_depth")?,
        max_depth: s.get("max_depth")?,
        density: s.get("density")?,
        falloff: s.get("falloff")?,
    };
    let data = make_dataset(s.get("count")?, &spec)?;
    fs::create_dir_all(out.join("input"))?;
    fs::create_dir_all(out.join("gt"))?;
    let mut pairs = Vec::new();
    for sample in &data {
        let inp = format!("input/{}.pgm", sample.id);
        let gt = format!("gt/{}.pgm", sample.id);
        write_depth_pgm(&sample.input, out.join(&inp))?;
        write_depth_pgm(&sample.gt, out.join(&gt))?;
        pairs.push((inp, gt));
    }
    write_manifest(out.join("manifest.tsv"), &pairs)?;
    println!("wrote {} samples to {}", data.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: &TrainArgs, file: Option<&Path>, threads: String) -> Result<ExitCode> {
    let base = match &a.resume {
        Some(p) => Checkpoint::load(p)?.config,
        None => TrainConfig::default(),
    };
    let mut defaults: Vec<(&str, String)> = vec![("data", String::new()), ("out", String::new())];
    let kv = base.to_kv();
    for line in kv.lines() {
        let (k, v) = line.split_once('=').expect("key=value");
        let key = TrainConfig::KEYS.iter().find(|x| **x == k).expect("known key");
        defaults.push((key, v.to_string()));
    }
    let mut s = Settings::new(&defaults);
    if a.resume.is_none() {
        s.overlay_file(file)?;
        s.flag("epochs", &a.epochs)?;
        s.flag("lr0", &a.lr0)?;
        s.flag("batch_size", &a.batch_size)?;
        s.flag("seed", &a.seed)?;
        s.flag("variant", &a.variant)?;
        s.flag("val_fraction", &a.val_fraction)?;
        s.flag("loss_floor_patience", &a.loss_floor_patience)?;
    } else if file.is_some() || a.epochs.is_some() || a.lr0.is_some() || a.seed.is_some() || a.variant.is_some() {
        return Err(Error::Config("a resumed run takes its settings from the checkpoint".into()));
    }
    s.set("threads", threads)?;
    s.flag("data", &path_str(&a.data))?;
    s.flag("out", &path_str(&a.out))?;
    println!("{}", s.line());

    let mut cfg = TrainConfig::default();
    for k in TrainConfig::KEYS {
        cfg.set(k, s.str(k))?;
    }
    cfg.validate()?;
    let dataset = load_dataset(s.path("data")?)?;
    let out = s.path("out")?;
    fs::create_dir_all(&out)?;
    let log_path = out.join("train_log.tsv");
    let mut log = match &a.resume {
        Some(_) => fs::read_to_string(&log_path).unwrap_or_else(|_| format!("{}\n", EpochLog::HEADER)),
        None => format!("{}\n", EpochLog::HEADER),
    };
    println!("{}", EpochLog::HEADER);
    let observe = |e: &EpochLog, ck: &Checkpoint, best: bool| -> Result<()> {
        println!("{}", e.tsv());
        log.push_str(&e.tsv());
        log.push('\n');
        fs::write(&log_path, &log)?;
        ck.save(&out.join("last.ckpt"))?;
        if best {
            ck.save(&out.join("best.ckpt"))?;
        }
        Ok(())
    };
    let outcome = match &a.resume {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            ck.config.threads = cfg.threads;
            let (tr, val) = split_dataset(&dataset, ck.config.val_fraction)?;
            resume(ck, tr, val, observe)?
        }
        None => train(&dataset, &cfg, observe)?,
    };
    println!(
        "best val rmse {:.3} mm after {} epochs; checkpoints in {}",
        outcome.best.best_val_rmse,
        outcome.last.epoch,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// A checkpoint or the NN-fill baseline, chosen by flags.
fn predictor(s: &Settings) -> Result<Box<dyn DepthPredictor>> {
    match (s.str("checkpoint"), s.str("baseline")) {
        ("", "nn-fill") => Ok(Box::new(NnFill)),
        ("", "") => Err(Error::Config("either --checkpoint or --baseline is required".into())),
        (p, "") => Ok(Box::new(Checkpoint::load(Path::new(p))?.model())),
        (_, "nn-fill") => Err(Error::Config("--checkpoint and --baseline are exclusive".into())),
        (_, b) => Err(Error::Config(format!("unknown baseline '{b}'"))),
    }
}

fn absolute(p: &Path) -> Result<String> {
    Ok(fs::canonicalize(p)?.display().to_string())
}

fn cmd_predict(a: &PredictArgs, file: Option<&Path>) -> Result<ExitCode> {
    let mut s = Settings::new(&[("checkpoint", String::new()), ("data", String::new()), ("out", String::new())]);
    s.overlay_file(file)?;
    s.flag("checkpoint", &path_str(&a.checkpoint))?;
    s.flag("data", &path_str(&a.data))?;
    s.flag("out", &path_str(&a.out))?;
    println!("{}", s.line());
    let model = Checkpoint::load(&s.path("checkpoint")?)?.model();
    let manifest = s.path("data")?;
    let pairs = read_manifest(&manifest)?;
    let data = load_dataset(&manifest)?;
    let out = s.path("out")?;
    fs::create_dir_all(&out)?;
    let mut rows = Vec::new();
    for (sample, (_, gt)) in data.iter().zip(&pairs) {
        let pred = model.predict(&sample.input)?;
        let name = format!("{}.pgm", sample.id);
        write_depth_pgm(&prediction_map(&pred)?, out.join(&name))?;
        rows.push((name, absolute(gt)?));
    }
    write_manifest(out.join("manifest.tsv"), &rows)?;
    println!("wrote {} predictions to {}", rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

/// Clamps a prediction into the storable range; non-positive depths become
/// invalid pixels.
fn prediction_map(pred: &Array3) -> Result<MaskedMap> {
    let (_, h, w) = pred.shape();
    let f = Array3::from_fn(1, h, w, |_, y, x| pred.get(0, y, x).clamp(0.0, MAX_PGM_DEPTH));
    let m = Mask2::from_fn(h, w, |y, x| f.get(0, y, x) * 256.0 >= 0.5);
    Ok(MaskedMap::raw(f, m)?.canonical())
}

fn print_report(r: &MetricReport) {
    println!("{r}");
    println!("{}", MetricReport::tsv_header());
    println!("{}", r.tsv_row());
}

fn cmd_eval(a: &EvalArgs, file: Option<&Path>) -> Result<ExitCode> {
    let mut s = Settings::new(&[
        ("data", String::new()),
        ("checkpoint", String::new()),
        ("baseline", String::new()),
        ("predictions", String::new()),
    ]);
    s.overlay_file(file)?;
    s.flag("data", &path_str(&a.data))?;
    s.flag("checkpoint", &path_str(&a.checkpoint))?;
    s.flag("baseline", &a.baseline)?;
    s.flag("predictions", &path_str(&a.predictions))?;
    println!("{}", s.line());
    let report = if !s.str("predictions").is_empty() {
        let pairs = read_manifest(s.path("predictions")?)?;
        if pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut items = Vec::new();
        for (p, g) in &pairs {
            let id = p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_default();
            items.push((id, read_depth_pgm(p)?.features().clone(), read_depth_pgm(g)?));
        }
        compute_dataset_metrics(items.iter().map(|(id, p, g)| (id.as_str(), p, g)))?
    } else {
        let data = load_dataset(s.path("data")?)?;
        evaluate(predictor(&s)?.as_ref(), &data)?
    };
    print_report(&report);
    Ok(ExitCode::SUCCESS)
}

fn cmd_corrupt(a: &CorruptArgs, file: Option<&Path>) -> Result<ExitCode> {
    let mut s = Settings::new(&[
        ("data", String::new()),
        ("out", String::new()),
        ("protocol", "sparsity".into()),
        ("level", "1".into()),
        ("seed", "0".into()),
    ]);
    s.overlay_file(file)?;
    s.flag("data", &path_str(&a.data))?;
    s.flag("out", &path_str(&a.out))?;
    s.flag("protocol", &a.protocol)?;
    s.flag("level", &a.level)?;
    s.flag("seed", &a.seed)?;
    println!("{}", s.line());
    let protocol: Protocol = s.str("protocol").parse()?;
    let level: f64 = s.get("level")?;
    let seed: u64 = s.get("seed")?;
    let manifest = s.path("data")?;
    let pairs = read_manifest(&manifest)?;
    let data = load_dataset(&manifest)?;
    let out = s.path("out")?;
    fs::create_dir_all(out.join("input"))?;
    let mut rows = Vec::new();
    for (i, (sample, (_, gt))) in data.iter().zip(&pairs).enumerate() {
        let c = protocol.apply(sample, level, seed.wrapping_add(i as u64))?;
        let name = format!("input/{}.pgm", sample.id);
        write_depth_pgm(&c.input, out.join(&name))?;
        rows.push((name, absolute(gt)?));
    }
    write_manifest(out.join("manifest.tsv"), &rows)?;
    println!("wrote {} corrupted inputs to {}", rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_levels(text: &str) -> Result<Vec<f64>> {
    let levels = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad level '{t}'"))))
        .collect::<Result<Vec<_>>>()?;
    if levels.is_empty() {
        return Err(Error::Config("no levels given".into()));
    }
    Ok(levels)
}

fn cmd_sweep(a: &SweepArgs, file: Option<&Path>) -> Result<ExitCode> {
    let mut s = Settings::new(&[
        ("data", String::new()),
        ("checkpoint", String::new()),
        ("baseline", String::new()),
        ("protocol", "sparsity".into()),
        ("levels", "0.9,0.5,0.1".into()),
        ("seed", "0".into()),
        ("out", String::new()),
    ]);
    s.overlay_file(file)?;
    s.flag("data", &path_str(&a.data))?;
    s.flag("checkpoint", &path_str(&a.checkpoint))?;
    s.flag("baseline", &a.baseline)?;
    s.flag("protocol", &a.protocol)?;
    s.flag("levels", &a.levels)?;
    s.flag("seed", &a.seed)?;
    s.flag("out", &path_str(&a.out))?;
    println!("{}", s.line());
    let data: Vec<DepthSample> = load_dataset(s.path("data")?)?;
    let model = predictor(&s)?;
    let protocol: Protocol = s.str("protocol").parse()?;
    let curve = robustness_sweep(model.as_ref(), &data, protocol, &parse_levels(s.str("levels"))?, s.get("seed")?)?;
    let text = format_curve(&curve);
    print!("{text}");
    if !s.str("out").is_empty() {
        fs::write(s.path("out")?, &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_grad_report(r: &GradReport) {
    println!("group\tmax_rel_err");
    for (g, e) in &r.groups {
        println!("{g}\t{e:.3e}");
    }
    println!("checked {} entries, max rel err {:.3e}", r.checked, r.max_error());
}

fn cmd_gradcheck(a: &GradcheckArgs, file: Option<&Path>) -> Result<ExitCode> {
    let network = a.target == "network";
    let op = if network {
        None
    } else {
        match a.target.parse::<OpName>() {
            Ok(op) => Some(op),
            Err(e) => {
                let names: Vec<_> = OpName::ALL.iter().map(|o| o.as_str()).collect();
                eprintln!("error\tusage\t{e}; expected network or one of {}", names.join(", "));
                return Ok(ExitCode::from(2));
            }
        }
    };
    let tol = if network { NETWORK_TOLERANCE } else { OP_TOLERANCE };
    let mut s = Settings::new(&[
        ("target", a.target.clone()),
        ("seed", "1".into()),
        ("tolerance", tol.to_string()),
        ("samples", "50".into()),
    ]);
    s.overlay_file(file)?;
    s.flag("seed", &a.seed)?;
    s.flag("tolerance", &a.tolerance)?;
    s.flag("samples", &a.samples)?;
    println!("{}", s.line());
    let seed: u64 = s.get("seed")?;
    let tol: f64 = s.get("tolerance")?;
    let report = match op {
        Some(op) => check_op(op, seed)?,
        None => check_network(seed, s.get("samples")?)?,
    };
    print_grad_report(&report);
    if report.passes(tol) {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        eprintln!("error\tgradcheck\tmax rel err {:.3e} is not below tolerance {tol:e}", report.max_error());
        Ok(ExitCode::from(1))
    }
}

fn cmd_selftest(a: &SelftestArgs, file: Option<&Path>) -> Result<ExitCode> {
    let mut s = Settings::new(&[("seed", "1".into())]);
    s.overlay_file(file)?;
    s.flag("seed", &a.seed)?;
    println!("{}", s.line());
    let rows = run_selftest(s.get("seed")?);
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} properties passed", rows.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error\tselftest\t{failed} of {} properties failed", rows.len());
        Ok(ExitCode::from(1))
    }
}
