use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gpr_anomaly::anomaly::{classify, read_scores_csv, score_volume, select_threshold};
use gpr_anomaly::autoencoder::{build_model, train, AutoencoderModel, Dimensionality, Family, TrainConfig};
use gpr_anomaly::pipeline::{geometry_for, restrict, training_blocks};
use gpr_anomaly::preprocess::{default_max_lag, fuse_volumes};
use gpr_anomaly::{exec, eval, ScanLabels, SceneConfig, Volume};

mod experiment;
mod manifest;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "gpr-anomaly", version, about = "Autoencoder anomaly detection in GPR volumes")]
struct Cli {
    /// Worker threads for block scoring and training (0 = all cores).
    #[arg(long, global = true, env = "GPR_ANOMALY_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled two-polarization scene.
    Simulate(SimulateArgs),
    /// Align and fuse H/V volumes, then scale to [-1, 1].
    Preprocess(PreprocessArgs),
    /// Train an autoencoder on the leading background B-scans.
    Train(TrainArgs),
    /// Score a volume and write the anomaly mask.
    Detect(DetectArgs),
    /// ROC and AUC of per-B-scan scores.
    Eval(EvalArgs),
    /// Pick a threshold for a target false-positive rate.
    Calibrate(CalibrateArgs),
    /// Run a parameter sweep and write AUC tables.
    Experiment(experiment::ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene file; defaults are used for missing keys or without a file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_h: PathBuf,
    #[arg(long)]
    out_v: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Overrides the scene seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    h: PathBuf,
    #[arg(long)]
    v: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Largest lag searched, samples (default T/4).
    #[arg(long)]
    max_lag: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "a3")]
    arch: Family,
    #[arg(long, default_value = "3d")]
    dims: Dimensionality,
    #[arg(long, default_value_t = 64)]
    block: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    #[arg(long, default_value_t = 5)]
    n_bscans: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs_max: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Training blocks drawn from the lattice (0 = all).
    #[arg(long, default_value_t = 2048)]
    max_blocks: usize,
    /// Loss history CSV (default `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// Predicted labels (`y,label`).
    #[arg(long)]
    predicted: Option<PathBuf>,
    /// Directory for one PGM image per B-scan.
    #[arg(long)]
    pgm_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    roc_out: PathBuf,
    /// Leave out the first N B-scans (the training scans).
    #[arg(long, default_value_t = 0)]
    skip: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    target_fpr: f64,
    /// First calibration B-scan, one-based.
    #[arg(long, default_value_t = 1)]
    from: usize,
    /// Last calibration B-scan, one-based inclusive (default: last).
    #[arg(long)]
    to: Option<usize>,
    /// File receiving the `gamma,<value>` line.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    match exec::with_threads(threads, move || dispatch(cli.command, threads)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command, threads: usize) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => cmd_train(a, threads),
        Command::Detect(a) => detect(a, threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Experiment(a) => experiment::run(a, threads),
    }
}

fn load_volume(path: &Path) -> Result<Volume> {
    Volume::load(path).with_context(|| format!("reading volume {}", path.display()))
}

fn load_labels(path: &Path) -> Result<ScanLabels> {
    ScanLabels::load(path).with_context(|| format!("reading labels {}", path.display()))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scene = match &a.config {
        Some(p) => SceneConfig::load(p).with_context(|| format!("reading scene {}", p.display()))?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = a.seed {
        scene.seed = seed;
    }
    let ds = scene.generate()?;
    ds.h.save(&a.out_h)?;
    ds.v.save(&a.out_v)?;
    ds.labels.save(&a.labels)?;

    let mut m = Manifest::new("simulate");
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    m.set("seed", scene.seed);
    m.set("dims", format!("{}x{}x{}", scene.t, scene.x, scene.y));
    for (i, t) in ds.targets.iter().enumerate() {
        m.set(
            &format!("target.{}", i + 1),
            format!(
                "x0={} y0={} depth={} amplitude={} extent={} asymmetry={} lag={}",
                t.x0, t.y0, t.depth, t.amplitude, t.extent, t.asymmetry, t.lag
            ),
        );
    }
    for line in ds.split.to_manifest().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(k, v);
        }
    }
    m.output("h", &a.out_h)?;
    m.output("v", &a.out_v)?;
    m.output("labels", &a.labels)?;
    m.write_beside(&a.out_h)?;
    println!(
        "wrote {} B-scans, {} positive, {} targets",
        ds.labels.len(),
        ds.labels.count_positive(),
        ds.targets.len()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let h = load_volume(&a.h)?;
    let v = load_volume(&a.v)?;
    let max_lag = a.max_lag.unwrap_or_else(|| default_max_lag(h.dims().t));
    let fusion = fuse_volumes(&h, &v, max_lag)?;
    let out = fusion.volume.normalize();
    out.save(&a.out)?;

    let mut lags = fusion.lags.clone();
    lags.sort_unstable();
    let median = lags[lags.len() / 2];
    let mut m = Manifest::new("preprocess");
    m.input("h", &a.h)?;
    m.input("v", &a.v)?;
    m.set("max_lag", max_lag);
    m.set("median_lag", median);
    m.output("fused", &a.out)?;
    m.write_beside(&a.out)?;
    println!("fused {} traces, median lag {median}", fusion.lags.len());
    Ok(())
}

fn cmd_train(a: TrainArgs, threads: usize) -> Result<()> {
    let data = load_volume(&a.data)?;
    let labels = load_labels(&a.labels)?;
    if labels.len() != data.dims().y {
        bail!("{} labels for {} B-scans", labels.len(), data.dims().y);
    }
    if a.n_bscans > labels.len() {
        bail!("--n-bscans {} exceeds the {} B-scans in the volume", a.n_bscans, labels.len());
    }
    if let Some(y) = (0..a.n_bscans).find(|&y| labels.get(y)) {
        bail!("training B-scan {} is labeled as containing an object", y + 1);
    }
    let spec = gpr_anomaly::ArchitectureSpec::new(a.arch, a.dims, (a.block, a.block))?;
    let geometry = geometry_for(a.dims, a.block, a.stride)?;
    let cfg = TrainConfig {
        n_training_bscans: a.n_bscans,
        epochs_max: a.epochs_max,
        batch_size: a.batch_size,
        patience: a.patience,
        max_blocks: (a.max_blocks > 0).then_some(a.max_blocks),
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut model = build_model::<f32>(spec, a.seed)?;
    let report = if a.epochs_max == 0 {
        None
    } else {
        let blocks = training_blocks::<f32>(&data, geometry, a.n_bscans, cfg.max_blocks, a.seed)?;
        Some(train(&mut model, &blocks, &cfg)?)
    };
    model.save(&a.out)?;

    let history = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    let csv = report.as_ref().map(|r| r.to_csv()).unwrap_or_else(|| "epoch,train_loss,val_loss\n".into());
    std::fs::write(&history, csv)?;

    let mut m = Manifest::new("train");
    m.input("data", &a.data)?;
    m.input("labels", &a.labels)?;
    m.set("arch", a.arch);
    m.set("dims", a.dims);
    m.set("block", a.block);
    m.set("stride", a.stride);
    m.set("n_bscans", a.n_bscans);
    m.set("seed", a.seed);
    m.set("epochs_max", a.epochs_max);
    m.set("batch_size", a.batch_size);
    m.set("patience", a.patience);
    m.set("max_blocks", a.max_blocks);
    m.set("min_rel_improvement", cfg.min_rel_improvement);
    m.set("threads", threads);
    if let Some(r) = &report {
        m.set("n_train", r.n_train);
        m.set("n_val", r.n_val);
        m.set("epochs_run", r.history.len());
        m.set("best_epoch", r.best_epoch.map_or("none".into(), |e| e.to_string()));
        m.set("initial_val_loss", format!("{:?}", r.initial_val_loss));
        if let Some(b) = r.best_val_loss() {
            m.set("best_val_loss", format!("{b:?}"));
        }
    }
    m.output("model", &a.out)?;
    m.output("history", &history)?;
    m.write_beside(&a.out)?;
    match &report {
        Some(r) => println!(
            "trained {} epochs, best epoch {}, val loss {:.6}",
            r.history.len(),
            r.best_epoch.map_or("none".into(), |e| e.to_string()),
            r.best_val_loss().unwrap_or(f64::NAN)
        ),
        None => println!("saved untrained model"),
    }
    Ok(())
}

fn detect(a: DetectArgs, threads: usize) -> Result<()> {
    let model = AutoencoderModel::<f32>::load(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let data = load_volume(&a.data)?;
    let spec = model.spec;
    if spec.input.0 != spec.input.1 {
        bail!("model expects non-square blocks {:?}", spec.input);
    }
    let geometry = geometry_for(spec.dims, spec.input.0, a.stride)?;
    let det = gpr_anomaly::DetectorConfig::new(a.gamma, geometry)?;
    let mask = score_volume(&model, &data, &det.geometry)?;
    let uncovered = mask.field.uncovered_count();
    if uncovered > 0 {
        eprintln!("warning: {uncovered} samples are not covered by any block and score 0");
    }
    mask.to_volume(&data)?.save(&a.out)?;
    mask.write_scores_csv(&a.csv)?;
    let predicted = classify(&mask.per_bscan_max, det.gamma);
    if let Some(p) = &a.predicted {
        predicted.save(p)?;
    }
    if let Some(dir) = &a.pgm_dir {
        std::fs::create_dir_all(dir)?;
        let peak = mask.per_bscan_max.iter().fold(0.0f64, |m, &v| m.max(v));
        for y in 0..data.dims().y {
            mask.write_pgm(y, peak, dir.join(format!("bscan_{:04}.pgm", y + 1)))?;
        }
    }

    let mut m = Manifest::new("detect");
    m.input("model", &a.model)?;
    m.input("data", &a.data)?;
    m.set("gamma", format!("{:?}", a.gamma));
    m.set("stride", a.stride);
    m.set("blocks", mask.grid.len());
    m.set("uncovered_samples", uncovered);
    m.set("threads", threads);
    m.output("mask", &a.out)?;
    m.output("scores", &a.csv)?;
    if let Some(p) = &a.predicted {
        m.output("predicted", p)?;
    }
    m.write_beside(&a.out)?;
    println!(
        "scored {} blocks, {} of {} B-scans above gamma",
        mask.grid.len(),
        predicted.count_positive(),
        predicted.len()
    );
    Ok(())
}

fn scores_and_labels(scores: &Path, labels: &Path) -> Result<(Vec<f64>, ScanLabels)> {
    let s = read_scores_csv(scores).with_context(|| format!("reading scores {}", scores.display()))?;
    let l = load_labels(labels)?;
    if s.len() != l.len() {
        bail!("{} scores for {} labels", s.len(), l.len());
    }
    Ok((s, l))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (scores, labels) = scores_and_labels(&a.scores, &a.labels)?;
    if a.skip >= scores.len() {
        bail!("--skip {} leaves no B-scans", a.skip);
    }
    let (s, l) = restrict(&scores, &labels, a.skip..scores.len())?;
    let curve = eval::roc(&s, &l)?;
    curve.write_csv(&a.roc_out)?;

    let mut m = Manifest::new("eval");
    m.input("scores", &a.scores)?;
    m.input("labels", &a.labels)?;
    m.set("skip", a.skip);
    m.set("auc", format!("{:?}", curve.auc));
    m.output("roc", &a.roc_out)?;
    m.write_beside(&a.roc_out)?;
    println!("auc,{:?}", curve.auc);
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let (scores, labels) = scores_and_labels(&a.scores, &a.labels)?;
    let to = a.to.unwrap_or(scores.len());
    if a.from == 0 || a.from > to || to > scores.len() {
        bail!("calibration range {}..={} outside 1..={}", a.from, to, scores.len());
    }
    let (s, l) = restrict(&scores, &labels, a.from - 1..to)?;
    let gamma = select_threshold(&s, &l, a.target_fpr)?;
    std::fs::write(&a.out, format!("gamma,{gamma:?}\n"))?;

    let mut m = Manifest::new("calibrate");
    m.input("scores", &a.scores)?;
    m.input("labels", &a.labels)?;
    m.set("target_fpr", a.target_fpr);
    m.set("from", a.from);
    m.set("to", to);
    m.set("gamma", format!("{gamma:?}"));
    m.output("gamma", &a.out)?;
    m.write_beside(&a.out)?;
    println!("gamma,{gamma:?}");
    Ok(())
}
