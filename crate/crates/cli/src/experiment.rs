//! Parameter sweeps producing AUC tables.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use gpr_anomaly::autoencoder::{Dimensionality, Family, TrainConfig};
use gpr_anomaly::pipeline::{evaluate, fit, RunConfig};
use gpr_anomaly::preprocess::{default_max_lag, fuse_volumes};
use gpr_anomaly::{SceneConfig, ScanLabels, Volume};

use crate::manifest::Manifest;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    /// Block size x stride.
    Blocks,
    /// Number of training B-scans.
    Bscans,
    /// Architecture family x dimensionality.
    Arch,
    /// Train on one scene, test on another.
    Cross,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    sweep: Sweep,
    /// Scene file (scene A for the cross sweep).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene B for the cross sweep.
    #[arg(long)]
    cross_config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "32,64")]
    blocks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,16")]
    strides: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    n_bscans: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "a1,a2,a3")]
    archs: Vec<Family>,
    #[arg(long, value_delimiter = ',', default_value = "2d,3d")]
    dims: Vec<Dimensionality>,
    /// Architecture for the sweeps that fix it.
    #[arg(long, default_value = "a3")]
    arch: Family,
    #[arg(long, default_value = "3d")]
    dim: Dimensionality,
    #[arg(long, default_value_t = 64)]
    block: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs_max: usize,
    #[arg(long, default_value_t = 2048)]
    max_blocks: usize,
}

struct Scene {
    data: Volume,
    labels: ScanLabels,
    train_bscans: usize,
}

fn prepare(config: Option<&PathBuf>) -> Result<Scene> {
    let scene = match config {
        Some(p) => SceneConfig::load(p).with_context(|| format!("reading scene {}", p.display()))?,
        None => SceneConfig::default(),
    };
    let ds = scene.generate()?;
    let fused = fuse_volumes(&ds.h, &ds.v, default_max_lag(scene.t))?;
    Ok(Scene {
        data: fused.volume.normalize(),
        labels: ds.labels,
        train_bscans: scene.train_bscans,
    })
}

impl ExperimentArgs {
    fn run_config(&self, family: Family, dims: Dimensionality, block: usize, stride: usize, n: usize) -> RunConfig {
        RunConfig {
            family,
            dims,
            block,
            stride,
            train: TrainConfig {
                n_training_bscans: n,
                epochs_max: self.epochs_max,
                max_blocks: (self.max_blocks > 0).then_some(self.max_blocks),
                ..TrainConfig::default()
            },
            seed: self.seed,
        }
    }
}

/// AUC of a model trained on `train` and scored on the test B-scans of `test`.
fn auc(train: &Scene, test: &Scene, cfg: &RunConfig) -> Result<f64> {
    let (model, _) = fit::<f32>(&train.data, cfg)?;
    let (_, curve) = evaluate(&model, &test.data, &test.labels, test.train_bscans..test.labels.len(), cfg.geometry()?)?;
    Ok(curve.auc)
}

pub fn run(a: ExperimentArgs, threads: usize) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let scene = prepare(a.config.as_ref())?;
    let mut table = String::new();
    let name = match a.sweep {
        Sweep::Blocks => {
            table.push_str("block,stride,auc\n");
            for &b in &a.blocks {
                for &s in &a.strides {
                    let cfg = a.run_config(a.arch, a.dim, b, s, scene.train_bscans);
                    let v = auc(&scene, &scene, &cfg)?;
                    writeln!(table, "{b},{s},{v:?}")?;
                    eprintln!("block {b} stride {s}: auc {v:.4}");
                }
            }
            "blocks"
        }
        Sweep::Bscans => {
            table.push_str("n_bscans,auc\n");
            for &n in &a.n_bscans {
                if n == 0 || n > scene.train_bscans {
                    bail!("N = {n} outside 1..={} training B-scans", scene.train_bscans);
                }
                let cfg = a.run_config(a.arch, a.dim, a.block, a.stride, n);
                let v = auc(&scene, &scene, &cfg)?;
                writeln!(table, "{n},{v:?}")?;
                eprintln!("N {n}: auc {v:.4}");
            }
            "bscans"
        }
        Sweep::Arch => {
            table.push_str("arch");
            for d in &a.dims {
                write!(table, ",auc_{d}")?;
            }
            table.push('\n');
            for &f in &a.archs {
                table.push_str(&f.to_string());
                for &d in &a.dims {
                    let cfg = a.run_config(f, d, a.block, a.stride, scene.train_bscans);
                    let v = auc(&scene, &scene, &cfg)?;
                    write!(table, ",{v:?}")?;
                    eprintln!("{f} {d}: auc {v:.4}");
                }
                table.push('\n');
            }
            "arch"
        }
        Sweep::Cross => {
            let Some(other) = a.cross_config.as_ref() else {
                bail!("the cross sweep needs --cross-config");
            };
            let scenes = [("a", &scene), ("b", &prepare(Some(other))?)];
            table.push_str("train,test_a,test_b\n");
            for (tn, train) in scenes {
                table.push_str(tn);
                for (sn, test) in scenes {
                    let cfg = a.run_config(a.arch, a.dim, a.block, a.stride, train.train_bscans);
                    let v = auc(train, test, &cfg)?;
                    write!(table, ",{v:?}")?;
                    eprintln!("train {tn} test {sn}: auc {v:.4}");
                }
                table.push('\n');
            }
            "cross"
        }
    };
    let path = a.out.join(format!("{name}.csv"));
    std::fs::write(&path, &table)?;

    let mut m = Manifest::new("experiment");
    m.set("sweep", name);
    if let Some(p) = &a.config {
        m.input("config", p)?;
    }
    if let Some(p) = &a.cross_config {
        m.input("cross_config", p)?;
    }
    let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    m.set("blocks", list(&a.blocks));
    m.set("strides", list(&a.strides));
    m.set("n_bscans", list(&a.n_bscans));
    m.set("archs", a.archs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","));
    m.set("dims", a.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
    m.set("arch", a.arch);
    m.set("dim", a.dim);
    m.set("block", a.block);
    m.set("stride", a.stride);
    m.set("seed", a.seed);
    m.set("epochs_max", a.epochs_max);
    m.set("max_blocks", a.max_blocks);
    m.set("threads", threads);
    m.output("table", &path)?;
    m.write_beside(&path)?;
    print!("{table}");
    Ok(())
}
