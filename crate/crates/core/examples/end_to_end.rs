//! Simulates the default scene, trains a detector on its first B-scans and
//! prints the test AUC.
//!
//! `cargo run --release --example end_to_end -- [a3|a2|a1] [3d|2d] [stride]`

use std::time::Instant;

use gpr_anomaly::pipeline::{halves, operating_point, run, RunConfig};
use gpr_anomaly::preprocess::{default_max_lag, fuse_volumes};
use gpr_anomaly::SceneConfig;

fn main() -> gpr_anomaly::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::default();
    if let Some(f) = args.first() {
        cfg.family = f.parse()?;
    }
    if let Some(d) = args.get(1) {
        cfg.dims = d.parse()?;
    }
    if let Some(s) = args.get(2) {
        cfg.stride = s.parse().expect("stride");
    }

    let start = Instant::now();
    let scene = SceneConfig::default();
    let ds = scene.generate()?;
    let fused = fuse_volumes(&ds.h, &ds.v, default_max_lag(scene.t))?.volume.normalize();
    println!("scene {:.1?}", start.elapsed());

    let out = run::<f32>(&fused, &ds.labels, ds.split.test.clone(), &cfg)?;
    for e in &out.report.history {
        println!("epoch {:>3} train {:.5} val {:.5}", e.epoch, e.train_loss, e.val_loss);
    }
    println!("initial val {:.5}, best epoch {:?}", out.report.initial_val_loss, out.report.best_epoch);
    let (cal, held) = halves(ds.split.test.clone());
    let op = operating_point(&out.mask.per_bscan_max, &ds.labels, cal, held, 0.0)?;
    for (y, s) in out.mask.per_bscan_max.iter().enumerate() {
        println!("{:>3} {} {:.4}", y + 1, ds.labels.values()[y], s);
    }
    println!(
        "auc {:.4}  gamma {:.4}  held-out tpr {:.3} fpr {:.3}  total {:.1?}",
        out.roc.auc,
        op.gamma,
        op.held_out.tpr,
        op.held_out.fpr,
        start.elapsed()
    );
    Ok(())
}
