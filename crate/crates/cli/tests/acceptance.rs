//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The end-to-end criterion trains on the full default scene at stride 4 and
//! dominates the runtime.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gpr_anomaly::autoencoder::{build_model, ArchitectureSpec, Dimensionality, Family};
use gpr_anomaly::blocking::{aggregate_mask, plan_blocks, BlockGeometry};
use gpr_anomaly::eval::{auc_oracle, roc};
use gpr_anomaly::nn::{conv2d_forward, deconv2d_forward, mse_loss, Activation, ConvLayer, ConvMode, Scratch, Tensor};
use gpr_anomaly::pipeline::{halves, operating_point, run, RunConfig};
use gpr_anomaly::preprocess::{default_max_lag, estimate_lag, fuse_volumes};
use gpr_anomaly::synth::ricker;
use gpr_anomaly::{Dims, ScanLabels, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("gradient correctness", gradients),
        ("adjoint property", adjoint),
        ("shape contract", shapes),
        ("aggregation oracle", aggregation),
        ("auc oracle", auc),
        ("alignment recovery", alignment),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    for (name, f) in criteria {
        report(name, f());
    }
    let [e2e, convergence, zero_fpr] = end_to_end();
    report("end-to-end regression", e2e);
    report("convergence", convergence);
    report("zero-fpr operating point", zero_fpr);
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

const H: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn central<F: FnMut(f64) -> f64>(mut f: F, v: f64) -> f64 {
    (f(v + H) - f(v - H)) / (2.0 * H)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn layer_error(mode: ConvMode, act: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let s = rng.random_range(1..=2);
    let (h, w) = (rng.random_range(3..=7), rng.random_range(3..=7));
    let mut layer = ConvLayer::<f64>::init(mode, cin, cout, (k, k), (s, s), act, &mut rng).unwrap();
    for b in layer.bias.data_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let x = uniform(&mut rng, &[cin, h, w]);
    let g = uniform(&mut rng, &layer.output_shape(h, w));
    let objective = |l: &ConvLayer<f64>, x: &Tensor<f64>| l.forward(x, &mut Scratch::new()).unwrap().dot(&g).unwrap();

    let mut scratch = Scratch::new();
    let y = layer.forward(&x, &mut scratch).unwrap();
    let grads = layer.backward(&x, &y, &g, true, &mut scratch).unwrap();
    let gi = grads.input.unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let n = central(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[i] = v;
                objective(&layer, &xp)
            },
            x.data()[i],
        );
        worst = worst.max(rel_err(gi.data()[i], n));
    }
    for i in 0..layer.kernel.len() {
        let n = central(
            |v| {
                let mut l = layer.clone();
                l.kernel.data_mut()[i] = v;
                objective(&l, &x)
            },
            layer.kernel.data()[i],
        );
        worst = worst.max(rel_err(grads.kernel.data()[i], n));
    }
    for i in 0..layer.bias.len() {
        let n = central(
            |v| {
                let mut l = layer.clone();
                l.bias.data_mut()[i] = v;
                objective(&l, &x)
            },
            layer.bias.data()[i],
        );
        worst = worst.max(rel_err(grads.bias.data()[i], n));
    }
    worst
}

fn mse_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..30);
    let p = uniform(&mut rng, &[n]);
    let t = uniform(&mut rng, &[n]);
    let (_, g) = mse_loss(&p, &t).unwrap();
    (0..n)
        .map(|i| {
            let num = central(
                |v| {
                    let mut q = p.clone();
                    q.data_mut()[i] = v;
                    mse_loss(&q, &t).unwrap().0
                },
                p.data()[i],
            );
            rel_err(g.data()[i], num)
        })
        .fold(0.0, f64::max)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for mode in [ConvMode::Conv, ConvMode::Transposed] {
        for act in [Activation::None, Activation::Leaky, Activation::Tanh] {
            for seed in 0..20 {
                worst = worst.max(layer_error(mode, act, 1000 * n as u64 + seed));
            }
            n += 1;
        }
    }
    for seed in 0..20 {
        worst = worst.max(mse_error(seed));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && secs < 30.0,
        format!("max relative error {worst:.2e} over 140 instances, {secs:.1} s"),
    )
}

fn adjoint() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let (kh, kw) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let s = rng.random_range(1..=3);
        let (hs, ws) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let kernel = uniform(&mut rng, &[cout, cin, kh, kw]);
        let conv =
            ConvLayer::from_parts(ConvMode::Conv, kernel.clone(), Tensor::zeros(&[cout]), (s, s), Activation::None)
                .unwrap();
        let deconv =
            ConvLayer::from_parts(ConvMode::Transposed, kernel, Tensor::zeros(&[cin]), (s, s), Activation::None)
                .unwrap();
        let x = uniform(&mut rng, &[cin, hs * s, ws * s]);
        let y = uniform(&mut rng, &[cout, hs, ws]);
        let lhs = conv2d_forward(&x, &conv).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&deconv2d_forward(&y, &deconv).unwrap()).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(worst < 1e-10, format!("max |<Kx,y> - <x,K'y>| = {worst:.2e} over 100 draws"))
}

fn shapes() -> Outcome {
    let mut ok = true;
    let mut sizes = Vec::new();
    for family in [Family::A1, Family::A2, Family::A3] {
        for dims in [Dimensionality::TwoD, Dimensionality::ThreeD] {
            let spec = ArchitectureSpec::new(family, dims, (32, 32)).unwrap();
            let model = build_model::<f32>(spec, 0).unwrap();
            let x = Tensor::zeros(&spec.input_shape());
            let h = model.encode(&x).unwrap();
            let y = model.decode(&h).unwrap();
            let expected = match family {
                Family::A1 => 64,
                Family::A2 => 32,
                Family::A3 => 16,
            };
            ok &= h.len() == expected && y.shape() == x.shape();
            sizes.push(format!("{family}-{dims}={}", h.len()));
        }
    }
    outcome(ok, format!("hidden sizes {}, outputs match inputs: {ok}", sizes.join(" ")))
}

/// Accumulates every block score onto its samples and divides by the count.
fn naive_mask(dims: Dims, g: BlockGeometry, scores: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let mut acc = vec![0.0; dims.len()];
    let mut cnt = vec![0u32; dims.len()];
    let [bt, bx, by] = g.size;
    let [st, sx, sy] = g.stride;
    let mut i = 0;
    for oy in (0..=dims.y - by).step_by(sy) {
        for ox in (0..=dims.x - bx).step_by(sx) {
            for ot in (0..=dims.t - bt).step_by(st) {
                for y in oy..oy + by {
                    for x in ox..ox + bx {
                        for t in ot..ot + bt {
                            acc[dims.index(t, x, y)] += scores[i];
                            cnt[dims.index(t, x, y)] += 1;
                        }
                    }
                }
                i += 1;
            }
        }
    }
    let vals = acc.iter().zip(&cnt).map(|(a, &c)| if c == 0 { 0.0 } else { a / c as f64 }).collect();
    (vals, cnt)
}

fn aggregation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (bt, bx) = (rng.random_range(1..6), rng.random_range(1..6));
        let by = if rng.random_bool(0.5) { 1 } else { 3 };
        let g = BlockGeometry::new(
            [bt, bx, by],
            [rng.random_range(1..=bt), rng.random_range(1..=bx), rng.random_range(1..=by.min(2))],
        )
        .unwrap();
        let dims = Dims::new(bt + rng.random_range(0..9), bx + rng.random_range(0..9), by + rng.random_range(0..5));
        let grid = plan_blocks(dims, g).unwrap();
        let scores: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..5.0)).collect();
        let mask = aggregate_mask(dims, &grid, &scores).unwrap();
        let (vals, cnt) = naive_mask(dims, g, &scores);
        if mask.values != vals || mask.counts != cnt {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 100 random geometries differ from the oracle"))
}

fn auc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let scores: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.5) { rng.random_range(0..6) as f64 / 5.0 } else { rng.random() }).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let truth = ScanLabels::new(labels).unwrap();
        worst = worst.max((roc(&scores, &truth).unwrap().auc - auc_oracle(&scores, &truth).unwrap()).abs());
    }
    let truth = ScanLabels::new(vec![0, 0, 1, 1, 0, 1]).unwrap();
    let good = [0.1, 0.2, 0.8, 0.9, 0.3, 0.7];
    let bad: Vec<f64> = good.iter().map(|s| 1.0 - s).collect();
    let perfect = roc(&good, &truth).unwrap().auc;
    let inverted = roc(&bad, &truth).unwrap().auc;
    let n = 4000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let truth = ScanLabels::from_bools((0..n).map(|_| rng.random_bool(0.5)));
    let random = roc(&scores, &truth).unwrap().auc;
    outcome(
        worst < 1e-12 && perfect == 1.0 && inverted == 0.0 && (random - 0.5).abs() < 0.05,
        format!(
            "max |trapezoid - pairwise| = {worst:.1e} over 100 sets; fixtures {perfect:?} / {inverted:?} / {random:.3}"
        ),
    )
}

fn band_limited(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w = ricker(2.0, 0.0117, 129).unwrap();
    let white: Vec<f64> = (0..n + w.len()).map(|_| rng.sample(StandardNormal)).collect();
    (0..n).map(|t| w.iter().zip(&white[t..]).map(|(a, b)| a * b).sum()).collect()
}

fn alignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let (n, trials, snr_db) = (512, 1000, 20.0);
    let mut hits = 0;
    for _ in 0..trials {
        let lag = rng.random_range(-20i32..=20) as isize;
        let long = band_limited(n + 64, &mut rng);
        let power = long.iter().map(|v| v * v).sum::<f64>() / long.len() as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        let mut noise = || sigma * rng.sample::<f64, _>(StandardNormal);
        let h: Vec<f32> = (0..n).map(|t| (long[t + 32] + noise()) as f32).collect();
        let v: Vec<f32> = (0..n).map(|t| (long[(t as isize + 32 - lag) as usize] + noise()) as f32).collect();
        if (estimate_lag(&h, &v, default_max_lag(n)).unwrap().tau_hat - lag).abs() <= 1 {
            hits += 1;
        }
    }
    outcome(
        hits * 100 >= trials * 99,
        format!("{hits} of {trials} lags within one sample at {snr_db} dB"),
    )
}

const SMALL_SCENE: &str = "seed = 5\nt = 128\nx = 96\ny = 20\ndt = 0.03\ntrain_bscans = 4\nn_targets = 2\n";

fn cli(threads: usize, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_gpr-anomaly"))
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .expect("spawn");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Trains, scores and evaluates the small scene in `dir`; returns the model,
/// mask and ROC file bytes.
fn pipeline(dir: &Path, threads: usize) -> [Vec<u8>; 3] {
    let p = |n: &str| dir.join(n).to_str().unwrap().to_owned();
    fs::write(dir.join("scene.toml"), SMALL_SCENE).unwrap();
    cli(threads, &["simulate", "--config", &p("scene.toml"), "--out-h", &p("h"), "--out-v", &p("v"), "--labels", &p("l")]);
    cli(threads, &["preprocess", "--h", &p("h"), "--v", &p("v"), "--out", &p("f")]);
    cli(
        threads,
        &[
            "train", "--data", &p("f"), "--labels", &p("l"), "--block", "32", "--stride", "8", "--n-bscans", "4",
            "--epochs-max", "4", "--max-blocks", "512", "--seed", "3", "--out", &p("model"),
        ],
    );
    cli(
        threads,
        &["detect", "--model", &p("model"), "--data", &p("f"), "--gamma", "1", "--stride", "8", "--out", &p("mask"), "--csv", &p("s")],
    );
    cli(threads, &["eval", "--scores", &p("s"), "--labels", &p("l"), "--roc-out", &p("roc"), "--skip", "4"]);
    ["model", "mask", "roc"].map(|f| fs::read(dir.join(f)).unwrap())
}

fn auc_of(roc_csv: &[u8]) -> f64 {
    let text = String::from_utf8_lossy(roc_csv);
    let line = text.lines().find(|l| l.starts_with("auc,")).unwrap();
    line[4..].parse().unwrap()
}

fn determinism() -> Outcome {
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    let a = pipeline(dirs[0].path(), 1);
    let b = pipeline(dirs[1].path(), 1);
    let c = pipeline(dirs[2].path(), 4);
    let same = a == b;
    let diff = (auc_of(&a[2]) - auc_of(&c[2])).abs();
    outcome(
        same && diff < 1e-9,
        format!("--threads 1 outputs bitwise identical: {same}; |AUC(1) - AUC(4)| = {diff:.1e}"),
    )
}

fn end_to_end() -> [Outcome; 3] {
    let scene = SceneConfig::default();
    let ds = scene.generate().unwrap();
    let fused = fuse_volumes(&ds.h, &ds.v, default_max_lag(scene.t)).unwrap().volume.normalize();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());

    let start = Instant::now();
    let cfg3 = RunConfig::default();
    let three = run::<f32>(&fused, &ds.labels, ds.split.test.clone(), &cfg3).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cfg2 = RunConfig { dims: Dimensionality::TwoD, ..RunConfig::default() };
    let two = run::<f32>(&fused, &ds.labels, ds.split.test.clone(), &cfg2).unwrap();

    // Scoring and training scale with the worker count, so the 10 minute
    // budget on four cores is 40 core-minutes on fewer.
    let budget = 600.0 * 4.0 / cores.min(4) as f64;
    let (a3, a2) = (three.roc.auc, two.roc.auc);
    let e2e = outcome(
        a3 >= 0.90 && a3 >= a2 - 0.02 && secs < budget,
        format!(
            "AUC 3D {a3:.4}, 2D {a2:.4}; 3D run {secs:.0} s on {cores} core(s), budget {budget:.0} s"
        ),
    );

    let r = &three.report;
    let first = r.history.first().map_or(f64::NAN, |e| e.val_loss);
    let best = r.best_val_loss().unwrap_or(f64::NAN);
    let best_epoch = r.best_epoch.unwrap_or(usize::MAX);
    let convergence = outcome(
        best_epoch <= 30 && best < 0.25 * first,
        format!(
            "best epoch {best_epoch} of {} run, best/epoch-1 validation loss {:.3}",
            r.history.len(),
            best / first
        ),
    );

    let (cal, held) = halves(ds.split.test.clone());
    let op = operating_point(&three.mask.per_bscan_max, &ds.labels, cal.clone(), held.clone(), 0.0).unwrap();
    let zero_fpr = outcome(
        op.held_out.tpr >= 0.85,
        format!(
            "gamma {:.4} from B-scans {}..={}; held-out B-scans {}..={} TPR {:.3} FPR {:.3}",
            op.gamma,
            cal.start + 1,
            cal.end,
            held.start + 1,
            held.end,
            op.held_out.tpr,
            op.held_out.fpr
        ),
    );
    [e2e, convergence, zero_fpr]
}
