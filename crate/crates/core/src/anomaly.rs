//! Hidden-space anomaly scores, volumetric masks and B-scan classification.
//!
//! A block `v` is scored by encoding it, decoding the hidden vector and
//! encoding the reconstruction again: `e = |E(v) - E(D(E(v)))|`. Blocks the
//! autoencoder has learned to reproduce map back onto (nearly) the same
//! hidden vector; blocks unlike the training soil do not.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::autoencoder::AutoencoderModel;
use crate::blocking::{aggregate_mask, extract_block_into, plan_blocks, BlockGeometry, BlockGrid, MaskField};
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{Scalar, Scratch, Tensor};
use crate::volume::{Polarization, ScanLabels, Volume};

/// Threshold and block geometry used at deployment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub gamma: f64,
    pub geometry: BlockGeometry,
}

impl DetectorConfig {
    pub fn new(gamma: f64, geometry: BlockGeometry) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::Config(format!("threshold must be finite and >= 0, got {gamma}")));
        }
        geometry.validate()?;
        Ok(DetectorConfig { gamma, geometry })
    }
}

/// Euclidean distance between the hidden vectors of a block and of its reconstruction.
pub fn anomaly_score<T: Scalar>(model: &AutoencoderModel<T>, block: &Tensor<T>) -> Result<f64> {
    anomaly_score_with(model, block, &mut Scratch::new())
}

pub fn anomaly_score_with<T: Scalar>(
    model: &AutoencoderModel<T>,
    block: &Tensor<T>,
    scratch: &mut Scratch<T>,
) -> Result<f64> {
    let hidden = model.encode_with(block, scratch)?;
    let recon = model.decode_with(&hidden, scratch)?;
    let rehidden = model.encode_with(&recon, scratch)?;
    hidden.distance(&rehidden)
}

/// Checks that `geometry` produces blocks the model accepts.
pub fn check_geometry<T>(model: &AutoencoderModel<T>, geometry: &BlockGeometry) -> Result<()> {
    let [bt, bx, by] = geometry.size;
    if (bt, bx) != model.spec.input || by != model.spec.channels() {
        return Err(Error::Geometry(format!(
            "blocks {bt}x{bx}x{by} do not fit a model expecting {}x{}x{}",
            model.spec.input.0,
            model.spec.input.1,
            model.spec.channels()
        )));
    }
    Ok(())
}

/// Scores every block of `grid`, in block order.
pub fn score_blocks<T: Scalar>(model: &AutoencoderModel<T>, v: &Volume, grid: &BlockGrid) -> Result<Vec<f64>> {
    check_geometry(model, &grid.geometry)?;
    let shape = grid.block_shape();
    let n: usize = shape.iter().product();
    let scores = exec::map_indexed(
        grid.len(),
        || (Scratch::new(), vec![T::zero(); n]),
        |(scratch, buf), i| -> Result<f64> {
            extract_block_into(v, grid, i, buf)?;
            let block = Tensor::new(shape.to_vec(), std::mem::take(buf))?;
            let e = anomaly_score_with(model, &block, scratch);
            *buf = block.into_data();
            e
        },
    );
    scores.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMask {
    pub grid: BlockGrid,
    pub block_scores: Vec<f64>,
    pub field: MaskField,
    /// `max_{t,x} M(t, x, y)` for every B-scan.
    pub per_bscan_max: Vec<f64>,
}

impl AnomalyMask {
    pub fn from_scores(grid: BlockGrid, block_scores: Vec<f64>) -> Result<Self> {
        let field = aggregate_mask(grid.dims, &grid, &block_scores)?;
        let per_bscan_max = (0..grid.dims.y)
            .map(|y| field.slice(y).iter().fold(0.0f64, |m, &v| m.max(v)))
            .collect();
        Ok(AnomalyMask {
            grid,
            block_scores,
            field,
            per_bscan_max,
        })
    }

    /// The mask as a single-precision GPRV volume tagged as fused.
    pub fn to_volume(&self, like: &Volume) -> Result<Volume> {
        let data = self.field.values.iter().map(|&v| v as f32).collect();
        Volume::new(self.field.dims, like.acquisition(), Polarization::Fused, data)
    }

    /// `y,max_score` lines with one-based `y`.
    pub fn write_scores_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_scores_csv(&self.per_bscan_max, path)
    }

    /// 8-bit binary PGM of B-scan `y`, rows = t, columns = x, scaled by `peak`.
    pub fn write_pgm(&self, y: usize, peak: f64, path: impl AsRef<Path>) -> Result<()> {
        let d = self.field.dims;
        if y >= d.y {
            return Err(Error::Index { index: y, len: d.y });
        }
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", d.x, d.t)?;
        let mut row = Vec::with_capacity(d.x);
        for t in 0..d.t {
            row.clear();
            for x in 0..d.x {
                let v = if peak > 0.0 { self.field.get(t, x, y) / peak } else { 0.0 };
                row.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            w.write_all(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_scores_csv(scores: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (y, s) in scores.iter().enumerate() {
        writeln!(w, "{},{:?}", y + 1, s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    crate::volume::read_indexed_csv(path)?
        .into_iter()
        .map(|(y, v)| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("score for B-scan {y} is not a number: {v}")))
        })
        .collect()
}

/// Plans blocks, scores them and aggregates the mask.
pub fn score_volume<T: Scalar>(
    model: &AutoencoderModel<T>,
    v: &Volume,
    geometry: &BlockGeometry,
) -> Result<AnomalyMask> {
    check_geometry(model, geometry)?;
    let grid = plan_blocks(v.dims(), *geometry)?;
    let scores = score_blocks(model, v, &grid)?;
    AnomalyMask::from_scores(grid, scores)
}

/// `l̂(y) = 1` iff the B-scan maximum strictly exceeds `gamma`.
pub fn classify(per_bscan_max: &[f64], gamma: f64) -> ScanLabels {
    ScanLabels::from_bools(per_bscan_max.iter().map(|&m| m > gamma))
}

/// Smallest threshold whose false-positive rate on the calibration B-scans
/// is at most `target_fpr`. At `target_fpr = 0` this is the largest
/// negative score.
pub fn select_threshold(per_bscan_max: &[f64], truth: &ScanLabels, target_fpr: f64) -> Result<f64> {
    if per_bscan_max.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            per_bscan_max.len(),
            truth.len()
        )));
    }
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::Calibration(format!("target FPR {target_fpr} outside [0, 1]")));
    }
    let mut negatives: Vec<f64> = per_bscan_max
        .iter()
        .zip(truth.values())
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if negatives.is_empty() {
        return Err(Error::Calibration("calibration set has no negative B-scans".into()));
    }
    negatives.sort_by(|a, b| b.total_cmp(a));
    // at most `allowed` negatives may exceed the threshold
    let allowed = (target_fpr * negatives.len() as f64 + 1e-9).floor() as usize;
    Ok(negatives.get(allowed).copied().unwrap_or(0.0).max(0.0))
}
