//! End-to-end runs: training-block selection, training, scoring and evaluation.

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anomaly::{classify, score_volume, select_threshold, AnomalyMask};
use crate::autoencoder::{build_model, train, ArchitectureSpec, AutoencoderModel, Dimensionality, Family, TrainConfig, TrainReport};
use crate::blocking::{extract_block, plan_blocks, BlockGeometry};
use crate::error::{Error, Result};
use crate::eval::{confusion, roc, Confusion, RocCurve};
use crate::nn::{Scalar, Tensor};
use crate::volume::{Dims, ScanLabels, Volume};

/// Block geometry matching an architecture: `side x side x 1` for 2D,
/// `side x side x 3` for 3D.
pub fn geometry_for(dims: Dimensionality, side: usize, step: usize) -> Result<BlockGeometry> {
    BlockGeometry::square(side, step, dims.channels())
}

/// The first `n` B-scans of `v` as a volume of their own.
pub fn leading_bscans(v: &Volume, n: usize) -> Result<Volume> {
    let d = v.dims();
    if n == 0 || n > d.y {
        return Err(Error::Data(format!("cannot take {n} of {} B-scans", d.y)));
    }
    let sub = Dims::new(d.t, d.x, n);
    Volume::new(sub, v.acquisition(), v.polarization(), v.data()[..sub.len()].to_vec())
}

/// Blocks from the first `n_bscans` B-scans. With `max_blocks` set, a
/// seeded subset of that size is drawn without replacement and returned in
/// lattice order.
pub fn training_blocks<T: Scalar>(
    v: &Volume,
    geometry: BlockGeometry,
    n_bscans: usize,
    max_blocks: Option<usize>,
    seed: u64,
) -> Result<Vec<Tensor<T>>> {
    let sub = leading_bscans(v, n_bscans)?;
    let grid = plan_blocks(sub.dims(), geometry)?;
    let mut chosen: Vec<usize> = match max_blocks {
        Some(m) if m < grid.len() => sample(&mut ChaCha8Rng::seed_from_u64(seed), grid.len(), m).into_vec(),
        _ => (0..grid.len()).collect(),
    };
    chosen.sort_unstable();
    chosen.into_iter().map(|i| extract_block(&sub, &grid, i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub dims: Dimensionality,
    pub block: usize,
    pub stride: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: Family::A3,
            dims: Dimensionality::ThreeD,
            block: 64,
            stride: 4,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        ArchitectureSpec::new(self.family, self.dims, (self.block, self.block))
    }

    pub fn geometry(&self) -> Result<BlockGeometry> {
        geometry_for(self.dims, self.block, self.stride)
    }
}

/// Builds and trains a model on the leading background B-scans of `data`.
pub fn fit<T: Scalar>(data: &Volume, cfg: &RunConfig) -> Result<(AutoencoderModel<T>, TrainReport)> {
    let mut model = build_model::<T>(cfg.architecture()?, cfg.seed)?;
    let blocks = training_blocks::<T>(
        data,
        cfg.geometry()?,
        cfg.train.n_training_bscans,
        cfg.train.max_blocks,
        cfg.seed,
    )?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let report = train(&mut model, &blocks, &train_cfg)?;
    Ok((model, report))
}

/// Scores and labels restricted to `scans`.
pub fn restrict(scores: &[f64], labels: &ScanLabels, scans: Range<usize>) -> Result<(Vec<f64>, ScanLabels)> {
    if scores.len() != labels.len() || scans.end > scores.len() || scans.start > scans.end {
        return Err(Error::shape(format!(
            "B-scans {scans:?} of {} scores / {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok((scores[scans.clone()].to_vec(), labels.select(scans)))
}

/// Threshold chosen on `calibration`, applied to `held_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub gamma: f64,
    pub calibration: Confusion,
    pub held_out: Confusion,
}

pub fn operating_point(
    scores: &[f64],
    labels: &ScanLabels,
    calibration: Range<usize>,
    held_out: Range<usize>,
    target_fpr: f64,
) -> Result<OperatingPoint> {
    let (cs, cl) = restrict(scores, labels, calibration)?;
    let (hs, hl) = restrict(scores, labels, held_out)?;
    let gamma = select_threshold(&cs, &cl, target_fpr)?;
    Ok(OperatingPoint {
        gamma,
        calibration: confusion(&classify(&cs, gamma), &cl)?,
        held_out: confusion(&classify(&hs, gamma), &hl)?,
    })
}

/// Splits the test B-scans into a calibration half and a held-out half.
pub fn halves(test: Range<usize>) -> (Range<usize>, Range<usize>) {
    let mid = test.start + (test.end - test.start) / 2;
    (test.start..mid, mid..test.end)
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub model: AutoencoderModel<T>,
    pub report: TrainReport,
    pub mask: AnomalyMask,
    /// ROC over the test B-scans.
    pub roc: RocCurve,
}

/// Trains on `data`'s leading B-scans, scores the whole volume and
/// evaluates on `test`.
pub fn run<T: Scalar>(data: &Volume, labels: &ScanLabels, test: Range<usize>, cfg: &RunConfig) -> Result<RunOutcome<T>> {
    let (model, report) = fit::<T>(data, cfg)?;
    let (mask, roc) = evaluate(&model, data, labels, test, cfg.geometry()?)?;
    Ok(RunOutcome {
        model,
        report,
        mask,
        roc,
    })
}

pub fn evaluate<T: Scalar>(
    model: &AutoencoderModel<T>,
    data: &Volume,
    labels: &ScanLabels,
    test: Range<usize>,
    geometry: BlockGeometry,
) -> Result<(AnomalyMask, RocCurve)> {
    let mask = score_volume(model, data, &geometry)?;
    let (s, l) = restrict(&mask.per_bscan_max, labels, test)?;
    let curve = roc(&s, &l)?;
    Ok((mask, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Acquisition, Polarization};

    fn ramp(d: Dims) -> Volume {
        let data = (0..d.len()).map(|i| i as f32).collect();
        Volume::new(d, Acquisition::default(), Polarization::Fused, data).unwrap()
    }

    #[test]
    fn leading_scans_are_a_prefix() {
        let v = ramp(Dims::new(4, 3, 5));
        let s = leading_bscans(&v, 2).unwrap();
        assert_eq!(s.dims(), Dims::new(4, 3, 2));
        assert_eq!(s.data(), &v.data()[..24]);
        assert!(leading_bscans(&v, 6).is_err());
    }

    #[test]
    fn training_blocks_come_from_leading_scans() {
        let v = ramp(Dims::new(8, 8, 6));
        let g = BlockGeometry::new([4, 4, 3], [2, 2, 1]).unwrap();
        let all = training_blocks::<f64>(&v, g, 4, None, 0).unwrap();
        assert_eq!(all.len(), 3 * 3 * 2);
        let limit = (8 * 8 * 4) as f64;
        assert!(all.iter().all(|b| b.data().iter().all(|&s| s < limit)));
        let some = training_blocks::<f64>(&v, g, 4, Some(5), 1).unwrap();
        assert_eq!(some.len(), 5);
        assert!(some.iter().all(|b| all.contains(b)));
        assert_eq!(some, training_blocks::<f64>(&v, g, 4, Some(5), 1).unwrap());
    }

    #[test]
    fn calibration_halves() {
        assert_eq!(halves(5..60), (5..32, 32..60));
        let labels = ScanLabels::new(vec![0, 1, 0, 0, 1, 0]).unwrap();
        let scores = [0.1, 0.9, 0.3, 0.2, 0.8, 0.25];
        let op = operating_point(&scores, &labels, 0..3, 3..6, 0.0).unwrap();
        assert_eq!(op.gamma, 0.3);
        assert_eq!(op.held_out.tpr, 1.0);
        assert_eq!(op.held_out.fpr, 0.0);
    }
}
