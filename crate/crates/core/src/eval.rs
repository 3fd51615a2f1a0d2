//! ROC curves and AUC over per-B-scan scores.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::ScanLabels;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// `f64::INFINITY` for the (0, 0) endpoint, `f64::NEG_INFINITY` for (1, 1).
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "threshold,fpr,tpr")?;
        for p in &self.points {
            writeln!(w, "{},{:?},{:?}", fmt_threshold(p.threshold), p.fpr, p.tpr)?;
        }
        writeln!(w, "auc,{:?}", self.auc)?;
        Ok(())
    }

    /// Largest TPR reachable with FPR no greater than `max_fpr`.
    pub fn tpr_at(&self, max_fpr: f64) -> f64 {
        self.points
            .iter()
            .filter(|p| p.fpr <= max_fpr)
            .fold(0.0, |m, p| m.max(p.tpr))
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t:?}")
    }
}

fn class_counts(scores: &[f64], truth: &ScanLabels) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Evaluation(format!("score {s} is not a number")));
    }
    let pos = truth.count_positive();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(format!(
            "ground truth needs both classes, found {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Sweeps the threshold over every distinct score, largest first, with the
/// strict `score > threshold` rule.
pub fn roc(scores: &[f64], truth: &ScanLabels) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one (pos, neg) pair
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truth.get(order[i]) {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        // everything scoring s is now above the next lower threshold
        let threshold = order.get(i).map_or(f64::NEG_INFINITY, |&j| scores[j]);
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(RocCurve { points, auc })
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting ½.
pub fn auc_oracle(scores: &[f64], truth: &ScanLabels) -> Result<f64> {
    let (pos, neg) = class_counts(scores, truth)?;
    let positives: Vec<f64> = (0..scores.len()).filter(|&i| truth.get(i)).map(|i| scores[i]).collect();
    let negatives: Vec<f64> = (0..scores.len()).filter(|&i| !truth.get(i)).map(|i| scores[i]).collect();
    let mut wins2: u128 = 0;
    for &sp in &positives {
        for &sn in &negatives {
            wins2 += if sp > sn {
                2
            } else if sp == sn {
                1
            } else {
                0
            };
        }
    }
    Ok(wins2 as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    /// Set when a rate had an empty denominator and was reported as 0.
    pub undefined_rate: bool,
}

pub fn confusion(predicted: &ScanLabels, truth: &ScanLabels) -> Result<Confusion> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in predicted.values().iter().zip(truth.values()) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let rate = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    Ok(Confusion {
        tp,
        fp,
        tn,
        fn_,
        tpr: rate(tp, fn_),
        fpr: rate(fp, tn),
        undefined_rate: tp + fn_ == 0 || fp + tn == 0,
    })
}
