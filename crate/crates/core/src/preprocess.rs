//! Per-trace alignment of the H and V polarizations and their fusion.
//!
//! The lag convention is "positive when V arrives later": if
//! `a_v(t) = a_h(t - k)` the estimated lag is `k`, and fusion advances the V
//! trace by the lag before averaging, `out(t) = (a_h(t) + a_v(t + lag)) / 2`.
//! Samples shifted in from outside the record are zero.

use crate::error::{Error, Result};
use crate::exec;
use crate::volume::{Polarization, Volume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentResult {
    /// Lag of the V trace relative to the H trace, in samples.
    pub tau_hat: isize,
    /// Cross-correlation value at `tau_hat`.
    pub chi_max: f64,
}

/// Default lag search bound for traces of `t` samples.
pub fn default_max_lag(t: usize) -> usize {
    t / 4
}

/// Unnormalized cross-correlation `sum_t a_h(t) * a_v(t + lag)`, zero-filled.
pub fn cross_correlation(a_h: &[f32], a_v: &[f32], lag: isize) -> f64 {
    let n = a_h.len() as isize;
    let start = 0.max(-lag);
    let end = n.min(n - lag);
    (start..end)
        .map(|t| f64::from(a_h[t as usize]) * f64::from(a_v[(t + lag) as usize]))
        .sum()
}

/// Lag in `[-max_lag, max_lag]` maximizing the cross-correlation.
///
/// Ties go to the smallest `|lag|`, then to the negative lag.
pub fn estimate_lag(a_h: &[f32], a_v: &[f32], max_lag: usize) -> Result<AlignmentResult> {
    if a_h.len() != a_v.len() {
        return Err(Error::shape(format!(
            "A-scan lengths differ: {} vs {}",
            a_h.len(),
            a_v.len()
        )));
    }
    let t = a_h.len();
    if t < 2 {
        return Err(Error::shape(format!("A-scans need at least 2 samples, got {t}")));
    }
    if max_lag >= t {
        return Err(Error::shape(format!("max lag {max_lag} must be below trace length {t}")));
    }
    let mut best = AlignmentResult {
        tau_hat: 0,
        chi_max: cross_correlation(a_h, a_v, 0),
    };
    for k in 1..=max_lag as isize {
        for lag in [-k, k] {
            let chi = cross_correlation(a_h, a_v, lag);
            if chi > best.chi_max {
                best = AlignmentResult {
                    tau_hat: lag,
                    chi_max: chi,
                };
            }
        }
    }
    Ok(best)
}

/// `(a_h(t) + a_v(t + tau_hat)) / 2`, computed in double precision.
pub fn fuse_ascans(a_h: &[f32], a_v: &[f32], tau_hat: isize) -> Result<Vec<f32>> {
    if a_h.len() != a_v.len() {
        return Err(Error::shape(format!(
            "A-scan lengths differ: {} vs {}",
            a_h.len(),
            a_v.len()
        )));
    }
    let mut out = vec![0.0; a_h.len()];
    fuse_into(a_h, a_v, tau_hat, &mut out);
    Ok(out)
}

fn fuse_into(a_h: &[f32], a_v: &[f32], tau_hat: isize, out: &mut [f32]) {
    let n = a_h.len() as isize;
    for (t, o) in out.iter_mut().enumerate() {
        let s = t as isize + tau_hat;
        let v = if (0..n).contains(&s) {
            f64::from(a_v[s as usize])
        } else {
            0.0
        };
        *o = ((f64::from(a_h[t]) + v) / 2.0) as f32;
    }
}

/// Fused volume plus the lag estimated for every trace (x fastest, then y).
#[derive(Debug, Clone)]
pub struct Fusion {
    pub volume: Volume,
    pub lags: Vec<isize>,
}

/// Aligns and averages every (x, y) trace pair independently.
pub fn fuse_volumes(v_h: &Volume, v_v: &Volume, max_lag: usize) -> Result<Fusion> {
    let dims = v_h.dims();
    if v_v.dims() != dims {
        return Err(Error::shape(format!(
            "polarization volumes differ in size: {:?} vs {:?}",
            dims,
            v_v.dims()
        )));
    }
    if v_v.acquisition() != v_h.acquisition() {
        return Err(Error::shape("polarization volumes have different acquisition metadata"));
    }
    let traces = dims.x * dims.y;
    let fused = exec::map_indexed(
        traces,
        || (),
        |_, i| -> Result<(isize, Vec<f32>)> {
            let (x, y) = (i % dims.x, i / dims.x);
            let a_h = v_h.trace(x, y);
            let a_v = v_v.trace(x, y);
            let lag = estimate_lag(a_h, a_v, max_lag)?.tau_hat;
            let mut out = vec![0.0; dims.t];
            fuse_into(a_h, a_v, lag, &mut out);
            Ok((lag, out))
        },
    );
    let mut data = Vec::with_capacity(dims.len());
    let mut lags = Vec::with_capacity(traces);
    for item in fused {
        let (lag, trace) = item?;
        lags.push(lag);
        data.extend(trace);
    }
    let volume = Volume::new(dims, v_h.acquisition(), Polarization::Fused, data)?;
    Ok(Fusion { volume, lags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Acquisition, Dims};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shift(a: &[f32], k: isize) -> Vec<f32> {
        let n = a.len() as isize;
        (0..n)
            .map(|t| {
                let s = t - k;
                if (0..n).contains(&s) {
                    a[s as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Exhaustive oracle: scan every admissible lag with an independent loop.
    fn brute_force_lag(a_h: &[f32], a_v: &[f32], max_lag: usize) -> isize {
        let n = a_h.len();
        let mut best: Option<(f64, isize)> = None;
        let mut lags: Vec<isize> = (-(max_lag as isize)..=max_lag as isize).collect();
        lags.sort_by_key(|&l| (l.abs(), l > 0));
        for lag in lags {
            let mut chi = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if j as isize - i as isize == lag {
                        chi += f64::from(a_h[i]) * f64::from(a_v[j]);
                    }
                }
            }
            if best.is_none_or(|(b, _)| chi > b) {
                best = Some((chi, lag));
            }
        }
        best.unwrap().1
    }

    fn pulse(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        let mut a: Vec<f32> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let c = rng.random_range(n / 3..2 * n / 3);
        a[c] += 3.0;
        a
    }

    #[test]
    fn identical_traces_have_zero_lag() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = pulse(40, &mut rng);
        assert_eq!(estimate_lag(&a, &a, 10).unwrap().tau_hat, 0);
    }

    #[test]
    fn impulses_five_and_nine() {
        let mut a_h = vec![0.0; 16];
        let mut a_v = vec![0.0; 16];
        a_h[5] = 1.0;
        a_v[9] = 1.0;
        let r = estimate_lag(&a_h, &a_v, 8).unwrap();
        assert_eq!(r.tau_hat, 4);
        assert_eq!(r.chi_max, 1.0);
    }

    #[test]
    fn delayed_copy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in -6isize..=6 {
            let a_h = pulse(32, &mut rng);
            let a_v = shift(&a_h, k);
            let got = estimate_lag(&a_h, &a_v, 8).unwrap().tau_hat;
            assert_eq!(got, brute_force_lag(&a_h, &a_v, 8));
            assert_eq!(got, k);
        }
    }

    #[test]
    fn ties_prefer_small_then_negative() {
        // all-zero traces: every lag ties at 0
        let z = vec![0.0; 8];
        assert_eq!(estimate_lag(&z, &z, 3).unwrap().tau_hat, 0);
        // symmetric peaks at -2 and +2 only
        let mut a_h = vec![0.0; 9];
        a_h[4] = 1.0;
        let mut a_v = vec![0.0; 9];
        a_v[2] = 1.0;
        a_v[6] = 1.0;
        assert_eq!(estimate_lag(&a_h, &a_v, 3).unwrap().tau_hat, -2);
    }

    #[test]
    fn lag_errors() {
        assert!(estimate_lag(&[1.0, 2.0], &[1.0], 0).is_err());
        assert!(estimate_lag(&[1.0], &[1.0], 0).is_err());
        assert!(estimate_lag(&[1.0, 2.0], &[1.0, 2.0], 2).is_err());
        assert!(fuse_ascans(&[1.0, 2.0], &[1.0], 0).is_err());
    }

    #[test]
    fn fuse_basic_cases() {
        let a = vec![1.0, -2.0, 0.5];
        assert_eq!(fuse_ascans(&a, &a, 0).unwrap(), a);
        let z = vec![0.0; 3];
        assert_eq!(fuse_ascans(&z, &a, 0).unwrap(), vec![0.5, -1.0, 0.25]);
    }

    #[test]
    fn fused_impulse_pair_collapses_to_h_position() {
        let k = 4;
        let mut a_h = vec![0.0; 16];
        let mut a_v = vec![0.0; 16];
        a_h[5] = 2.0;
        a_v[5 + k] = 1.0;
        let out = fuse_ascans(&a_h, &a_v, k as isize).unwrap();
        // direct evaluation: out(5) = (2 + 1) / 2, zero elsewhere
        let mut expected = vec![0.0; 16];
        expected[5] = 1.5;
        assert_eq!(out, expected);
    }

    fn volume(dims: Dims, data: Vec<f32>, pol: Polarization) -> Volume {
        Volume::new(dims, Acquisition::default(), pol, data).unwrap()
    }

    #[test]
    fn fusing_identical_volumes_returns_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = Dims::new(24, 3, 2);
        let data: Vec<f32> = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = volume(dims, data, Polarization::H);
        let f = fuse_volumes(&v, &v, 6).unwrap();
        assert_eq!(f.volume.data(), v.data());
        assert_eq!(f.volume.polarization(), Polarization::Fused);
    }

    #[test]
    fn shifted_volume_recovers_per_trace_lag() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = Dims::new(48, 4, 3);
        let mut h = Vec::new();
        let mut v = Vec::new();
        for _ in 0..dims.x * dims.y {
            let mut a = pulse(dims.t, &mut rng);
            // keep the tail empty so the shift loses nothing
            for s in &mut a[dims.t - 3..] {
                *s = 0.0;
            }
            v.extend(shift(&a, 3));
            h.extend(a);
        }
        let vh = volume(dims, h, Polarization::H);
        let vv = volume(dims, v, Polarization::V);
        let f = fuse_volumes(&vh, &vv, 12).unwrap();
        assert!(f.lags.iter().all(|&l| l == 3));
        for (a, b) in f.volume.data().iter().zip(vh.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_volumes_rejected() {
        let a = volume(Dims::new(4, 2, 1), vec![0.0; 8], Polarization::H);
        let b = volume(Dims::new(4, 1, 1), vec![0.0; 4], Polarization::V);
        assert!(matches!(fuse_volumes(&a, &b, 1), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn fusion_is_linear(
            a in proptest::collection::vec(-5.0f32..5.0, 12),
            b in proptest::collection::vec(-5.0f32..5.0, 12),
            c in proptest::collection::vec(-5.0f32..5.0, 12),
            lag in -4isize..=4,
        ) {
            let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = fuse_ascans(&sum, &c, lag).unwrap();
            let r1 = fuse_ascans(&a, &c, lag).unwrap();
            let r2 = fuse_ascans(&b, &vec![0.0; 12], lag).unwrap();
            for i in 0..12 {
                prop_assert!((lhs[i] - (r1[i] + r2[i])).abs() < 1e-4);
            }
        }

        #[test]
        fn fusion_commutes_with_trace_permutation(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = Dims::new(16, 3, 2);
            let h: Vec<f32> = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f32> = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = dims.x * dims.y;
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permute = |d: &[f32]| -> Vec<f32> {
                perm.iter().flat_map(|&p| d[p * dims.t..(p + 1) * dims.t].to_vec()).collect()
            };
            let fused = fuse_volumes(&volume(dims, h.clone(), Polarization::H),
                                     &volume(dims, v.clone(), Polarization::V), 4).unwrap();
            let fused_then_perm = permute(fused.volume.data());
            let perm_then_fused = fuse_volumes(&volume(dims, permute(&h), Polarization::H),
                                               &volume(dims, permute(&v), Polarization::V), 4).unwrap();
            prop_assert_eq!(fused_then_perm, perm_then_fused.volume.data().to_vec());
        }
    }
}
