//! Synthetic two-polarization GPR scenes with labeled point scatterers.
//!
//! Background: a surface reflection, a few gently undulating horizontal
//! layers and band-limited speckle (white noise filtered by the source
//! wavelet in time and a Gaussian along x), identical in statistics for every B-scan. The V channel is the
//! H channel delayed by a global lag and scaled, plus independent noise.
//!
//! Targets are point scatterers. The two-way travel time to a scatterer at
//! inline position `x0` and depth `d` is `t(x) = 2 sqrt(d^2 + (x - x0)^2) / v`,
//! the amplitude decays as `1 / r` (equal to the target amplitude at
//! `r = 10 cm`) and as a Gaussian of width `extent` across B-scans.
//!
//! Scene files are TOML; every key is optional:
//!
//! ```toml
//! seed = 7
//! t = 512
//! x = 256
//! y = 60
//! dt = 0.0117          # ns
//! dx = 0.4             # cm
//! dy = 0.8             # cm
//! velocity = 14.0      # cm/ns
//! frequency = 2.0      # GHz
//! surface_amplitude = 1.0
//! layers = 3
//! layer_amplitude = 0.3
//! speckle_amplitude = 0.05
//! speckle_correlation = 3.0   # traces
//! noise = 0.005
//! polarization_ratio = 0.8
//! polarization_lag = 3
//! train_bscans = 5
//! n_targets = 6        # random placement, ignored when [[target]] tables exist
//!
//! [[target]]
//! x0 = 51.2            # cm
//! y0 = 20.0            # cm
//! depth = 10.0         # cm
//! amplitude = 0.8
//! extent = 3           # B-scans
//! asymmetry = 0.8      # V / H amplitude
//! lag = 3              # samples
//! ```

use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::volume::{Acquisition, Dims, Polarization, ScanLabels, Volume};

/// Zero-phase Ricker wavelet with unit peak, centred on sample `(length - 1) / 2`.
pub fn ricker(frequency: f64, dt: f64, length: usize) -> Result<Vec<f64>> {
    if !(frequency > 0.0 && dt > 0.0 && frequency.is_finite() && dt.is_finite()) {
        return Err(Error::Spec(format!("ricker needs positive frequency and dt, got {frequency}, {dt}")));
    }
    let c = (length as f64 - 1.0) / 2.0;
    Ok((0..length).map(|i| ricker_at(frequency, (i as f64 - c) * dt)).collect())
}

#[inline]
fn ricker_at(frequency: f64, tau: f64) -> f64 {
    let a = (PI * frequency * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Range at which a target echo has its nominal amplitude, cm.
pub const REFERENCE_RANGE: f64 = 10.0;

/// Beyond this many periods from its centre the wavelet is below 1e-9.
const SUPPORT_PERIODS: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub dims: Dims,
    pub acquisition: Acquisition,
    /// Centre frequency, GHz.
    pub frequency: f64,
    /// Time of the surface reflection, ns.
    pub surface_time: f64,
    pub surface_amplitude: f64,
    pub layers: usize,
    pub layer_amplitude: f64,
    pub speckle_amplitude: f64,
    /// Gaussian correlation length of the speckle along x, traces.
    pub speckle_correlation: f64,
    /// Standard deviation of the independent per-channel noise.
    pub noise: f64,
    /// V / H amplitude ratio of the background.
    pub polarization_ratio: f64,
    /// Delay of V behind H, samples.
    pub polarization_lag: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            dims: Dims::new(512, 256, 60),
            acquisition: Acquisition::default(),
            frequency: 2.0,
            surface_time: 0.2,
            surface_amplitude: 1.0,
            layers: 3,
            layer_amplitude: 0.3,
            speckle_amplitude: 0.05,
            speckle_correlation: 3.0,
            noise: 0.005,
            polarization_ratio: 0.8,
            polarization_lag: 3,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let a = &self.acquisition;
        let positive = [a.dt, a.dx, a.dy, a.velocity, self.frequency];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Spec(format!(
                "sampling, velocity and frequency must be positive: {self:?}"
            )));
        }
        let amplitudes = [
            self.surface_amplitude,
            self.layer_amplitude,
            self.speckle_amplitude,
            self.noise,
            self.polarization_ratio,
            self.surface_time,
            self.speckle_correlation,
        ];
        if amplitudes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Spec("amplitudes, noise and surface time must be >= 0".into()));
        }
        let d = self.dims;
        if d.t < 2 || d.x == 0 || d.y == 0 {
            return Err(Error::Spec(format!("scene dimensions too small: {d:?}")));
        }
        if self.polarization_lag >= d.t {
            return Err(Error::Spec("polarization lag must be shorter than the record".into()));
        }
        Ok(())
    }

    pub fn record_time(&self) -> f64 {
        self.dims.t as f64 * self.acquisition.dt
    }

    fn wavelet_half_width(&self) -> usize {
        (SUPPORT_PERIODS / (self.frequency * self.acquisition.dt)).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Inline position, cm.
    pub x0: f64,
    /// Crossline position, cm.
    pub y0: f64,
    /// Depth, cm.
    pub depth: f64,
    /// Echo amplitude at a range of [`REFERENCE_RANGE`].
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Number of B-scans the target shows in.
    #[serde(default = "default_extent")]
    pub extent: usize,
    /// V / H amplitude ratio of the target echo.
    #[serde(default = "default_asymmetry")]
    pub asymmetry: f64,
    /// Delay of the V echo behind the H echo, samples.
    #[serde(default)]
    pub lag: usize,
}

fn default_amplitude() -> f64 {
    0.8
}

fn default_extent() -> usize {
    3
}

fn default_asymmetry() -> f64 {
    0.8
}

impl TargetSpec {
    /// Apex two-way travel time, ns.
    pub fn apex_time(&self, velocity: f64) -> f64 {
        2.0 * self.depth / velocity
    }

    pub fn travel_time(&self, x_cm: f64, velocity: f64) -> f64 {
        2.0 * self.depth.hypot(x_cm - self.x0) / velocity
    }

    /// Index of the B-scan through the scatterer.
    pub fn centre_scan(&self, dy: f64) -> usize {
        (self.y0 / dy).round().max(0.0) as usize
    }

    /// B-scans carrying the target echo.
    pub fn affected_scans(&self, dy: f64) -> Range<usize> {
        let c = self.centre_scan(dy);
        let lo = c.saturating_sub((self.extent.max(1) - 1) / 2);
        lo..lo + self.extent
    }

    fn validate(&self, spec: &SceneSpec) -> Result<()> {
        let finite = [self.x0, self.y0, self.depth, self.amplitude, self.asymmetry];
        if finite.iter().any(|v| !v.is_finite()) || self.depth <= 0.0 {
            return Err(Error::Spec(format!("target needs finite values and positive depth: {self:?}")));
        }
        if self.amplitude < 0.0 || self.asymmetry < 0.0 || self.y0 < 0.0 {
            return Err(Error::Spec(format!("negative target amplitude or position: {self:?}")));
        }
        if self.extent == 0 {
            return Err(Error::Spec("target extent must be at least one B-scan".into()));
        }
        let apex = self.apex_time(spec.acquisition.velocity);
        if apex > spec.record_time() {
            return Err(Error::Spec(format!(
                "apex at {apex:.3} ns is beyond the {:.3} ns record",
                spec.record_time()
            )));
        }
        let scans = self.affected_scans(spec.acquisition.dy);
        if scans.end > spec.dims.y {
            return Err(Error::Spec(format!(
                "target spans B-scans {}..{} of a {}-scan volume",
                scans.start + 1,
                scans.end,
                spec.dims.y
            )));
        }
        Ok(())
    }
}

fn trace_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Layer {
    time: f64,
    amplitude: f64,
    undulation: f64,
    period: f64,
    phase: f64,
}

fn draw_layers(spec: &SceneSpec) -> Vec<Layer> {
    let mut rng = trace_rng(spec.seed, 0);
    let record = spec.record_time();
    let margin = SUPPORT_PERIODS / spec.frequency;
    let top = spec.surface_time + 2.0 * margin;
    let bottom = (record - margin).max(top);
    let width = spec.dims.x as f64 * spec.acquisition.dx;
    (0..spec.layers)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Layer {
                time: rng.random_range(top..=bottom),
                amplitude: sign * spec.layer_amplitude * rng.random_range(0.5..=1.0),
                undulation: rng.random_range(0.0..=0.1),
                period: width * rng.random_range(0.5..=2.0),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

/// H and V background volumes. Deterministic in `spec.seed`; every B-scan
/// draws from its own random stream.
pub fn generate_background(spec: &SceneSpec) -> Result<(Volume, Volume)> {
    spec.validate()?;
    let d = spec.dims;
    let a = spec.acquisition;
    let layers = draw_layers(spec);
    let half = spec.wavelet_half_width();
    let kernel = ricker(spec.frequency, a.dt, 2 * half + 1)?;
    // speckle filtered by a unit-peak wavelet has std ~ |kernel|_2
    let speckle_gain = spec.speckle_amplitude / kernel.iter().map(|k| k * k).sum::<f64>().sqrt();
    let lag = spec.polarization_lag;
    let smooth = lateral_filter(spec.speckle_correlation);
    let reach = smooth.len() / 2;

    let slices = exec::map_indexed(
        d.y,
        || (),
        |_, y| {
            let mut rng = trace_rng(spec.seed, y as u64 + 1);
            let speckle = if spec.speckle_amplitude > 0.0 {
                let n = d.t + 2 * half;
                let white: Vec<f64> = (0..(d.x + 2 * reach) * n).map(|_| rng.sample(StandardNormal)).collect();
                let mut field = vec![0f64; d.x * d.t];
                let mut column = vec![0f64; n];
                for x in 0..d.x {
                    column.iter_mut().for_each(|c| *c = 0.0);
                    for (j, g) in smooth.iter().enumerate() {
                        let src = &white[(x + j) * n..(x + j + 1) * n];
                        column.iter_mut().zip(src).for_each(|(c, w)| *c += g * w);
                    }
                    for (t, f) in field[x * d.t..(x + 1) * d.t].iter_mut().enumerate() {
                        *f = speckle_gain * kernel.iter().zip(&column[t..]).map(|(k, c)| k * c).sum::<f64>();
                    }
                }
                field
            } else {
                Vec::new()
            };
            let mut h = vec![0f32; d.t * d.x];
            let mut v = vec![0f32; d.t * d.x];
            let mut clean = vec![0f64; d.t];
            for x in 0..d.x {
                let xc = x as f64 * a.dx;
                clean.iter_mut().for_each(|c| *c = 0.0);
                add_echo(&mut clean, a.dt, spec.frequency, spec.surface_time, spec.surface_amplitude);
                for l in &layers {
                    let t0 = l.time * (1.0 + l.undulation * (2.0 * PI * xc / l.period + l.phase).sin());
                    add_echo(&mut clean, a.dt, spec.frequency, t0, l.amplitude);
                }
                if !speckle.is_empty() {
                    clean.iter_mut().zip(&speckle[x * d.t..]).for_each(|(c, s)| *c += s);
                }
                let ht = &mut h[x * d.t..(x + 1) * d.t];
                let vt = &mut v[x * d.t..(x + 1) * d.t];
                for t in 0..d.t {
                    let nh: f64 = rng.sample(StandardNormal);
                    let nv: f64 = rng.sample(StandardNormal);
                    ht[t] = (clean[t] + spec.noise * nh) as f32;
                    let delayed = if t >= lag { spec.polarization_ratio * clean[t - lag] } else { 0.0 };
                    vt[t] = (delayed + spec.noise * nv) as f32;
                }
            }
            (h, v)
        },
    );
    let mut h = Vec::with_capacity(d.len());
    let mut v = Vec::with_capacity(d.len());
    for (hs, vs) in slices {
        h.extend_from_slice(&hs);
        v.extend_from_slice(&vs);
    }
    Ok((
        Volume::new(d, a, Polarization::H, h)?,
        Volume::new(d, a, Polarization::V, v)?,
    ))
}

/// Unit-energy Gaussian taps, so filtered white noise keeps unit variance.
fn lateral_filter(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let reach = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-reach..=reach)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm = taps.iter().map(|g| g * g).sum::<f64>().sqrt();
    taps.into_iter().map(|g| g / norm).collect()
}

/// Adds `amplitude * ricker(t - t0)` over the wavelet support.
fn add_echo(trace: &mut [f64], dt: f64, frequency: f64, t0: f64, amplitude: f64) {
    if amplitude == 0.0 {
        return;
    }
    let support = SUPPORT_PERIODS / frequency;
    let lo = ((t0 - support) / dt).floor().max(0.0) as usize;
    let hi = (((t0 + support) / dt).ceil().max(0.0) as usize + 1).min(trace.len());
    for (t, s) in trace.iter_mut().enumerate().take(hi).skip(lo) {
        *s += amplitude * ricker_at(frequency, t as f64 * dt - t0);
    }
}

/// Adds one scatterer to both channels and marks its B-scans in `labels`.
/// Returns the affected B-scans.
pub fn inject_target(
    v_h: &mut Volume,
    v_v: &mut Volume,
    labels: &mut ScanLabels,
    target: &TargetSpec,
    spec: &SceneSpec,
) -> Result<Range<usize>> {
    target.validate(spec)?;
    let d = spec.dims;
    if v_h.dims() != d || v_v.dims() != d || labels.len() != d.y {
        return Err(Error::shape(format!(
            "volumes {:?} / {:?} and {} labels do not match scene {d:?}",
            v_h.dims(),
            v_v.dims(),
            labels.len()
        )));
    }
    let a = spec.acquisition;
    let scans = target.affected_scans(a.dy);
    let centre = target.centre_scan(a.dy) as f64;
    let sigma = target.extent as f64;
    let shift = target.lag as f64 * a.dt;
    let mut echo = vec![0f64; d.t];
    for y in scans.clone() {
        let w = target.amplitude * (-(y as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp();
        for x in 0..d.x {
            let xc = x as f64 * a.dx;
            let r = target.depth.hypot(xc - target.x0);
            let t0 = target.travel_time(xc, a.velocity);
            let amp = w * REFERENCE_RANGE / r;

            echo.iter_mut().for_each(|e| *e = 0.0);
            add_echo(&mut echo, a.dt, spec.frequency, t0, amp);
            for (s, e) in v_h.trace_mut(x, y).iter_mut().zip(&echo) {
                *s += *e as f32;
            }
            echo.iter_mut().for_each(|e| *e = 0.0);
            add_echo(&mut echo, a.dt, spec.frequency, t0 + shift, amp * target.asymmetry);
            for (s, e) in v_v.trace_mut(x, y).iter_mut().zip(&echo) {
                *s += *e as f32;
            }
        }
        labels.set(y, true);
    }
    Ok(scans)
}

/// Training and test B-scans, zero-based and half-open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Plain-text key=value record with one-based inclusive ranges.
    pub fn to_manifest(&self) -> String {
        format!(
            "train_bscans={}..{}\ntest_bscans={}..{}\n",
            self.train.start + 1,
            self.train.end,
            self.test.start + 1,
            self.test.end
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub h: Volume,
    pub v: Volume,
    pub labels: ScanLabels,
    pub targets: Vec<TargetSpec>,
    pub split: Split,
}

pub fn generate_dataset(spec: &SceneSpec, targets: &[TargetSpec], train_bscans: usize) -> Result<Dataset> {
    spec.validate()?;
    if train_bscans >= spec.dims.y {
        return Err(Error::Spec(format!(
            "{train_bscans} training B-scans leave no test data in a {}-scan volume",
            spec.dims.y
        )));
    }
    for t in targets {
        let scans = t.affected_scans(spec.acquisition.dy);
        if scans.start < train_bscans {
            return Err(Error::Spec(format!(
                "target at y0 = {} cm reaches into the {train_bscans} training B-scans",
                t.y0
            )));
        }
    }
    let (mut h, mut v) = generate_background(spec)?;
    let mut labels = ScanLabels::zeros(spec.dims.y);
    for t in targets {
        inject_target(&mut h, &mut v, &mut labels, t, spec)?;
    }
    Ok(Dataset {
        h,
        v,
        labels,
        targets: targets.to_vec(),
        split: Split {
            train: 0..train_bscans,
            test: train_bscans..spec.dims.y,
        },
    })
}

/// Spreads `n` targets over the test B-scans, one per equal-width slot,
/// with random inline position, depth (5-15 cm) and amplitude.
pub fn place_targets(spec: &SceneSpec, n: usize, train_bscans: usize, extent: usize, seed: u64) -> Result<Vec<TargetSpec>> {
    spec.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let test = spec.dims.y.saturating_sub(train_bscans);
    let slot = test / n;
    if slot < extent + 1 {
        return Err(Error::Spec(format!(
            "{n} targets of extent {extent} do not fit in {test} test B-scans"
        )));
    }
    let a = spec.acquisition;
    let width = spec.dims.x as f64 * a.dx;
    let max_depth = (spec.record_time() * a.velocity / 2.0).min(15.0);
    let mut rng = trace_rng(seed, u64::MAX);
    Ok((0..n)
        .map(|i| {
            let centre = train_bscans + i * slot + slot / 2;
            TargetSpec {
                x0: rng.random_range(0.25 * width..=0.75 * width),
                y0: centre as f64 * a.dy,
                depth: rng.random_range(5.0f64.min(max_depth)..=max_depth),
                amplitude: rng.random_range(0.6..=1.0),
                extent,
                asymmetry: rng.random_range(0.6..=1.0),
                lag: spec.polarization_lag,
            }
        })
        .collect())
}

/// A scene file: acquisition, background, split and targets.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub t: usize,
    pub x: usize,
    pub y: usize,
    pub dt: f64,
    pub dx: f64,
    pub dy: f64,
    pub velocity: f64,
    pub frequency: f64,
    pub surface_time: f64,
    pub surface_amplitude: f64,
    pub layers: usize,
    pub layer_amplitude: f64,
    pub speckle_amplitude: f64,
    pub speckle_correlation: f64,
    pub noise: f64,
    pub polarization_ratio: f64,
    pub polarization_lag: usize,
    pub train_bscans: usize,
    pub n_targets: usize,
    pub target_extent: usize,
    pub target: Vec<TargetSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig::from_spec(&SceneSpec::default())
    }
}

impl SceneConfig {
    pub fn from_spec(s: &SceneSpec) -> Self {
        SceneConfig {
            seed: s.seed,
            t: s.dims.t,
            x: s.dims.x,
            y: s.dims.y,
            dt: s.acquisition.dt,
            dx: s.acquisition.dx,
            dy: s.acquisition.dy,
            velocity: s.acquisition.velocity,
            frequency: s.frequency,
            surface_time: s.surface_time,
            surface_amplitude: s.surface_amplitude,
            layers: s.layers,
            layer_amplitude: s.layer_amplitude,
            speckle_amplitude: s.speckle_amplitude,
            speckle_correlation: s.speckle_correlation,
            noise: s.noise,
            polarization_ratio: s.polarization_ratio,
            polarization_lag: s.polarization_lag,
            train_bscans: 5,
            n_targets: 6,
            target_extent: 3,
            target: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SceneConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            dims: Dims::new(self.t, self.x, self.y),
            acquisition: Acquisition {
                dt: self.dt,
                dx: self.dx,
                dy: self.dy,
                velocity: self.velocity,
            },
            frequency: self.frequency,
            surface_time: self.surface_time,
            surface_amplitude: self.surface_amplitude,
            layers: self.layers,
            layer_amplitude: self.layer_amplitude,
            speckle_amplitude: self.speckle_amplitude,
            speckle_correlation: self.speckle_correlation,
            noise: self.noise,
            polarization_ratio: self.polarization_ratio,
            polarization_lag: self.polarization_lag,
            seed: self.seed,
        }
    }

    /// Explicit targets if any are listed, otherwise `n_targets` placed at random.
    pub fn targets(&self) -> Result<Vec<TargetSpec>> {
        if !self.target.is_empty() {
            return Ok(self.target.clone());
        }
        place_targets(&self.spec(), self.n_targets, self.train_bscans, self.target_extent, self.seed)
    }

    pub fn generate(&self) -> Result<Dataset> {
        generate_dataset(&self.spec(), &self.targets()?, self.train_bscans)
    }
}
