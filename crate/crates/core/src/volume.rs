//! GPR volumes, B-scans and per-B-scan labels, plus the GPRV file format.
//!
//! A volume `V(t, x, y)` is stored with `t` fastest, then `x`, then `y`, so
//! every A-scan (trace) is a contiguous run of `T` samples. Indices in this
//! API are zero-based; B-scan `y` here is B-scan `y + 1` in the usual
//! one-based survey numbering, and the labels file uses the one-based form.
//!
//! # GPRV layout (little-endian)
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 4 | magic `"GPRV"` |
//! | 4 | 2 | version `u16` = 1 |
//! | 6 | 1 | polarization `u8` (0 = H, 1 = V, 2 = fused) |
//! | 7 | 1 | reserved, 0 |
//! | 8 | 12 | `T`, `X`, `Y` as `u32` |
//! | 20 | 32 | `dt` (ns), `dx` (cm), `dy` (cm), velocity (cm/ns) as `f64` |
//! | 52 | 4·T·X·Y | samples as `f32`, t fastest, then x, then y |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const GPRV_MAGIC: &[u8; 4] = b"GPRV";
pub const GPRV_VERSION: u16 = 1;
pub const GPRV_HEADER_LEN: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    H,
    V,
    /// Aligned and averaged H/V data (also used for anomaly masks).
    Fused,
}

impl Polarization {
    pub fn code(self) -> u8 {
        match self {
            Polarization::H => 0,
            Polarization::V => 1,
            Polarization::Fused => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Polarization::H),
            1 => Ok(Polarization::V),
            2 => Ok(Polarization::Fused),
            other => Err(Error::Format(format!("unknown polarization code {other}"))),
        }
    }
}

/// Volume extent in samples along (t, x, y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub t: usize,
    pub x: usize,
    pub y: usize,
}

impl Dims {
    pub fn new(t: usize, x: usize, y: usize) -> Self {
        Dims { t, x, y }
    }

    pub fn len(&self) -> usize {
        self.t * self.x * self.y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, x: usize, y: usize) -> usize {
        t + self.t * (x + self.x * y)
    }
}

/// Sampling intervals and propagation velocity of an acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acquisition {
    /// Time sampling, ns.
    pub dt: f64,
    /// Inline sampling, cm.
    pub dx: f64,
    /// Crossline sampling, cm.
    pub dy: f64,
    /// Propagation velocity in the soil, cm/ns.
    pub velocity: f64,
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition {
            dt: 0.0117,
            dx: 0.4,
            dy: 0.8,
            velocity: 14.0,
        }
    }
}

impl Acquisition {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.dt) && ok(self.dx) && ok(self.dy) && ok(self.velocity) {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "sampling intervals and velocity must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    acquisition: Acquisition,
    polarization: Polarization,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: Dims,
        acquisition: Acquisition,
        polarization: Polarization,
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.t == 0 || dims.x == 0 || dims.y == 0 {
            return Err(Error::shape(format!("volume dims must be >= 1, got {dims:?}")));
        }
        acquisition.validate()?;
        if data.len() != dims.len() {
            return Err(Error::Length {
                expected: dims.len(),
                found: data.len(),
            });
        }
        Ok(Volume {
            dims,
            acquisition,
            polarization,
            data,
        })
    }

    pub fn zeros(dims: Dims, acquisition: Acquisition, polarization: Polarization) -> Result<Self> {
        Volume::new(dims, acquisition, polarization, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn acquisition(&self) -> Acquisition {
        self.acquisition
    }

    pub fn polarization(&self) -> Polarization {
        self.polarization
    }

    pub fn with_polarization(mut self, polarization: Polarization) -> Self {
        self.polarization = polarization;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, x: usize, y: usize) -> f32 {
        self.data[self.dims.index(t, x, y)]
    }

    /// The A-scan at surface position (x, y).
    pub fn trace(&self, x: usize, y: usize) -> &[f32] {
        let start = self.dims.index(0, x, y);
        &self.data[start..start + self.dims.t]
    }

    pub fn trace_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let start = self.dims.index(0, x, y);
        let t = self.dims.t;
        &mut self.data[start..start + t]
    }

    /// Largest absolute sample value.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, &v| m.max(f64::from(v).abs()))
    }

    /// Scales the volume by `1 / max|V|` so that samples lie in `[-1, 1]`.
    /// An all-zero volume is returned unchanged.
    pub fn normalize(&self) -> Volume {
        let peak = self.max_abs();
        let mut out = self.clone();
        if peak > 0.0 {
            for v in &mut out.data {
                *v = (f64::from(*v) / peak) as f32;
            }
        }
        out
    }

    /// Copies B-scan `y` (zero-based) out of the volume.
    pub fn slice_bscan(&self, y: usize) -> Result<BScan> {
        if y >= self.dims.y {
            return Err(Error::Index {
                index: y,
                len: self.dims.y,
            });
        }
        let plane = self.dims.t * self.dims.x;
        let start = plane * y;
        Ok(BScan {
            t: self.dims.t,
            x: self.dims.x,
            data: self.data[start..start + plane].to_vec(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Volume> {
        let mut reader = BufReader::new(File::open(path)?);
        read_gprv(&mut reader)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        write_gprv(self, &mut writer)?;
        writer.flush()?;
        Ok(())
    }
}

/// A `T × X` B-scan image, t fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    pub t: usize,
    pub x: usize,
    pub data: Vec<f32>,
}

impl BScan {
    #[inline]
    pub fn get(&self, t: usize, x: usize) -> f32 {
        self.data[t + self.t * x]
    }
}

pub fn write_gprv<W: Write>(volume: &Volume, w: &mut W) -> Result<()> {
    let d = volume.dims;
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} exceeds u32")))
    };
    let mut header = Vec::with_capacity(GPRV_HEADER_LEN);
    header.extend_from_slice(GPRV_MAGIC);
    header.extend_from_slice(&GPRV_VERSION.to_le_bytes());
    header.push(volume.polarization.code());
    header.push(0);
    for n in [d.t, d.x, d.y] {
        header.extend_from_slice(&to_u32(n)?.to_le_bytes());
    }
    let a = volume.acquisition;
    for v in [a.dt, a.dx, a.dy, a.velocity] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(4 * volume.data.len());
    for v in &volume.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_gprv<R: Read>(r: &mut R) -> Result<Volume> {
    let mut header = [0u8; GPRV_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated GPRV header".into()))?;
    if &header[0..4] != GPRV_MAGIC {
        return Err(Error::Format("bad magic, not a GPRV file".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != GPRV_VERSION {
        return Err(Error::Format(format!("unsupported GPRV version {version}")));
    }
    let polarization = Polarization::from_code(header[6])?;
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let dims = Dims::new(u32_at(8), u32_at(12), u32_at(16));
    let acquisition = Acquisition {
        dt: f64_at(20),
        dx: f64_at(28),
        dy: f64_at(36),
        velocity: f64_at(44),
    };
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected = dims.len();
    if payload.len() != 4 * expected {
        return Err(Error::Length {
            expected,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims, acquisition, polarization, data)
}

/// Binary per-B-scan labels `l(y)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScanLabels(Vec<u8>);

impl ScanLabels {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("label {bad} is not binary")));
        }
        Ok(ScanLabels(values))
    }

    pub fn zeros(n: usize) -> Self {
        ScanLabels(vec![0; n])
    }

    pub fn from_bools(values: impl IntoIterator<Item = bool>) -> Self {
        ScanLabels(values.into_iter().map(u8::from).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, y: usize) -> bool {
        self.0[y] == 1
    }

    pub fn set(&mut self, y: usize, positive: bool) {
        self.0[y] = u8::from(positive);
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn select(&self, range: std::ops::Range<usize>) -> ScanLabels {
        ScanLabels(self.0[range].to_vec())
    }

    /// Writes `y,label` lines with one-based `y`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, l) in self.0.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, l)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScanLabels> {
        let rows = read_indexed_csv(path)?;
        let mut values = Vec::with_capacity(rows.len());
        for (y, v) in rows {
            let label = match v.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Format(format!("label for B-scan {y} is not 0/1: {other}")))
                }
            };
            values.push(label);
        }
        Ok(ScanLabels(values))
    }
}

/// Reads `y,value` lines with one-based consecutive `y`. A non-numeric first
/// line is treated as a header and skipped.
pub(crate) fn read_indexed_csv(path: impl AsRef<Path>) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (y, value) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected `y,value`", n + 1)))?;
        let y: usize = match y.trim().parse() {
            Ok(y) => y,
            Err(_) if rows.is_empty() && n == 0 => continue,
            Err(_) => return Err(Error::Format(format!("line {}: bad index `{y}`", n + 1))),
        };
        if y != rows.len() + 1 {
            return Err(Error::Format(format!(
                "line {}: expected B-scan {}, found {y}",
                n + 1,
                rows.len() + 1
            )));
        }
        rows.push((y, value.to_string()));
    }
    Ok(rows)
}
