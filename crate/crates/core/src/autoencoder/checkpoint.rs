//! Model checkpoints.
//!
//! ```text
//! magic "GPRM" | version u16 = 1 | family u8 (1..=3) | dims u8 (2 or 3)
//! block Δt u32 | block Δx u32 | encoder layers u32 | decoder layers u32
//! per layer (encoder then decoder), 26 bytes:
//!     mode u8 (0 conv, 1 transposed) | activation u8 (0 none, 1 tanh, 2 leaky)
//!     in u32 | out u32 | kh u32 | kw u32 | sh u32 | sw u32
//! per layer, same order: kernel values then bias values as f64
//! ```
//!
//! All integers and floats are little-endian. Kernels are stored in the
//! layer's own layout (`[out, in, kh, kw]` for convolutions,
//! `[in, out, kh, kw]` for transposed convolutions).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{Activation, ConvLayer, ConvMode, Scalar, Tensor};

use super::{layer_plan, ArchitectureSpec, AutoencoderModel, Dimensionality, Family, LayerDesc};

pub const GPRM_MAGIC: &[u8; 4] = b"GPRM";
pub const GPRM_VERSION: u16 = 1;

fn family_code(f: Family) -> u8 {
    match f {
        Family::A1 => 1,
        Family::A2 => 2,
        Family::A3 => 3,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Tanh => 1,
        Activation::Leaky => 2,
    }
}

pub fn write_model<T: Scalar, W: Write>(model: &AutoencoderModel<T>, w: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(GPRM_MAGIC);
    buf.extend_from_slice(&GPRM_VERSION.to_le_bytes());
    buf.push(family_code(model.spec.family));
    buf.push(match model.spec.dims {
        Dimensionality::TwoD => 2,
        Dimensionality::ThreeD => 3,
    });
    let u32s = |buf: &mut Vec<u8>, vals: &[usize]| {
        for &v in vals {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
    };
    u32s(&mut buf, &[model.spec.input.0, model.spec.input.1, model.encoder.len(), model.decoder.len()]);
    let layers: Vec<&ConvLayer<T>> = model.encoder.iter().chain(&model.decoder).collect();
    for l in &layers {
        buf.push(match l.mode {
            ConvMode::Conv => 0,
            ConvMode::Transposed => 1,
        });
        buf.push(activation_code(l.activation));
        let (kh, kw) = l.kernel_size();
        u32s(&mut buf, &[l.in_channels(), l.out_channels(), kh, kw, l.stride.0, l.stride.1]);
    }
    for l in &layers {
        for v in l.kernel.data().iter().chain(l.bias.data()) {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_model<T: Scalar, R: Read>(r: &mut R) -> Result<AutoencoderModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != GPRM_MAGIC {
        return Err(Error::Format("bad magic, not a model file".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != GPRM_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let family = match c.u8()? {
        1 => Family::A1,
        2 => Family::A2,
        3 => Family::A3,
        other => return Err(Error::Format(format!("unknown family code {other}"))),
    };
    let dims = match c.u8()? {
        2 => Dimensionality::TwoD,
        3 => Dimensionality::ThreeD,
        other => return Err(Error::Format(format!("unknown dimensionality code {other}"))),
    };
    let input = (c.u32()?, c.u32()?);
    let spec = ArchitectureSpec::new(family, dims, input)?;
    let (n_enc, n_dec) = (c.u32()?, c.u32()?);
    let (plan_enc, plan_dec) = layer_plan(&spec);
    if n_enc != plan_enc.len() || n_dec != plan_dec.len() {
        return Err(Error::Format("layer counts do not match the architecture".into()));
    }
    let mut descs = Vec::with_capacity(n_enc + n_dec);
    for expected in plan_enc.iter().chain(&plan_dec) {
        let mode = match c.u8()? {
            0 => ConvMode::Conv,
            1 => ConvMode::Transposed,
            other => return Err(Error::Format(format!("unknown layer mode {other}"))),
        };
        let activation = match c.u8()? {
            0 => Activation::None,
            1 => Activation::Tanh,
            2 => Activation::Leaky,
            other => return Err(Error::Format(format!("unknown activation {other}"))),
        };
        let (i, o, kh, kw, sh, sw) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
        let desc = LayerDesc {
            mode,
            in_channels: i,
            out_channels: o,
            kernel: kh,
            stride: sh,
            activation,
        };
        if desc != *expected || kh != kw || sh != sw {
            return Err(Error::Format(format!("layer descriptor {desc:?} does not match the architecture")));
        }
        descs.push(desc);
    }
    let mut layers = Vec::with_capacity(descs.len());
    for d in &descs {
        let shape = match d.mode {
            ConvMode::Conv => vec![d.out_channels, d.in_channels, d.kernel, d.kernel],
            ConvMode::Transposed => vec![d.in_channels, d.out_channels, d.kernel, d.kernel],
        };
        let n: usize = shape.iter().product();
        let kernel = (0..n).map(|_| c.f64().map(T::from_f64)).collect::<Result<Vec<_>>>()?;
        let bias = (0..d.out_channels).map(|_| c.f64().map(T::from_f64)).collect::<Result<Vec<_>>>()?;
        layers.push(ConvLayer::from_parts(
            d.mode,
            Tensor::new(shape, kernel)?,
            Tensor::new(vec![d.out_channels], bias)?,
            (d.stride, d.stride),
            d.activation,
        )?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after model parameters".into()));
    }
    let decoder = layers.split_off(n_enc);
    Ok(AutoencoderModel { spec, encoder: layers, decoder })
}

impl<T: Scalar> AutoencoderModel<T> {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut buf = Vec::new();
        write_model(self, &mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        read_model(&mut f)
    }
}
