//! Strided 2-D convolution and its adjoint, the transposed convolution.
//!
//! Both use SAME-style zero padding: a convolution with stride `s` maps an
//! `H × W` image to `ceil(H/s) × ceil(W/s)`, padding split evenly with the
//! odd sample going to the bottom/right. A transposed convolution maps
//! `H × W` to exactly `(H·s) × (W·s)` and is the adjoint of the convolution
//! that maps `(H·s) × (W·s)` back to `H × W` with the same kernel tensor.
//!
//! Kernel layout is `[out, in, kh, kw]` for [`ConvMode::Conv`] and
//! `[in, out, kh, kw]` for [`ConvMode::Transposed`], so a convolution and its
//! adjoint share one tensor unchanged.

use rand::Rng;

use crate::error::{Error, Result};

use super::gemm::{matmul, Mat};
use super::{Scalar, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    Conv,
    Transposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Tanh,
    /// Leaky rectifier with slope [`LEAKY_SLOPE`] for negative inputs.
    Leaky,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::None => v,
            Activation::Tanh => v.tanh(),
            Activation::Leaky => {
                if v > T::zero() {
                    v
                } else {
                    v * T::from_f64(LEAKY_SLOPE)
                }
            }
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::None => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Leaky => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::from_f64(LEAKY_SLOPE)
                }
            }
        }
    }
}

/// Reusable im2col buffer; one per worker.
#[derive(Debug, Default)]
pub struct Scratch<T> {
    cols: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new() -> Self {
        Scratch { cols: Vec::new() }
    }

    fn cols(&mut self, n: usize) -> &mut [T] {
        if self.cols.len() < n {
            self.cols.resize(n, T::zero());
        }
        &mut self.cols[..n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
    pub mode: ConvMode,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Sliding-window geometry on the image side of a convolution: the input of
/// a convolution, or the output of a transposed convolution.
#[derive(Debug, Clone, Copy)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
    pad_t: usize,
    pad_l: usize,
}

impl Window {
    fn new(c: usize, h: usize, w: usize, k: (usize, usize), s: (usize, usize), out: (usize, usize)) -> Self {
        let pad = |len: usize, k: usize, s: usize, o: usize| ((o - 1) * s + k).saturating_sub(len) / 2;
        Window {
            c,
            h,
            w,
            kh: k.0,
            kw: k.1,
            sh: s.0,
            sw: s.1,
            ho: out.0,
            wo: out.1,
            pad_t: pad(h, k.0, s.0, out.0),
            pad_l: pad(w, k.1, s.1, out.1),
        }
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Range of output columns `ox` whose tap `kj` lands inside the image.
    #[inline]
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        // ix = ox*sw + kj - pad_l must satisfy 0 <= ix < w
        let lo = if kj >= self.pad_l {
            0
        } else {
            (self.pad_l - kj).div_ceil(self.sw)
        };
        let limit = self.w + self.pad_l; // ox*sw + kj < limit
        let hi = if limit > kj {
            ((limit - kj).div_ceil(self.sw)).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst_row = &mut cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_ox(kj);
                    for oy in 0..self.ho {
                        let dst = &mut dst_row[oy * self.wo..(oy + 1) * self.wo];
                        let iy = (oy * self.sh + ki) as isize - self.pad_t as isize;
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if hi > lo {
                            let ix0 = lo * self.sw + kj - self.pad_l;
                            if self.sw == 1 {
                                dst[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                            } else {
                                for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                                    *d = src[ix0 + j * self.sw];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds `cols` back onto the image (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src_row = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_ox(kj);
                    row += 1;
                    if hi <= lo {
                        continue;
                    }
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + ki) as isize - self.pad_t as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &src_row[oy * self.wo + lo..oy * self.wo + hi];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let ix0 = lo * self.sw + kj - self.pad_l;
                        if self.sw == 1 {
                            for (d, s) in dst[ix0..ix0 + hi - lo].iter_mut().zip(src) {
                                *d += *s;
                            }
                        } else {
                            for (j, s) in src.iter().enumerate() {
                                dst[ix0 + j * self.sw] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn chw(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::shape(format!("{what} must be C×H×W, got {s:?}"))),
    }
}

impl<T: Scalar> ConvLayer<T> {
    /// New layer with weights uniform in `±sqrt(6 / (fan_in + fan_out))` and zero bias.
    pub fn init<R: Rng + ?Sized>(
        mode: ConvMode,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::shape("channels and kernel size must be >= 1"));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("stride must be >= 1"));
        }
        let area = kernel.0 * kernel.1;
        let limit = (6.0 / ((in_channels + out_channels) * area) as f64).sqrt();
        let shape = match mode {
            ConvMode::Conv => [out_channels, in_channels, kernel.0, kernel.1],
            ConvMode::Transposed => [in_channels, out_channels, kernel.0, kernel.1],
        };
        let kernel = Tensor::from_fn(&shape, |_| T::from_f64(rng.random_range(-limit..=limit)));
        Ok(ConvLayer {
            kernel,
            bias: Tensor::zeros(&[out_channels]),
            stride,
            mode,
            activation,
        })
    }

    /// Layer from explicit parameters; the kernel must be 4-D in this mode's layout.
    pub fn from_parts(
        mode: ConvMode,
        kernel: Tensor<T>,
        bias: Tensor<T>,
        stride: (usize, usize),
        activation: Activation,
    ) -> Result<Self> {
        if kernel.shape().len() != 4 || kernel.shape().contains(&0) {
            return Err(Error::shape(format!("kernel must be 4-D and non-empty, got {:?}", kernel.shape())));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::shape("stride must be >= 1"));
        }
        let layer = ConvLayer { kernel, bias, stride, mode, activation };
        if layer.bias.shape() != [layer.out_channels()] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {} output channels",
                layer.bias.shape(),
                layer.out_channels()
            )));
        }
        Ok(layer)
    }

    pub fn in_channels(&self) -> usize {
        match self.mode {
            ConvMode::Conv => self.kernel.shape()[1],
            ConvMode::Transposed => self.kernel.shape()[0],
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.mode {
            ConvMode::Conv => self.kernel.shape()[0],
            ConvMode::Transposed => self.kernel.shape()[1],
        }
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    /// Output `[C, H, W]` for an input of spatial size `h × w`.
    pub fn output_shape(&self, h: usize, w: usize) -> [usize; 3] {
        let (sh, sw) = self.stride;
        match self.mode {
            ConvMode::Conv => [self.out_channels(), h.div_ceil(sh), w.div_ceil(sw)],
            ConvMode::Transposed => [self.out_channels(), h * sh, w * sw],
        }
    }

    fn window(&self, input: &Tensor<T>) -> Result<Window> {
        let (c, h, w) = chw(input, "layer input")?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "input has {c} channels, layer expects {}",
                self.in_channels()
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("input spatial size must be >= 1"));
        }
        let k = self.kernel_size();
        Ok(match self.mode {
            ConvMode::Conv => {
                let [_, ho, wo] = self.output_shape(h, w);
                Window::new(c, h, w, k, self.stride, (ho, wo))
            }
            ConvMode::Transposed => {
                let [co, ho, wo] = self.output_shape(h, w);
                Window::new(co, ho, wo, k, self.stride, (h, w))
            }
        })
    }

    pub fn forward(&self, input: &Tensor<T>, scratch: &mut Scratch<T>) -> Result<Tensor<T>> {
        let win = self.window(input)?;
        let (q, p) = (win.rows(), win.positions());
        let out_shape = {
            let s = input.shape();
            self.output_shape(s[1], s[2])
        };
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let cols = scratch.cols(q * p);
        match self.mode {
            ConvMode::Conv => {
                let o = self.out_channels();
                win.im2col(input.data(), cols);
                matmul(Mat::rm(self.kernel.data(), o, q), Mat::rm(cols, q, p), &mut out, false);
            }
            ConvMode::Transposed => {
                let ci = self.in_channels();
                matmul(Mat::tr(self.kernel.data(), q, ci), Mat::rm(input.data(), ci, p), cols, false);
                win.col2im(cols, &mut out);
            }
        }
        let plane = out_shape[1] * out_shape[2];
        for (ch, chunk) in out.chunks_mut(plane).enumerate() {
            let b = self.bias.data()[ch];
            for v in chunk {
                *v = self.activation.apply(*v + b);
            }
        }
        Tensor::new(out_shape.to_vec(), out)
    }

    /// Gradients given the forward input and output. Skips the input
    /// gradient unless `want_input` is set.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        want_input: bool,
        scratch: &mut Scratch<T>,
    ) -> Result<ConvGrads<T>> {
        let win = self.window(input)?;
        let s = input.shape();
        let expected = self.output_shape(s[1], s[2]);
        if output.shape() != expected || grad_out.shape() != expected {
            return Err(Error::shape(format!(
                "output/gradient shapes {:?}/{:?} do not match forward output {:?}",
                output.shape(),
                grad_out.shape(),
                expected
            )));
        }
        let (q, p) = (win.rows(), win.positions());
        // gradient w.r.t. the pre-activation
        let g: Vec<T> = grad_out
            .data()
            .iter()
            .zip(output.data())
            .map(|(&go, &y)| go * self.activation.derivative_from_output(y))
            .collect();
        let plane = expected[1] * expected[2];
        let bias_grad: Vec<T> = g
            .chunks(plane)
            .map(|c| c.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        let mut kernel_grad = vec![T::zero(); self.kernel.len()];
        let cols = scratch.cols(q * p);
        let input_grad = match self.mode {
            ConvMode::Conv => {
                let o = self.out_channels();
                win.im2col(input.data(), cols);
                matmul(Mat::rm(&g, o, p), Mat::tr(cols, p, q), &mut kernel_grad, false);
                if want_input {
                    matmul(Mat::tr(self.kernel.data(), q, o), Mat::rm(&g, o, p), cols, false);
                    let mut gi = vec![T::zero(); input.len()];
                    win.col2im(cols, &mut gi);
                    Some(Tensor::new(s.to_vec(), gi)?)
                } else {
                    None
                }
            }
            ConvMode::Transposed => {
                let ci = self.in_channels();
                win.im2col(&g, cols);
                matmul(Mat::rm(input.data(), ci, p), Mat::tr(cols, p, q), &mut kernel_grad, false);
                if want_input {
                    let mut gi = vec![T::zero(); input.len()];
                    matmul(Mat::rm(self.kernel.data(), ci, q), Mat::rm(cols, q, p), &mut gi, false);
                    Some(Tensor::new(s.to_vec(), gi)?)
                } else {
                    None
                }
            }
        };
        Ok(ConvGrads {
            input: input_grad,
            kernel: Tensor::new(self.kernel.shape().to_vec(), kernel_grad)?,
            bias: Tensor::new(vec![self.out_channels()], bias_grad)?,
        })
    }
}

fn require_mode<T>(layer: &ConvLayer<T>, mode: ConvMode) -> Result<()> {
    if layer.mode != mode {
        return Err(Error::shape(format!("layer mode is {:?}, expected {mode:?}", layer.mode)));
    }
    Ok(())
}

/// Forward pass of a strided convolution layer.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    require_mode(layer, ConvMode::Conv)?;
    layer.forward(input, &mut Scratch::new())
}

/// Input, kernel and bias gradients of a convolution layer (recomputes the forward pass).
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    require_mode(layer, ConvMode::Conv)?;
    let mut scratch = Scratch::new();
    let output = layer.forward(input, &mut scratch)?;
    layer.backward(input, &output, grad_out, true, &mut scratch)
}

/// Forward pass of a transposed convolution layer.
pub fn deconv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    require_mode(layer, ConvMode::Transposed)?;
    layer.forward(input, &mut Scratch::new())
}

pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    require_mode(layer, ConvMode::Transposed)?;
    let mut scratch = Scratch::new();
    let output = layer.forward(input, &mut scratch)?;
    layer.backward(input, &output, grad_out, true, &mut scratch)
}
