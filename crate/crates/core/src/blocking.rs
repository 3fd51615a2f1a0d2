//! Regular block lattice over a volume, block extraction, and the
//! overlap-and-average aggregation of per-block scores into a mask.

use crate::error::{Error, Result};
use crate::exec;
use crate::nn::{Scalar, Tensor};
use crate::volume::{Dims, Volume};

/// Block extent and lattice step along (t, x, y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockGeometry {
    pub size: [usize; 3],
    pub stride: [usize; 3],
}

impl Default for BlockGeometry {
    /// 64×64×3 blocks every 4 samples in t and x and every B-scan in y.
    fn default() -> Self {
        BlockGeometry {
            size: [64, 64, 3],
            stride: [4, 4, 1],
        }
    }
}

impl BlockGeometry {
    pub fn new(size: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let g = BlockGeometry { size, stride };
        g.validate()?;
        Ok(g)
    }

    /// Square `side × side` blocks with `step` in t and x; `depth` B-scans
    /// per block (1 or 3) with a one-B-scan step in y.
    pub fn square(side: usize, step: usize, depth: usize) -> Result<Self> {
        BlockGeometry::new([side, side, depth], [step, step, 1])
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let (s, d) = (self.size[axis], self.stride[axis]);
            if d == 0 || d > s {
                return Err(Error::Geometry(format!(
                    "axis {axis}: stride {d} must be in 1..={s}"
                )));
            }
        }
        if !matches!(self.size[2], 1 | 3) {
            return Err(Error::Geometry(format!(
                "crossline block size must be 1 or 3, got {}",
                self.size[2]
            )));
        }
        Ok(())
    }
}

/// The complete lattice of block origins for a volume size.
///
/// Blocks are numbered with t fastest, then x, then y.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub geometry: BlockGeometry,
    pub dims: Dims,
    /// Blocks per axis (t, x, y).
    pub counts: [usize; 3],
}

pub fn plan_blocks(dims: Dims, geometry: BlockGeometry) -> Result<BlockGrid> {
    geometry.validate()?;
    let extent = [dims.t, dims.x, dims.y];
    let mut counts = [0; 3];
    for axis in 0..3 {
        let (n, s, d) = (extent[axis], geometry.size[axis], geometry.stride[axis]);
        if s > n {
            return Err(Error::Geometry(format!(
                "block size {s} exceeds volume size {n} on axis {axis}"
            )));
        }
        counts[axis] = (n - s) / d + 1;
    }
    Ok(BlockGrid {
        geometry,
        dims,
        counts,
    })
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice coordinates (it, ix, iy) of block `i`.
    #[inline]
    pub fn lattice(&self, i: usize) -> [usize; 3] {
        let [nt, nx, _] = self.counts;
        [i % nt, (i / nt) % nx, i / (nt * nx)]
    }

    pub fn origin(&self, i: usize) -> Result<[usize; 3]> {
        if i >= self.len() {
            return Err(Error::Index {
                index: i,
                len: self.len(),
            });
        }
        let l = self.lattice(i);
        let s = self.geometry.stride;
        Ok([l[0] * s[0], l[1] * s[1], l[2] * s[2]])
    }

    pub fn block_shape(&self) -> [usize; 3] {
        let [bt, bx, by] = self.geometry.size;
        [by, bt, bx]
    }

    /// Lattice indices along `axis` of the blocks containing coordinate `pos`.
    fn covering(&self, axis: usize, pos: usize) -> std::ops::Range<usize> {
        let (s, d, n) = (self.geometry.size[axis], self.geometry.stride[axis], self.counts[axis]);
        // origin k*d satisfies k*d <= pos < k*d + s
        let lo = if pos + 1 > s { (pos + 1 - s).div_ceil(d) } else { 0 };
        let hi = (pos / d + 1).min(n);
        lo.min(hi)..hi
    }
}

/// Copies block `i` into `out`, laid out `[Δy, Δt, Δx]`.
pub fn extract_block_into<T: Scalar>(v: &Volume, grid: &BlockGrid, i: usize, out: &mut [T]) -> Result<()> {
    let [t0, x0, y0] = grid.origin(i)?;
    let [bt, bx, by] = grid.geometry.size;
    let d = v.dims();
    if t0 + bt > d.t || x0 + bx > d.x || y0 + by > d.y {
        return Err(Error::Geometry("block lies outside the volume".into()));
    }
    if out.len() != bt * bx * by {
        return Err(Error::shape(format!("output buffer holds {}, block has {}", out.len(), bt * bx * by)));
    }
    for c in 0..by {
        for col in 0..bx {
            let trace = &v.trace(x0 + col, y0 + c)[t0..t0 + bt];
            for (row, &s) in trace.iter().enumerate() {
                out[(c * bt + row) * bx + col] = T::from_f64(f64::from(s));
            }
        }
    }
    Ok(())
}

/// Block `i` as a `Δy × Δt × Δx` tensor; `Δy = 1` gives a single-channel patch.
pub fn extract_block<T: Scalar>(v: &Volume, grid: &BlockGrid, i: usize) -> Result<Tensor<T>> {
    let shape = grid.block_shape();
    let mut data = vec![T::zero(); shape.iter().product()];
    extract_block_into(v, grid, i, &mut data)?;
    Tensor::new(shape.to_vec(), data)
}

/// Per-sample mean of the scores of all blocks containing the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskField {
    pub dims: Dims,
    /// Mask values, t fastest; zero where no block covers the sample.
    pub values: Vec<f64>,
    /// Number of blocks covering each sample.
    pub counts: Vec<u32>,
}

impl MaskField {
    pub fn get(&self, t: usize, x: usize, y: usize) -> f64 {
        self.values[self.dims.index(t, x, y)]
    }

    pub fn is_covered(&self, t: usize, x: usize, y: usize) -> bool {
        self.counts[self.dims.index(t, x, y)] > 0
    }

    pub fn uncovered_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 0).count()
    }

    pub fn slice(&self, y: usize) -> &[f64] {
        let plane = self.dims.t * self.dims.x;
        &self.values[y * plane..(y + 1) * plane]
    }
}

/// Overlap-and-average of block scores.
///
/// Every sample accumulates the scores of its blocks in block order and is
/// then divided by their number, which makes the result bitwise equal to
/// the straightforward accumulate/count loop. B-scans are processed in
/// parallel.
pub fn aggregate_mask(dims: Dims, grid: &BlockGrid, scores: &[f64]) -> Result<MaskField> {
    if scores.len() != grid.len() {
        return Err(Error::shape(format!(
            "{} scores for {} blocks",
            scores.len(),
            grid.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Data(format!("block scores must be non-negative, got {bad}")));
    }
    if grid.dims != dims {
        return Err(Error::shape("block grid was planned for a different volume size"));
    }
    let [bt, bx, _] = grid.geometry.size;
    let [st, sx, _] = grid.geometry.stride;
    let [nt, nx, _] = grid.counts;
    let plane = dims.t * dims.x;
    let slices = exec::map_indexed(
        dims.y,
        || (),
        |_, y| {
            let mut sum = vec![0.0f64; plane];
            let mut count = vec![0u32; plane];
            for iy in grid.covering(2, y) {
                for ix in 0..nx {
                    for it in 0..nt {
                        let e = scores[it + nt * (ix + nx * iy)];
                        let (t0, x0) = (it * st, ix * sx);
                        for x in x0..x0 + bx {
                            let row = x * dims.t;
                            for (s, c) in sum[row + t0..row + t0 + bt]
                                .iter_mut()
                                .zip(&mut count[row + t0..row + t0 + bt])
                            {
                                *s += e;
                                *c += 1;
                            }
                        }
                    }
                }
            }
            for (s, &c) in sum.iter_mut().zip(&count) {
                if c > 0 {
                    *s /= f64::from(c);
                }
            }
            (sum, count)
        },
    );
    let mut values = Vec::with_capacity(dims.len());
    let mut counts = Vec::with_capacity(dims.len());
    for (s, c) in slices {
        values.extend(s);
        counts.extend(c);
    }
    Ok(MaskField {
        dims,
        values,
        counts,
    })
}
