//! Block sampling: single-line boundaries with DC fill, luma boundary
//! pooling, location maps, and per-variant input assembly.
//!
//! A boundary of a block with side `M` has `2M + 1` entries: the left
//! column from the bottommost sample upwards, then the top-left corner, then
//! the top row from left to right.

mod dataset;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::media_io::{ChromaFormat, Frame, Plane};
use crate::tensor::{Scalar, Tensor};

pub use dataset::{read_dataset, write_dataset, DatasetManifest, DATASET_MAGIC, DATASET_VERSION};

/// Block sides the pipeline supports.
pub const BLOCK_SIZES: [usize; 3] = [4, 8, 16];

/// Mid-range fill value `2^(bd-1)` expressed in normalized units.
pub fn dc_value(bit_depth: u8) -> f64 {
    (1u32 << (bit_depth - 1)) as f64 / ((1u32 << bit_depth) - 1) as f64
}

/// Block-relative coordinates of the `2M + 1` boundary entries.
pub fn boundary_coords(side: usize) -> Vec<(i32, i32)> {
    let m = side as i32;
    let mut coords = Vec::with_capacity(2 * side + 1);
    coords.extend((0..m).rev().map(|y| (-1, y)));
    coords.push((-1, -1));
    coords.extend((0..m).map(|x| (x, -1)));
    coords
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryArray {
    pub values: Vec<f32>,
    pub available: Vec<bool>,
    pub coords: Vec<(i32, i32)>,
}

impl BoundaryArray {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Side of the block this boundary belongs to.
    pub fn side(&self) -> usize {
        self.values.len() / 2
    }

    /// Halves a `4N+1` luma boundary to `2N+1` entries. A pooled entry is
    /// available when both of its sources are.
    pub fn pooled(&self) -> Result<BoundaryArray> {
        let values = pool_luma_boundary(&self.values)?;
        let mut flags = self.available.clone();
        flags.push(*flags.last().expect("non-empty after pooling"));
        let available = flags.chunks_exact(2).map(|p| p[0] && p[1]).collect();
        Ok(BoundaryArray {
            values,
            available,
            coords: boundary_coords(self.side() / 2),
        })
    }
}

/// Reads the single reference line around the block at `origin` with side
/// `side`. Entries outside the plane are replaced by the DC value.
pub fn build_boundary(plane: &Plane, bit_depth: u8, origin: (usize, usize), side: usize) -> Result<BoundaryArray> {
    let (x0, y0) = origin;
    if side == 0 || x0 + side > plane.width || y0 + side > plane.height {
        return Err(Error::InvalidArgument(format!(
            "block of side {side} at ({x0}, {y0}) does not fit a {}x{} plane",
            plane.width, plane.height
        )));
    }
    let max = ((1u32 << bit_depth) - 1) as f32;
    let dc = dc_value(bit_depth) as f32;
    let coords = boundary_coords(side);
    let mut values = Vec::with_capacity(coords.len());
    let mut available = Vec::with_capacity(coords.len());
    for &(dx, dy) in &coords {
        let x = x0 as i64 + dx as i64;
        let y = y0 as i64 + dy as i64;
        if x >= 0 && y >= 0 && (x as usize) < plane.width && (y as usize) < plane.height {
            values.push(plane.get(x as usize, y as usize) as f32 / max);
            available.push(true);
        } else {
            values.push(dc);
            available.push(false);
        }
    }
    Ok(BoundaryArray {
        values,
        available,
        coords,
    })
}

/// Average pooling with size 2 over a `4N+1` array, after replicating the
/// final sample once.
pub fn pool_luma_boundary<T: Scalar>(b_y: &[T]) -> Result<Vec<T>> {
    if b_y.len() < 5 || b_y.len() % 4 != 1 {
        return Err(Error::Shape(format!(
            "luma boundary must have 4N+1 entries, got {}",
            b_y.len()
        )));
    }
    let half = T::lit(0.5);
    let last = b_y[b_y.len() - 1];
    let out = (0..=b_y.len() / 2)
        .map(|i| {
            let a = b_y[2 * i];
            let b = b_y.get(2 * i + 1).copied().unwrap_or(last);
            (a + b) * half
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationMaps {
    pub n: usize,
    /// `a_block[i*n + j] = j / n`
    pub a_block: Vec<f32>,
    /// `o_block[i*n + j] = i / n`
    pub o_block: Vec<f32>,
    pub a_bound: Vec<f32>,
    pub o_bound: Vec<f32>,
}

pub fn build_location_maps(n: usize) -> Result<LocationMaps> {
    if n == 0 {
        return Err(Error::InvalidArgument("block side must be >= 1".into()));
    }
    let nf = n as f32;
    let mut a_block = Vec::with_capacity(n * n);
    let mut o_block = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            a_block.push(j as f32 / nf);
            o_block.push(i as f32 / nf);
        }
    }
    let coords = boundary_coords(n);
    Ok(LocationMaps {
        n,
        a_block,
        o_block,
        a_bound: coords.iter().map(|&(x, _)| x as f32 / nf).collect(),
        o_bound: coords.iter().map(|&(_, y)| y as f32 / nf).collect(),
    })
}

/// One training/evaluation block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSample {
    /// Chroma block side.
    pub n: usize,
    pub format: ChromaFormat,
    pub bit_depth: u8,
    /// Top-left corner in chroma-plane coordinates.
    pub origin: (usize, usize),
    /// Collocated luma, `luma_side()²` values, row-major.
    pub luma_block: Vec<f32>,
    pub b_y: BoundaryArray,
    pub b_cb: BoundaryArray,
    pub b_cr: BoundaryArray,
    pub target_cb: Vec<f32>,
    pub target_cr: Vec<f32>,
}

impl BlockSample {
    pub fn luma_side(&self) -> usize {
        match self.format {
            ChromaFormat::Yuv444 => self.n,
            ChromaFormat::Yuv420 => 2 * self.n,
        }
    }

    /// `N×N×2` ground truth, channel 0 = Cb.
    pub fn target<T: Scalar>(&self) -> Tensor<T> {
        let n = self.n;
        Tensor::from_fn([n, n, 2], |i| {
            let v = if i % 2 == 0 {
                self.target_cb[i / 2]
            } else {
                self.target_cr[i / 2]
            };
            T::lit(v as f64)
        })
    }

    /// Luma aligned to the chroma grid: itself under 4:4:4, 2×2 means under
    /// 4:2:0.
    pub fn luma_on_chroma_grid(&self) -> Vec<f32> {
        match self.format {
            ChromaFormat::Yuv444 => self.luma_block.clone(),
            ChromaFormat::Yuv420 => average_pool_2x2(&self.luma_block, self.luma_side()),
        }
    }

    /// Luma boundary aligned index-wise with the chroma boundaries.
    pub fn luma_boundary_on_chroma_grid(&self) -> Result<BoundaryArray> {
        match self.format {
            ChromaFormat::Yuv444 => Ok(self.b_y.clone()),
            ChromaFormat::Yuv420 => self.b_y.pooled(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let l = self.luma_side();
        let b = 2 * self.n + 1;
        let ok = self.luma_block.len() == l * l
            && self.b_y.len() == 2 * l + 1
            && self.b_cb.len() == b
            && self.b_cr.len() == b
            && self.target_cb.len() == self.n * self.n
            && self.target_cr.len() == self.n * self.n;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "inconsistent block sample of side {} ({})",
                self.n, self.format
            )))
        }
    }
}

/// 2×2 mean pooling of a square `side×side` block.
pub fn average_pool_2x2(block: &[f32], side: usize) -> Vec<f32> {
    let h = side / 2;
    let mut out = Vec::with_capacity(h * h);
    for i in 0..h {
        for j in 0..h {
            let at = |y: usize, x: usize| block[y * side + x] as f64;
            let s = at(2 * i, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j) + at(2 * i + 1, 2 * j + 1);
            out.push((s / 4.0) as f32);
        }
    }
    out
}

fn rows_tensor<T: Scalar>(rows: &[&[f32]]) -> Tensor<T> {
    let cols = rows[0].len();
    Tensor::from_fn([rows.len(), cols], |i| T::lit(rows[i / cols][i % cols] as f64))
}

fn expect_format(sample: &BlockSample, format: ChromaFormat) -> Result<()> {
    if sample.format != format {
        return Err(Error::InvalidArgument(format!(
            "sample was extracted as {}, expected {format}",
            sample.format
        )));
    }
    Ok(())
}

/// Learned down-sampling inputs: `S` is `3×(2N+1)` with rows (pooled luma,
/// Cb, Cr); `X` is the raw `2N×2N` luma.
pub fn assemble_scheme_a<T: Scalar>(sample: &BlockSample) -> Result<(Tensor<T>, Tensor<T>)> {
    expect_format(sample, ChromaFormat::Yuv420)?;
    let pooled = pool_luma_boundary(&sample.b_y.values)?;
    let s = rows_tensor(&[&pooled, &sample.b_cb.values, &sample.b_cr.values]);
    let l = sample.luma_side();
    let x = Tensor::from_fn([l, l], |i| T::lit(sample.luma_block[i] as f64));
    Ok((s, x))
}

/// Location-map inputs: `S1` is `5×(2N+1)` with channels (Y, Cb, Cr,
/// abscissa, ordinate); `X1` is `N×N×3` with channels (luma, abscissa,
/// ordinate).
pub fn assemble_scheme_b<T: Scalar>(sample: &BlockSample) -> Result<(Tensor<T>, Tensor<T>)> {
    expect_format(sample, ChromaFormat::Yuv444)?;
    let maps = build_location_maps(sample.n)?;
    let s1 = rows_tensor(&[
        &sample.b_y.values,
        &sample.b_cb.values,
        &sample.b_cr.values,
        &maps.a_bound,
        &maps.o_bound,
    ]);
    let n = sample.n;
    let channels = [&sample.luma_block, &maps.a_block, &maps.o_block];
    let x1 = Tensor::from_fn([n, n, 3], |i| T::lit(channels[i % 3][i / 3] as f64));
    Ok((s1, x1))
}

/// Fixed-filter inputs for the reference network: `S` is `3×(2N+1)` and
/// `X` is `N×N`, with 4:2:0 luma reduced by 2×2 means and pooled boundary.
pub fn assemble_baseline<T: Scalar>(sample: &BlockSample) -> Result<(Tensor<T>, Tensor<T>)> {
    let b_y = sample.luma_boundary_on_chroma_grid()?;
    let s = rows_tensor(&[&b_y.values, &sample.b_cb.values, &sample.b_cr.values]);
    let n = sample.n;
    let luma = sample.luma_on_chroma_grid();
    let x = Tensor::from_fn([n, n], |i| T::lit(luma[i] as f64));
    Ok((s, x))
}

fn normalized_block(plane: &Plane, max: f32, x0: usize, y0: usize, side: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            out.push(plane.get(x, y) as f32 / max);
        }
    }
    out
}

/// Cuts the block of chroma side `n` whose chroma origin is `origin`.
pub fn sample_at(frame: &Frame, n: usize, origin: (usize, usize)) -> Result<BlockSample> {
    let (cx, cy) = origin;
    let scale = match frame.chroma_format {
        ChromaFormat::Yuv444 => 1,
        ChromaFormat::Yuv420 => 2,
    };
    if n == 0 || cx + n > frame.cb.width || cy + n > frame.cb.height {
        return Err(Error::InvalidArgument(format!(
            "block of side {n} at ({cx}, {cy}) does not fit {}x{} chroma planes",
            frame.cb.width, frame.cb.height
        )));
    }
    let max = frame.max_value() as f32;
    let bd = frame.bit_depth;
    let (lx, ly, ls) = (cx * scale, cy * scale, n * scale);
    Ok(BlockSample {
        n,
        format: frame.chroma_format,
        bit_depth: bd,
        origin,
        luma_block: normalized_block(&frame.y, max, lx, ly, ls),
        b_y: build_boundary(&frame.y, bd, (lx, ly), ls)?,
        b_cb: build_boundary(&frame.cb, bd, origin, n)?,
        b_cr: build_boundary(&frame.cr, bd, origin, n)?,
        target_cb: normalized_block(&frame.cb, max, cx, cy, n),
        target_cr: normalized_block(&frame.cr, max, cx, cy, n),
    })
}

/// Draws `count` blocks of side `n` at origins uniform over every position
/// where the block fits. Deterministic in `seed`.
pub fn extract_samples(frame: &Frame, n: usize, count: usize, seed: u64) -> Result<Vec<BlockSample>> {
    if !BLOCK_SIZES.contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "block side must be one of {BLOCK_SIZES:?}, got {n}"
        )));
    }
    let (cw, ch) = (frame.cb.width, frame.cb.height);
    if cw < n || ch < n {
        return Err(Error::InvalidArgument(format!(
            "{cw}x{ch} chroma planes are smaller than a {n}x{n} block"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = rng.gen_range(0..=cw - n);
            let y = rng.gen_range(0..=ch - n);
            sample_at(frame, n, (x, y))
        })
        .collect()
}
