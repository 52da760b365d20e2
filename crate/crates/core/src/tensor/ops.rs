use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; odd padding puts the
    /// extra row/column at the bottom/right.
    Same,
    Valid,
}

/// Output length and leading pad for one spatial axis.
fn axis_geometry(len: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    match padding {
        Padding::Valid => {
            if len < k {
                return Err(Error::Shape(format!("kernel of {k} does not fit input of {len}")));
            }
            Ok(((len - k) / stride + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, total / 2))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Conv2dGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    pt: usize,
    pl: usize,
    stride: usize,
}

fn conv2d_geom<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Conv2dGeom> {
    let [h, w, cin] = input.dims3()?;
    let [kh, kw, wcin, cout] = weight.dims4()?;
    if wcin != cin {
        return Err(Error::Shape(format!(
            "conv input has {cin} channels, kernel expects {wcin}"
        )));
    }
    let (oh, pt) = axis_geometry(h, kh, stride, padding)?;
    let (ow, pl) = axis_geometry(w, kw, stride, padding)?;
    Ok(Conv2dGeom {
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        oh,
        ow,
        pt,
        pl,
        stride,
    })
}

impl Conv2dGeom {
    /// Input coordinate for an output coordinate and kernel tap, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, len: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|&i| i < len)
    }
}

/// 2-D cross-correlation. Input `H×W×Cin`, weight `kh×kw×Cin×Cout`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv2d_geom(input, weight, stride, padding)?;
    bias.expect_shape(&[g.cout])?;
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros([g.oh, g.ow, g.cout]);
    let od = out.data_mut();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let acc = &mut od[(oy * g.ow + ox) * g.cout..][..g.cout];
            acc.copy_from_slice(bias.data());
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                    let xin = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let wbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        let wrow = &wt[wbase + ci * g.cout..][..g.cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv2d_geom(input, weight, stride, padding)?;
    grad_out.expect_shape(&[g.oh, g.ow, g.cout])?;
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let mut gi = Tensor::zeros(input.shape().to_vec());
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = Tensor::zeros([g.cout]);
    {
        let (gid, gwd, gbd) = (gi.data_mut(), gw.data_mut(), gb.data_mut());
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gop = &go[(oy * g.ow + ox) * g.cout..][..g.cout];
                for (b, &v) in gbd.iter_mut().zip(gop) {
                    *b += v;
                }
                for ky in 0..g.kh {
                    let Some(iy) = g.src(oy, ky, g.pt, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.pl, g.w) else { continue };
                        let ibase = (iy * g.w + ix) * g.cin;
                        let wbase = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let xv = x[ibase + ci];
                            let off = wbase + ci * g.cout;
                            let wrow = &wt[off..][..g.cout];
                            let mut dot = T::zero();
                            for (&wv, &gv) in wrow.iter().zip(gop) {
                                dot += wv * gv;
                            }
                            gid[ibase + ci] += dot;
                            for (gwv, &gv) in gwd[off..][..g.cout].iter_mut().zip(gop) {
                                *gwv += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

fn as_2d_input<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [l, c] = input.dims2()?;
    input.clone().reshape([1, l, c])
}

fn as_2d_weight<T: Scalar>(weight: &Tensor<T>) -> Result<Tensor<T>> {
    let [k, cin, cout] = weight.dims3()?;
    weight.clone().reshape([1, k, cin, cout])
}

/// 1-D cross-correlation. Input `L×Cin`, weight `k×Cin×Cout`.
pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let out = conv2d(&as_2d_input(input)?, &as_2d_weight(weight)?, bias, stride, padding)?;
    let [_, l, c] = out.dims3()?;
    out.reshape([l, c])
}

pub fn conv1d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [l, c] = grad_out.dims2()?;
    let g = conv2d_backward(
        &as_2d_input(input)?,
        &as_2d_weight(weight)?,
        stride,
        padding,
        &grad_out.clone().reshape([1, l, c])?,
    )?;
    Ok(ConvGrads {
        input: g.input.reshape(input.shape().to_vec())?,
        weight: g.weight.reshape(weight.shape().to_vec())?,
        bias: g.bias,
    })
}

/// Rank-1 inputs are treated as a single row.
fn rows_of<T: Scalar>(input: &Tensor<T>) -> Result<(usize, usize)> {
    match input.shape()[..] {
        [d] => Ok((1, d)),
        [r, d] => Ok((r, d)),
        _ => Err(Error::Shape(format!(
            "dense expects rank 1 or 2 input, got {:?}",
            input.shape()
        ))),
    }
}

/// `x·W + b` applied to every row. Input `D_in` or `R×D_in`, weight `D_in×D_out`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, din) = rows_of(input)?;
    let [wdin, dout] = weight.dims2()?;
    if wdin != din {
        return Err(Error::Shape(format!(
            "dense input width {din} does not match weight rows {wdin}"
        )));
    }
    bias.expect_shape(&[dout])?;
    let mut out = matmul_raw(input.data(), weight.data(), rows, din, dout);
    for row in out.chunks_mut(dout) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    let shape = if input.rank() == 1 {
        vec![dout]
    } else {
        vec![rows, dout]
    };
    Tensor::new(shape, out)
}

pub fn dense_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (rows, din) = rows_of(input)?;
    let [_, dout] = weight.dims2()?;
    if grad_out.len() != rows * dout {
        return Err(Error::Shape(format!(
            "dense grad has {} values, expected {}",
            grad_out.len(),
            rows * dout
        )));
    }
    let go = grad_out.data();
    let gi = matmul_bt_raw(go, weight.data(), rows, dout, din);
    let gw = matmul_at_raw(input.data(), go, rows, din, dout);
    let mut gb = vec![T::zero(); dout];
    for row in go.chunks(dout) {
        for (b, &v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new([dout], gb)?,
    })
}

/// `a (m×k) · b (k×n)`.
fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..][..n];
        for (p, &av) in a[i * k..][..k].iter().enumerate() {
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..][..n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
fn matmul_bt_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..][..k];
        for j in 0..n {
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(&b[j * k..][..k]) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `aᵀ · b` where `a` is `r×m` and `b` is `r×n`.
fn matmul_at_raw<T: Scalar>(a: &[T], b: &[T], r: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for row in 0..r {
        let brow = &b[row * n..][..n];
        for (i, &av) in a[row * m..][..m].iter().enumerate() {
            for (o, &bv) in out[i * n..][..n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MatmulGrads<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
}

/// `a (m×k) · b (k×n)`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2()?;
    let [kb, n] = b.dims2()?;
    if k != kb {
        return Err(Error::Shape(format!("matmul {m}x{k} by {kb}x{n}")));
    }
    Tensor::new([m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

pub fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad_out: &Tensor<T>) -> Result<MatmulGrads<T>> {
    let [m, k] = a.dims2()?;
    let [_, n] = b.dims2()?;
    grad_out.expect_shape(&[m, n])?;
    Ok(MatmulGrads {
        a: Tensor::new([m, k], matmul_bt_raw(grad_out.data(), b.data(), m, n, k))?,
        b: Tensor::new([k, n], matmul_at_raw(a.data(), grad_out.data(), m, k, n))?,
    })
}

/// `a (m×k) · bᵀ` with `b` shaped `n×k`.
pub fn matmul_bt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2()?;
    let [n, kb] = b.dims2()?;
    if k != kb {
        return Err(Error::Shape(format!("matmul_bt {m}x{k} by ({n}x{kb})ᵀ")));
    }
    Tensor::new([m, n], matmul_bt_raw(a.data(), b.data(), m, k, n))
}

pub fn matmul_bt_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad_out: &Tensor<T>) -> Result<MatmulGrads<T>> {
    let [m, k] = a.dims2()?;
    let [n, _] = b.dims2()?;
    grad_out.expect_shape(&[m, n])?;
    Ok(MatmulGrads {
        a: Tensor::new([m, k], matmul_raw(grad_out.data(), b.data(), m, n, k))?,
        b: Tensor::new([n, k], matmul_at_raw(grad_out.data(), a.data(), m, n, k))?,
    })
}

pub fn relu<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient is 0 at 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c] = t.dims2()?;
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Backward from the softmax *output*.
pub fn softmax_rows_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c] = output.dims2()?;
    grad_out.expect_shape(output.shape())?;
    let mut gi = grad_out.clone();
    for (grow, yrow) in gi.data_mut().chunks_mut(c).zip(output.data().chunks(c)) {
        let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
        for (g, &y) in grow.iter_mut().zip(yrow) {
            *g = y * (*g - dot);
        }
    }
    Ok(gi)
}

fn split_extents(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis..].iter().product();
    (outer, inner)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if a.rank() != b.rank() || axis >= a.rank() {
        return Err(Error::Shape(format!(
            "cannot concat {:?} and {:?} on axis {axis}",
            a.shape(),
            b.shape()
        )));
    }
    for (i, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if i != axis && x != y {
            return Err(Error::Shape(format!(
                "cannot concat {:?} and {:?} on axis {axis}",
                a.shape(),
                b.shape()
            )));
        }
    }
    let (outer, ia) = split_extents(a.shape(), axis);
    let (_, ib) = split_extents(b.shape(), axis);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * ia..][..ia]);
        data.extend_from_slice(&b.data()[o * ib..][..ib]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] += b.shape()[axis];
    Tensor::new(shape, data)
}

/// Inverse of [`concat`]: the first `at` entries of `axis` go left.
pub fn split<T: Scalar>(t: &Tensor<T>, axis: usize, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if axis >= t.rank() || at > t.shape()[axis] {
        return Err(Error::Shape(format!(
            "cannot split {:?} at {at} on axis {axis}",
            t.shape()
        )));
    }
    let mut sa = t.shape().to_vec();
    let mut sb = t.shape().to_vec();
    sa[axis] = at;
    sb[axis] -= at;
    let (outer, _) = split_extents(t.shape(), axis);
    let ia: usize = sa[axis..].iter().product();
    let ib: usize = sb[axis..].iter().product();
    let (mut da, mut db) = (Vec::with_capacity(outer * ia), Vec::with_capacity(outer * ib));
    for o in 0..outer {
        let chunk = &t.data()[o * (ia + ib)..][..ia + ib];
        da.extend_from_slice(&chunk[..ia]);
        db.extend_from_slice(&chunk[ia..]);
    }
    Ok((Tensor::new(sa, da)?, Tensor::new(sb, db)?))
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    target.expect_shape(pred.shape())?;
    if pred.is_empty() {
        return Err(Error::Shape("mse of empty tensors".into()));
    }
    let sum: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / T::lit(pred.len() as f64))
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    target.expect_shape(pred.shape())?;
    let k = T::lit(2.0 / pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| k * (p - t))
        .collect();
    Tensor::new(pred.shape().to_vec(), data)
}
