//! Batched forward and backward kernels. Activations are row-major
//! `(batch, h, w, c)`.

use super::scalar::{gemm, Scalar};
use super::spec::Shape;

/// Gathers every `kh x kw x c` patch of a valid correlation into one row.
pub fn im2col<T: Scalar>(x: &[T], n: usize, s: Shape, kh: usize, kw: usize, cols: &mut [T]) {
    let (oh, ow) = (s.h - kh + 1, s.w - kw + 1);
    let k = kh * kw * s.c;
    let row_len = kw * s.c;
    for b in 0..n {
        let img = &x[b * s.len()..(b + 1) * s.len()];
        for i in 0..oh {
            for j in 0..ow {
                let row = &mut cols[((b * oh + i) * ow + j) * k..][..k];
                for di in 0..kh {
                    let src = ((i + di) * s.w + j) * s.c;
                    row[di * row_len..(di + 1) * row_len].copy_from_slice(&img[src..src + row_len]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back, accumulating into `dx`.
pub fn col2im_add<T: Scalar>(dcols: &[T], n: usize, s: Shape, kh: usize, kw: usize, dx: &mut [T]) {
    let (oh, ow) = (s.h - kh + 1, s.w - kw + 1);
    let k = kh * kw * s.c;
    let row_len = kw * s.c;
    for b in 0..n {
        let img = &mut dx[b * s.len()..(b + 1) * s.len()];
        for i in 0..oh {
            for j in 0..ow {
                let row = &dcols[((b * oh + i) * ow + j) * k..][..k];
                for di in 0..kh {
                    let dst = ((i + di) * s.w + j) * s.c;
                    for (d, g) in img[dst..dst + row_len].iter_mut().zip(&row[di * row_len..]) {
                        *d = *d + *g;
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T]) {
    for row in y.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], db: &mut [T]) {
    db.iter_mut().for_each(|v| *v = T::zero());
    for row in dy.chunks_exact(db.len()) {
        for (g, d) in db.iter_mut().zip(row) {
            *g = *g + *d;
        }
    }
}

pub struct ConvDims {
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.input.c
    }

    fn rows(&self, n: usize) -> usize {
        n * self.output.h * self.output.w
    }

    pub fn cols_len(&self, n: usize) -> usize {
        self.rows(n) * self.patch()
    }
}

pub fn conv2d_forward<T: Scalar>(
    d: &ConvDims,
    n: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    cols: &mut [T],
    y: &mut [T],
) {
    let (rows, k, f) = (d.rows(n), d.patch(), d.output.c);
    im2col(x, n, d.input, d.kh, d.kw, &mut cols[..rows * k]);
    gemm(
        rows,
        k,
        f,
        T::one(),
        cols,
        false,
        w,
        false,
        T::zero(),
        &mut y[..rows * f],
    );
    add_bias(&mut y[..rows * f], b);
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    d: &ConvDims,
    n: usize,
    x: &[T],
    dy: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    cols: &mut [T],
    dx: Option<&mut [T]>,
) {
    let (rows, k, f) = (d.rows(n), d.patch(), d.output.c);
    let dy = &dy[..rows * f];
    im2col(x, n, d.input, d.kh, d.kw, &mut cols[..rows * k]);
    gemm(k, rows, f, T::one(), cols, true, dy, false, T::zero(), dw);
    bias_grad(dy, db);
    if let Some(dx) = dx {
        gemm(
            rows,
            f,
            k,
            T::one(),
            dy,
            false,
            w,
            true,
            T::zero(),
            &mut cols[..rows * k],
        );
        dx[..n * d.input.len()]
            .iter_mut()
            .for_each(|v| *v = T::zero());
        col2im_add(cols, n, d.input, d.kh, d.kw, dx);
    }
}

pub fn dense_forward<T: Scalar>(
    n: usize,
    fan_in: usize,
    units: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    y: &mut [T],
) {
    gemm(
        n,
        fan_in,
        units,
        T::one(),
        x,
        false,
        w,
        false,
        T::zero(),
        &mut y[..n * units],
    );
    add_bias(&mut y[..n * units], b);
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Scalar>(
    n: usize,
    fan_in: usize,
    units: usize,
    x: &[T],
    dy: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let dy = &dy[..n * units];
    gemm(
        fan_in,
        n,
        units,
        T::one(),
        x,
        true,
        dy,
        false,
        T::zero(),
        dw,
    );
    bias_grad(dy, db);
    if let Some(dx) = dx {
        gemm(
            n,
            units,
            fan_in,
            T::one(),
            dy,
            false,
            w,
            true,
            T::zero(),
            dx,
        );
    }
}

pub struct Conv1dDims {
    pub length: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    pub out_length: usize,
}

impl Conv1dDims {
    pub fn contrib_len(&self, n: usize) -> usize {
        n * self.length * self.kernel * self.filters
    }
}

/// Transposed 1-D convolution: each input position `l` adds
/// `W[c, k, f] * x[l, c]` to output position `l * stride + k`.
pub fn conv1d_up_forward<T: Scalar>(
    d: &Conv1dDims,
    n: usize,
    x: &[T],
    w: &[T],
    b: &[T],
    contrib: &mut [T],
    y: &mut [T],
) {
    let kf = d.kernel * d.filters;
    let rows = n * d.length;
    gemm(
        rows,
        d.in_c,
        kf,
        T::one(),
        x,
        false,
        w,
        false,
        T::zero(),
        &mut contrib[..rows * kf],
    );
    let out_len = d.out_length * d.filters;
    for bi in 0..n {
        let out = &mut y[bi * out_len..(bi + 1) * out_len];
        for t in 0..d.out_length {
            out[t * d.filters..(t + 1) * d.filters].copy_from_slice(b);
        }
        for l in 0..d.length {
            let src = &contrib[(bi * d.length + l) * kf..][..kf];
            let base = l * d.stride * d.filters;
            for (o, c) in out[base..base + kf].iter_mut().zip(src) {
                *o = *o + *c;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_up_backward<T: Scalar>(
    d: &Conv1dDims,
    n: usize,
    x: &[T],
    dy: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    dcontrib: &mut [T],
    dx: Option<&mut [T]>,
) {
    let kf = d.kernel * d.filters;
    let rows = n * d.length;
    let out_len = d.out_length * d.filters;
    for bi in 0..n {
        let g = &dy[bi * out_len..(bi + 1) * out_len];
        for l in 0..d.length {
            let base = l * d.stride * d.filters;
            dcontrib[(bi * d.length + l) * kf..][..kf].copy_from_slice(&g[base..base + kf]);
        }
    }
    gemm(
        d.in_c,
        rows,
        kf,
        T::one(),
        x,
        true,
        dcontrib,
        false,
        T::zero(),
        dw,
    );
    bias_grad(&dy[..n * out_len], db);
    if let Some(dx) = dx {
        gemm(
            rows,
            kf,
            d.in_c,
            T::one(),
            dcontrib,
            false,
            w,
            true,
            T::zero(),
            dx,
        );
    }
}

pub fn leaky_forward<T: Scalar>(slope: T, x: &[T], y: &mut [T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o = if v > T::zero() { v } else { slope * v };
    }
}

pub fn leaky_backward<T: Scalar>(slope: T, x: &[T], dy: &[T], dx: &mut [T]) {
    for ((d, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        *d = if v > T::zero() { g } else { slope * g };
    }
}

/// Inference-mode batch norm with running statistics.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_infer<T: Scalar>(
    c: usize,
    eps: T,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    x: &[T],
    y: &mut [T],
) {
    for (orow, irow) in y.chunks_exact_mut(c).zip(x.chunks_exact(c)) {
        for j in 0..c {
            orow[j] = gamma[j] * (irow[j] - mean[j]) / (var[j] + eps).sqrt() + beta[j];
        }
    }
}

/// Training-mode batch norm over all rows. Writes the normalized values to
/// `xhat`, the per-feature `1/sqrt(var + eps)` to `inv_std`, and the biased
/// batch mean and variance to `batch_mean` / `batch_var`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train<T: Scalar>(
    c: usize,
    eps: T,
    gamma: &[T],
    beta: &[T],
    x: &[T],
    xhat: &mut [T],
    inv_std: &mut [T],
    batch_mean: &mut [T],
    batch_var: &mut [T],
    y: &mut [T],
) {
    let rows = x.len() / c;
    let m = T::of(rows as f64);
    batch_mean.iter_mut().for_each(|v| *v = T::zero());
    batch_var.iter_mut().for_each(|v| *v = T::zero());
    for row in x.chunks_exact(c) {
        for j in 0..c {
            batch_mean[j] = batch_mean[j] + row[j];
        }
    }
    batch_mean.iter_mut().for_each(|v| *v = *v / m);
    for row in x.chunks_exact(c) {
        for j in 0..c {
            let d = row[j] - batch_mean[j];
            batch_var[j] = batch_var[j] + d * d;
        }
    }
    for j in 0..c {
        batch_var[j] = batch_var[j] / m;
        inv_std[j] = T::one() / (batch_var[j] + eps).sqrt();
    }
    for ((orow, hrow), irow) in y
        .chunks_exact_mut(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(x.chunks_exact(c))
    {
        for j in 0..c {
            hrow[j] = (irow[j] - batch_mean[j]) * inv_std[j];
            orow[j] = gamma[j] * hrow[j] + beta[j];
        }
    }
}

/// Gradient through training-mode batch norm, including the dependence of
/// the batch statistics on every input.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward<T: Scalar>(
    c: usize,
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let rows = xhat.len() / c;
    let m = T::of(rows as f64);
    dgamma.iter_mut().for_each(|v| *v = T::zero());
    dbeta.iter_mut().for_each(|v| *v = T::zero());
    for (grow, hrow) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            dbeta[j] = dbeta[j] + grow[j];
            dgamma[j] = dgamma[j] + grow[j] * hrow[j];
        }
    }
    for ((drow, grow), hrow) in dx
        .chunks_exact_mut(c)
        .zip(dy.chunks_exact(c))
        .zip(xhat.chunks_exact(c))
    {
        for j in 0..c {
            drow[j] = gamma[j] * inv_std[j] / m * (m * grow[j] - dbeta[j] - hrow[j] * dgamma[j]);
        }
    }
}
