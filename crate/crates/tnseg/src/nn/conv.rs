//! NHWC convolution as a custom op with gemm-backed forward and backward.
//!
//! The stock CPU conv path is an order of magnitude slower than a plain
//! matmul of the same FLOP count, which makes CPU training of the
//! convolution-heavy fine branch impractical. This module routes both the
//! forward pass and both backward passes (input and weight gradients)
//! through im2col/col2im plus a single gemm call each, so convolutions run
//! at matmul speed.
//!
//! Layout conventions:
//! - activations are NHWC: `(batch, height, width, channels)`
//! - weights are `(k * k * c_in, c_out)`, rows ordered `(ky, kx, c_in)`
//!
//! Both `f32` and `f64` are supported; `f64` exists so gradient checks can
//! run at a precision where central finite differences are meaningful.

use candle_core::backend::BackendStorage;
use candle_core::backprop::GradStore;
use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Scalar types the conv kernels run on.
pub trait ConvScalar: candle_core::WithDType + Copy + Send + Sync + 'static {
    const ZERO: Self;
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        n: usize,
        k: usize,
        dst: *mut Self,
        dst_rs: isize,
        lhs: *const Self,
        lhs_rs: isize,
        lhs_cs: isize,
        rhs: *const Self,
        rhs_rs: isize,
        rhs_cs: isize,
        parallelism: gemm::Parallelism,
    );
    fn add_assign(&mut self, rhs: Self);
}

macro_rules! impl_conv_scalar {
    ($t:ty) => {
        impl ConvScalar for $t {
            const ZERO: Self = 0.0;
            unsafe fn gemm_raw(
                m: usize,
                n: usize,
                k: usize,
                dst: *mut Self,
                dst_rs: isize,
                lhs: *const Self,
                lhs_rs: isize,
                lhs_cs: isize,
                rhs: *const Self,
                rhs_rs: isize,
                rhs_cs: isize,
                parallelism: gemm::Parallelism,
            ) {
                gemm::gemm(
                    m,
                    n,
                    k,
                    dst,
                    1,
                    dst_rs,
                    false,
                    lhs,
                    lhs_cs,
                    lhs_rs,
                    rhs,
                    rhs_cs,
                    rhs_rs,
                    0.0,
                    1.0,
                    false,
                    false,
                    false,
                    parallelism,
                )
            }
            fn add_assign(&mut self, rhs: Self) {
                *self += rhs;
            }
        }
    };
}

impl_conv_scalar!(f32);
impl_conv_scalar!(f64);

fn parallelism() -> gemm::Parallelism {
    let n = candle_core::utils::get_num_threads();
    if n > 1 {
        gemm::Parallelism::Rayon(n)
    } else {
        gemm::Parallelism::None
    }
}

/// Geometry of one convolution application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    k: usize,
    stride: usize,
    pad: usize,
    b: usize,
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn infer(x_dims: &[usize], w_dims: &[usize], k: usize, stride: usize, pad: usize) -> Result<Self> {
        if x_dims.len() != 4 {
            return Err(Error::shape(format!(
                "conv input must be NHWC rank-4, got {x_dims:?}"
            )));
        }
        if w_dims.len() != 2 {
            return Err(Error::shape(format!(
                "conv weight must be (k*k*c_in, c_out), got {w_dims:?}"
            )));
        }
        let (b, h, w, c_in) = (x_dims[0], x_dims[1], x_dims[2], x_dims[3]);
        if w_dims[0] != k * k * c_in {
            return Err(Error::shape(format!(
                "conv weight rows {} != k*k*c_in = {}",
                w_dims[0],
                k * k * c_in
            )));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv input {h}x{w} too small for kernel {k} pad {pad}"
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self {
            k,
            stride,
            pad,
            b,
            h,
            w,
            c_in,
            c_out: w_dims[1],
            oh,
            ow,
        })
    }

    fn col_row_len(&self) -> usize {
        self.k * self.k * self.c_in
    }
}

/// Gather conv patches of one image into `col` rows `(oy*ow + ox, ky, kx, c)`.
fn im2col_image<T: ConvScalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (k, s, p, c) = (g.k, g.stride, g.pad, g.c_in);
    let row_len = g.col_row_len();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut col[(oy * g.ow + ox) * row_len..][..row_len];
            for ky in 0..k {
                let y = (oy * s + ky) as isize - p as isize;
                let seg = &mut row[ky * k * c..][..k * c];
                if y < 0 || y >= g.h as isize {
                    seg.fill(T::ZERO);
                    continue;
                }
                let x_row = &x[(y as usize * g.w) * c..][..g.w * c];
                for kx in 0..k {
                    let xx = (ox * s + kx) as isize - p as isize;
                    let dst = &mut seg[kx * c..][..c];
                    if xx < 0 || xx >= g.w as isize {
                        dst.fill(T::ZERO);
                    } else {
                        dst.copy_from_slice(&x_row[xx as usize * c..][..c]);
                    }
                }
            }
        }
    }
}

fn im2col<T: ConvScalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let per_image = g.oh * g.ow * g.col_row_len();
    let mut col = vec![T::ZERO; g.b * per_image];
    col.par_chunks_mut(per_image)
        .zip(x.par_chunks(g.h * g.w * g.c_in))
        .for_each(|(col_b, x_b)| im2col_image(x_b, g, col_b));
    col
}

/// Scatter-add col rows of one image back onto the input grid.
fn col2im_image<T: ConvScalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (k, s, p, c) = (g.k, g.stride, g.pad, g.c_in);
    let row_len = g.col_row_len();
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &col[(oy * g.ow + ox) * row_len..][..row_len];
            for ky in 0..k {
                let y = (oy * s + ky) as isize - p as isize;
                if y < 0 || y >= g.h as isize {
                    continue;
                }
                for kx in 0..k {
                    let xx = (ox * s + kx) as isize - p as isize;
                    if xx < 0 || xx >= g.w as isize {
                        continue;
                    }
                    let src = &row[(ky * k + kx) * c..][..c];
                    let dst = &mut dx[((y as usize * g.w) + xx as usize) * c..][..c];
                    for (d, v) in dst.iter_mut().zip(src) {
                        ConvScalar::add_assign(d, *v);
                    }
                }
            }
        }
    }
}

fn contiguous_slice<'a, T: ConvScalar>(s: &'a CpuStorage, l: &Layout) -> Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| Error::shape("conv op requires contiguous inputs"))?;
    let full = s.as_slice::<T>().map_err(candle_core::Error::from)?;
    Ok(&full[start..end])
}

fn run_conv_fwd<T: ConvScalar>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let col = im2col(x, g);
    let m = g.b * g.oh * g.ow;
    let kk = g.col_row_len();
    let n = g.c_out;
    let mut y = vec![T::ZERO; m * n];
    unsafe {
        T::gemm_raw(
            m,
            n,
            kk,
            y.as_mut_ptr(),
            n as isize,
            col.as_ptr(),
            kk as isize,
            1,
            w.as_ptr(),
            n as isize,
            1,
            parallelism(),
        );
    }
    y
}

fn run_conv_bwd_weight<T: ConvScalar>(x: &[T], gy: &[T], g: &ConvGeom) -> Vec<T> {
    let col = im2col(x, g);
    let m = g.col_row_len();
    let n = g.c_out;
    let kdim = g.b * g.oh * g.ow;
    let mut dw = vec![T::ZERO; m * n];
    // lhs = col^T via swapped strides
    unsafe {
        T::gemm_raw(
            m,
            n,
            kdim,
            dw.as_mut_ptr(),
            n as isize,
            col.as_ptr(),
            1,
            m as isize,
            gy.as_ptr(),
            n as isize,
            1,
            parallelism(),
        );
    }
    dw
}

fn run_conv_bwd_input<T: ConvScalar>(gy: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let m = g.b * g.oh * g.ow;
    let kk = g.col_row_len();
    let mut dcol = vec![T::ZERO; m * kk];
    // dcol = gy @ w^T
    unsafe {
        T::gemm_raw(
            m,
            kk,
            g.c_out,
            dcol.as_mut_ptr(),
            kk as isize,
            gy.as_ptr(),
            g.c_out as isize,
            1,
            w.as_ptr(),
            1,
            g.c_out as isize,
            parallelism(),
        );
    }
    let per_image_col = g.oh * g.ow * kk;
    let per_image_x = g.h * g.w * g.c_in;
    let mut dx = vec![T::ZERO; g.b * per_image_x];
    dx.par_chunks_mut(per_image_x)
        .zip(dcol.par_chunks(per_image_col))
        .for_each(|(dx_b, col_b)| col2im_image(col_b, g, dx_b));
    dx
}

fn dispatch2<F32Fn, F64Fn>(
    s1: &CpuStorage,
    l1: &Layout,
    s2: &CpuStorage,
    l2: &Layout,
    out_shape: Shape,
    f32_fn: F32Fn,
    f64_fn: F64Fn,
) -> candle_core::Result<(CpuStorage, Shape)>
where
    F32Fn: FnOnce(&[f32], &[f32]) -> Vec<f32>,
    F64Fn: FnOnce(&[f64], &[f64]) -> Vec<f64>,
{
    let to_c = |e: Error| -> candle_core::Error { candle_core::Error::Msg(e.to_string()) };
    match (s1.dtype(), s2.dtype()) {
        (DType::F32, DType::F32) => {
            let a = contiguous_slice::<f32>(s1, l1).map_err(to_c)?;
            let b = contiguous_slice::<f32>(s2, l2).map_err(to_c)?;
            Ok((CpuStorage::F32(f32_fn(a, b)), out_shape))
        }
        (DType::F64, DType::F64) => {
            let a = contiguous_slice::<f64>(s1, l1).map_err(to_c)?;
            let b = contiguous_slice::<f64>(s2, l2).map_err(to_c)?;
            Ok((CpuStorage::F64(f64_fn(a, b)), out_shape))
        }
        (d1, d2) => Err(candle_core::Error::Msg(format!(
            "conv op: unsupported or mismatched dtypes {d1:?}/{d2:?}"
        ))),
    }
}

/// Forward conv op; also the autodiff hook for the two backward ops.
struct Conv2dOp {
    k: usize,
    stride: usize,
    pad: usize,
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-nhwc"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = ConvGeom::infer(l1.dims(), l2.dims(), self.k, self.stride, self.pad)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let out_shape = Shape::from_dims(&[g.b, g.oh, g.ow, g.c_out]);
        dispatch2(
            s1,
            l1,
            s2,
            l2,
            out_shape,
            |x, w| run_conv_fwd(x, w, &g),
            |x, w| run_conv_fwd(x, w, &g),
        )
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let gy = grad_res.contiguous()?;
        let dx = gy.apply_op2_no_bwd(
            w,
            &ConvBwdInputOp {
                k: self.k,
                stride: self.stride,
                pad: self.pad,
                h: x.dim(1)?,
                w: x.dim(2)?,
            },
        )?;
        let dw = x.apply_op2_no_bwd(
            &gy,
            &ConvBwdWeightOp {
                k: self.k,
                stride: self.stride,
                pad: self.pad,
                c_out: w.dim(1)?,
            },
        )?;
        Ok((Some(dx), Some(dw)))
    }
}

/// dL/dx from (grad_y, w).
struct ConvBwdInputOp {
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl CustomOp2 for ConvBwdInputOp {
    fn name(&self) -> &'static str {
        "conv2d-nhwc-bwd-input"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let gy_dims = l1.dims();
        let c_in = l2.dims()[0] / (self.k * self.k);
        let x_dims = [gy_dims[0], self.h, self.w, c_in];
        let g = ConvGeom::infer(&x_dims, l2.dims(), self.k, self.stride, self.pad)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        if gy_dims != [g.b, g.oh, g.ow, g.c_out] {
            return Err(candle_core::Error::Msg(format!(
                "conv bwd-input: grad shape {gy_dims:?} != expected {:?}",
                [g.b, g.oh, g.ow, g.c_out]
            )));
        }
        let out_shape = Shape::from_dims(&x_dims);
        dispatch2(
            s1,
            l1,
            s2,
            l2,
            out_shape,
            |gy, w| run_conv_bwd_input(gy, w, &g),
            |gy, w| run_conv_bwd_input(gy, w, &g),
        )
    }
}

/// dL/dw from (x, grad_y).
struct ConvBwdWeightOp {
    k: usize,
    stride: usize,
    pad: usize,
    c_out: usize,
}

impl CustomOp2 for ConvBwdWeightOp {
    fn name(&self) -> &'static str {
        "conv2d-nhwc-bwd-weight"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let x_dims = l1.dims();
        let w_dims = [self.k * self.k * x_dims[3], self.c_out];
        let g = ConvGeom::infer(x_dims, &w_dims, self.k, self.stride, self.pad)
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let out_shape = Shape::from_dims(&w_dims);
        dispatch2(
            s1,
            l1,
            s2,
            l2,
            out_shape,
            |x, gy| run_conv_bwd_weight(x, gy, &g),
            |x, gy| run_conv_bwd_weight(x, gy, &g),
        )
    }
}

/// 2-D convolution over an NHWC tensor.
///
/// `x` is `(b, h, w, c_in)`, `w` is `(k*k*c_in, c_out)` with rows ordered
/// `(ky, kx, c_in)`. Returns `(b, oh, ow, c_out)`.
pub fn conv2d_nhwc(x: &Tensor, w: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    ConvGeom::infer(x.dims(), w.dims(), k, stride, pad)?;
    if x.dtype() != w.dtype() {
        return Err(Error::shape(format!(
            "conv dtype mismatch: {:?} vs {:?}",
            x.dtype(),
            w.dtype()
        )));
    }
    let x = x.contiguous()?;
    let w = w.contiguous()?;
    Ok(x.apply_op2(&w, Conv2dOp { k, stride, pad })?)
}

/// `(b, h, w, s*s*c)` -> `(b, h*s, w*s, c)`; the reshaping half of a
/// stride-`s`, kernel-`s` transposed convolution.
pub fn depth_to_space(x: &Tensor, s: usize) -> Result<Tensor> {
    let (b, h, w, c_big) = x.dims4()?;
    if c_big % (s * s) != 0 {
        return Err(Error::shape(format!(
            "depth_to_space: channels {c_big} not divisible by {}",
            s * s
        )));
    }
    let c = c_big / (s * s);
    let y = x
        .reshape((b, h, w, s, s, c))?
        .permute([0, 1, 3, 2, 4, 5])?
        .contiguous()?
        .reshape((b, h * s, w * s, c))?;
    Ok(y)
}

/// `(b, h, w, c)` -> `(b, h/p, w/p, p*p*c)`; non-overlapping patch gather,
/// the reshaping half of a stride-`p`, kernel-`p` convolution.
pub fn space_to_depth(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!(
            "space_to_depth: {h}x{w} not divisible by patch {p}"
        )));
    }
    let y = x
        .reshape((b, h / p, p, w / p, p, c))?
        .permute([0, 1, 3, 2, 4, 5])?
        .contiguous()?
        .reshape((b, h / p, w / p, p * p * c))?;
    Ok(y)
}

/// Gradient lookup that tolerates missing entries (zero gradient).
pub fn grad_or_zeros(grads: &GradStore, t: &Tensor) -> Result<Tensor> {
    match grads.get(t) {
        Some(g) => Ok(g.clone()),
        None => Ok(t.zeros_like()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn naive_conv(
        x: &[f32],
        w: &[f32],
        (b, h, wd, c): (usize, usize, usize, usize),
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f32> {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut y = vec![0f32; b * oh * ow * c_out];
        for bi in 0..b {
            for oy in 0..oh {
                for ox in 0..ow {
                    for co in 0..c_out {
                        let mut acc = 0f32;
                        for ky in 0..k {
                            for kx in 0..k {
                                let yy = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                if yy < 0 || yy >= h as isize || xx < 0 || xx >= wd as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    let xv = x[((bi * h + yy as usize) * wd + xx as usize) * c + ci];
                                    let wv = w[((ky * k + kx) * c + ci) * c_out + co];
                                    acc += xv * wv;
                                }
                            }
                        }
                        y[((bi * oh + oy) * ow + ox) * c_out + co] = acc;
                    }
                }
            }
        }
        y
    }

    fn rand_vec(rng: &mut ChaCha12Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_naive_loop() {
        let dev = Device::Cpu;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for &(b, h, wd, c, c_out, k, stride, pad) in &[
            (2usize, 6usize, 5usize, 3usize, 4usize, 3usize, 1usize, 1usize),
            (1, 8, 8, 2, 3, 3, 2, 1),
            (2, 7, 7, 4, 2, 1, 1, 0),
            (1, 9, 9, 1, 2, 4, 4, 0),
        ] {
            let xv = rand_vec(&mut rng, b * h * wd * c);
            let wv = rand_vec(&mut rng, k * k * c * c_out);
            let x = Tensor::from_vec(xv.clone(), (b, h, wd, c), &dev).unwrap();
            let w = Tensor::from_vec(wv.clone(), (k * k * c, c_out), &dev).unwrap();
            let y = conv2d_nhwc(&x, &w, k, stride, pad).unwrap();
            let expect = naive_conv(&xv, &wv, (b, h, wd, c), c_out, k, stride, pad);
            let got = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(got.len(), expect.len());
            for (a, e) in got.iter().zip(&expect) {
                assert!((a - e).abs() < 1e-4, "conv mismatch {a} vs {e}");
            }
        }
    }

    /// Central finite differences on an f64 instance; the analytic gradients
    /// must match to ~1e-8, far tighter than any training-time need.
    #[test]
    fn conv_gradients_match_finite_differences() {
        let dev = Device::Cpu;
        let (b, h, wd, c, c_out, k, stride, pad) = (1usize, 5usize, 4usize, 2usize, 3usize, 3usize, 1usize, 1usize);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let xv: Vec<f64> = (0..b * h * wd * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..k * k * c * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cv: Vec<f64> = (0..b * h * wd * c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let x = Var::from_tensor(&Tensor::from_vec(xv.clone(), (b, h, wd, c), &dev).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::from_vec(wv.clone(), (k * k * c, c_out), &dev).unwrap()).unwrap();
        let coef = Tensor::from_vec(cv, (b, h, wd, c_out), &dev).unwrap();

        let loss_fn = |xt: &Tensor, wt: &Tensor| -> f64 {
            let y = conv2d_nhwc(xt, wt, k, stride, pad).unwrap();
            y.mul(&coef).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
        };

        let y = conv2d_nhwc(x.as_tensor(), w.as_tensor(), k, stride, pad).unwrap();
        let loss = y.mul(&coef).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let dx = grads.get(x.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let dw = grads.get(w.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();

        let eps = 1e-5;
        for i in 0..xv.len() {
            let mut plus = xv.clone();
            plus[i] += eps;
            let mut minus = xv.clone();
            minus[i] -= eps;
            let tp = Tensor::from_vec(plus, (b, h, wd, c), &dev).unwrap();
            let tm = Tensor::from_vec(minus, (b, h, wd, c), &dev).unwrap();
            let fd = (loss_fn(&tp, w.as_tensor()) - loss_fn(&tm, w.as_tensor())) / (2.0 * eps);
            assert!(
                (fd - dx[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "dx[{i}]: fd {fd} analytic {}",
                dx[i]
            );
        }
        for i in 0..wv.len() {
            let mut plus = wv.clone();
            plus[i] += eps;
            let mut minus = wv.clone();
            minus[i] -= eps;
            let tp = Tensor::from_vec(plus, (k * k * c, c_out), &dev).unwrap();
            let tm = Tensor::from_vec(minus, (k * k * c, c_out), &dev).unwrap();
            let fd = (loss_fn(x.as_tensor(), &tp) - loss_fn(x.as_tensor(), &tm)) / (2.0 * eps);
            assert!(
                (fd - dw[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "dw[{i}]: fd {fd} analytic {}",
                dw[i]
            );
        }
    }

    #[test]
    fn depth_space_roundtrip() {
        let dev = Device::Cpu;
        let x = Tensor::rand(0f32, 1f32, (2, 4, 6, 8), &dev).unwrap();
        let down = space_to_depth(&x, 2).unwrap();
        assert_eq!(down.dims(), &[2, 2, 3, 32]);
        let up = depth_to_space(&down, 2).unwrap();
        assert_eq!(up.dims(), x.dims());
        let diff = up.sub(&x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let dev = Device::Cpu;
        let x = Tensor::zeros((1, 4, 4, 2), DType::F32, &dev).unwrap();
        let w = Tensor::zeros((17, 3), DType::F32, &dev).unwrap();
        assert!(conv2d_nhwc(&x, &w, 3, 1, 1).is_err());
    }
}
