//! Dense kernels shared by the model: 3x3 convolution through im2col + GEMM,
//! nearest upsampling, global average pooling and the leaky rectifier.
//!
//! Activations are single-sample `C x H x W` buffers in row-major order.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

/// Floating-point element type of the model: `f32` for training, `f64` for
/// gradient verification.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major matrices, where
    /// `a` is `m x k`, `b` is `k x n`; transposes are expressed through strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                assert!(a.len() >= m * k && b.len() >= k * n);
                // SAFETY: the asserts above bound every index reachable with
                // the given dimensions and (dense) strides.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Wrap-around (periodic tiling) padding.
    Circular,
    /// Zero padding.
    Zero,
}

pub const LEAKY_SLOPE: f64 = 0.01;

/// Source-pixel lookup for a 3x3 convolution with one pixel of padding:
/// entry `[tap * out_len + p]` is the input spatial index read by kernel tap
/// `tap` at output position `p`, or `-1` for a zero-padded read.
#[derive(Debug, Clone)]
pub struct ConvGeometry {
    pub h: usize,
    pub w: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    map: Vec<i32>,
}

impl ConvGeometry {
    pub fn new(h: usize, w: usize, stride: usize, padding: Padding) -> Self {
        let out_h = (h + 2 - 3) / stride + 1;
        let out_w = (w + 2 - 3) / stride + 1;
        let out_len = out_h * out_w;
        let mut map = vec![-1i32; 9 * out_len];
        for ky in 0..3 {
            for kx in 0..3 {
                let tap = ky * 3 + kx;
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let y = (oy * stride + ky) as i64 - 1;
                        let x = (ox * stride + kx) as i64 - 1;
                        let src = match padding {
                            Padding::Circular => {
                                let y = y.rem_euclid(h as i64);
                                let x = x.rem_euclid(w as i64);
                                (y * w as i64 + x) as i32
                            }
                            Padding::Zero => {
                                if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                                    -1
                                } else {
                                    (y * w as i64 + x) as i32
                                }
                            }
                        };
                        map[tap * out_len + oy * out_w + ox] = src;
                    }
                }
            }
        }
        Self {
            h,
            w,
            stride,
            out_h,
            out_w,
            map,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// `(c_in * 9) x out_len` patch matrix.
    pub fn im2col<T: Scalar>(&self, input: &[T], c_in: usize) -> Vec<T> {
        let hw = self.h * self.w;
        let out_len = self.out_len();
        let mut cols = vec![T::zero(); c_in * 9 * out_len];
        for ci in 0..c_in {
            let plane = &input[ci * hw..(ci + 1) * hw];
            for tap in 0..9 {
                let dst = &mut cols[(ci * 9 + tap) * out_len..(ci * 9 + tap + 1) * out_len];
                let src = &self.map[tap * out_len..(tap + 1) * out_len];
                for (d, &s) in dst.iter_mut().zip(src) {
                    if s >= 0 {
                        *d = plane[s as usize];
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`ConvGeometry::im2col`]: scatters patch gradients back.
    pub fn col2im<T: Scalar>(&self, cols: &[T], c_in: usize) -> Vec<T> {
        let hw = self.h * self.w;
        let out_len = self.out_len();
        let mut out = vec![T::zero(); c_in * hw];
        for ci in 0..c_in {
            let plane = &mut out[ci * hw..(ci + 1) * hw];
            for tap in 0..9 {
                let src = &cols[(ci * 9 + tap) * out_len..(ci * 9 + tap + 1) * out_len];
                let idx = &self.map[tap * out_len..(tap + 1) * out_len];
                for (&g, &s) in src.iter().zip(idx) {
                    if s >= 0 {
                        plane[s as usize] += g;
                    }
                }
            }
        }
        out
    }
}

/// Convolution forward: returns the output and the patch matrix kept for the
/// backward pass.
pub fn conv_forward<T: Scalar>(
    geo: &ConvGeometry,
    input: &[T],
    c_in: usize,
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> (Vec<T>, Vec<T>) {
    let cols = geo.im2col(input, c_in);
    let out_len = geo.out_len();
    let mut out = Vec::with_capacity(c_out * out_len);
    for &b in bias.iter().take(c_out) {
        out.extend(std::iter::repeat_n(b, out_len));
    }
    let k = c_in * 9;
    T::gemm(
        c_out,
        k,
        out_len,
        T::one(),
        weight,
        k as isize,
        1,
        &cols,
        out_len as isize,
        1,
        T::one(),
        &mut out,
    );
    (out, cols)
}

/// Convolution backward; accumulates into `grad_w`/`grad_b` and returns the
/// input gradient when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    geo: &ConvGeometry,
    cols: &[T],
    c_in: usize,
    weight: &[T],
    c_out: usize,
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let out_len = geo.out_len();
    let k = c_in * 9;
    for (co, gb) in grad_b.iter_mut().enumerate().take(c_out) {
        *gb += grad_out[co * out_len..(co + 1) * out_len].iter().copied().sum::<T>();
    }
    // grad_w (c_out x k) += grad_out (c_out x L) * cols^T (L x k)
    T::gemm(
        c_out,
        out_len,
        k,
        T::one(),
        grad_out,
        out_len as isize,
        1,
        cols,
        1,
        out_len as isize,
        T::one(),
        grad_w,
    );
    if !need_input_grad {
        return None;
    }
    // grad_cols (k x L) = weight^T (k x c_out) * grad_out (c_out x L)
    let mut grad_cols = vec![T::zero(); k * out_len];
    T::gemm(
        k,
        c_out,
        out_len,
        T::one(),
        weight,
        1,
        k as isize,
        grad_out,
        out_len as isize,
        1,
        T::zero(),
        &mut grad_cols,
    );
    Some(geo.col2im(&grad_cols, c_in))
}

#[inline]
pub fn leaky<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::from_f64_lossy(LEAKY_SLOPE)
    }
}

pub fn leaky_backward<T: Scalar>(pre: &[T], grad: &mut [T]) {
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    for (g, &x) in grad.iter_mut().zip(pre) {
        if x <= T::zero() {
            *g *= slope;
        }
    }
}

pub fn upsample2<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[(ch * oh + y) * ow + x] = input[(ch * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Scalar>(grad: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out[(ch * h + y / 2) * w + x / 2] += grad[(ch * oh + y) * ow + x];
            }
        }
    }
    out
}

pub fn global_avg_pool<T: Scalar>(input: &[T], c: usize, hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(hw).unwrap();
    (0..c)
        .map(|ch| input[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv)
        .collect()
}

pub fn global_avg_pool_backward<T: Scalar>(grad: &[T], hw: usize) -> Vec<T> {
    let inv = T::one() / T::from_usize(hw).unwrap();
    grad.iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
        .collect()
}

/// `y = W x + b` with `W` stored `n_out x n_in`.
pub fn dense_forward<T: Scalar>(weight: &[T], bias: &[T], x: &[T], n_out: usize) -> Vec<T> {
    let n_in = x.len();
    (0..n_out)
        .map(|o| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            row.iter().zip(x).fold(bias[o], |acc, (&w, &v)| acc + w * v)
        })
        .collect()
}

pub fn dense_backward<T: Scalar>(
    weight: &[T],
    x: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
) -> Vec<T> {
    let n_in = x.len();
    let mut grad_in = vec![T::zero(); n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_b[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let grow = &mut grad_w[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * x[i];
            grad_in[i] += g * row[i];
        }
    }
    grad_in
}

/// Cyclic shift of every channel by `(s, s)`.
pub fn roll2d<T: Copy>(input: &[T], c: usize, h: usize, w: usize, s: usize) -> Vec<T> {
    let mut out = input.to_vec();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + (y + s) % h) * w + (x + s) % w] = input[(ch * h + y) * w + x];
            }
        }
    }
    out
}
