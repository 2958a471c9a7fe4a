//! 2-D convolution kernels: im2col lowering onto GEMM, plus the matching
//! col2im scatter for the input gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Self> {
        if weight.h != weight.w {
            bail!(Dimension, "conv2d: kernel must be square, got {weight}");
        }
        if input.c != weight.c {
            bail!(Dimension, "conv2d: input has {} channels, kernel expects {}", input.c, weight.c);
        }
        if stride == 0 {
            bail!(Geometry, "conv2d: stride must be positive");
        }
        let k = weight.h;
        let (ph, pw) = (input.h + 2 * padding, input.w + 2 * padding);
        if k == 0 || k > ph || k > pw {
            bail!(Geometry, "conv2d: kernel {k} does not fit padded input {ph}x{pw}");
        }
        Ok(ConvGeometry {
            in_ch: input.c,
            out_ch: weight.n,
            kernel: k,
            stride,
            padding,
            in_h: input.h,
            in_w: input.w,
            out_h: (ph - k) / stride + 1,
            out_w: (pw - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Pointwise convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output column range `[lo, hi)` whose input column `ox*stride + kx - pad`
    /// stays inside `[0, in_w)`.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let pad = self.padding as isize;
        let s = self.stride as isize;
        let kx = kx as isize;
        let lo = ((pad - kx).max(0) + s - 1) / s;
        let hi_num = self.in_w as isize - 1 + pad - kx;
        let hi = if hi_num < 0 { 0 } else { (hi_num / s + 1).min(self.out_w as isize) };
        (lo as usize, (hi.max(lo)) as usize)
    }
}

/// Lowers one batch item `(C, H, W)` into `(C*k*k, out_h*out_w)`.
pub fn im2col<T: Scalar>(g: &ConvGeometry, x: &[T], col: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let xc = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = lo + kx - g.padding;
                        drow[lo..hi].copy_from_slice(&srow[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            drow[ox] = srow[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients into `dx`.
pub fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], dx: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    for c in 0..g.in_ch {
        let dxc = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let srow = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let drow = &mut dxc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in lo..hi {
                        drow[ox * g.stride + kx - g.padding] += srow[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<(ConvGeometry, Tensor<T>)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.numel() != g.out_ch {
            bail!(Dimension, "conv2d: bias has {} entries, expected {}", b.numel(), g.out_ch);
        }
    }
    let batch = input.shape().n;
    let out_shape = Shape::new(batch, g.out_ch, g.out_h, g.out_w);
    let mut out = vec![T::zero(); out_shape.numel()];
    let plane = g.out_plane();
    let pk = g.patch_len();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); pk * plane] };
    let item = input.shape().item_len();
    for n in 0..batch {
        let x = &input.data()[n * item..(n + 1) * item];
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(&g, x, &mut col);
            &col
        };
        let y = &mut out[n * g.out_ch * plane..(n + 1) * g.out_ch * plane];
        if let Some(b) = bias {
            for (o, chunk) in y.chunks_exact_mut(plane).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.out_ch,
            pk,
            plane,
            T::one(),
            weight.data(),
            (pk as isize, 1),
            cols,
            (plane as isize, 1),
            beta,
            y,
            (plane as isize, 1),
        );
    }
    Ok((g, Tensor::new(out_shape, out)?))
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let batch = input.shape().n;
    let plane = g.out_plane();
    let pk = g.patch_len();
    let item = input.shape().item_len();
    let mut dx = need_input.then(|| vec![T::zero(); input.numel()]);
    let mut dw = need_weight.then(|| vec![T::zero(); weight.numel()]);
    let mut db = need_bias.then(|| vec![T::zero(); g.out_ch]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); pk * plane] };
    let mut dcol = if need_input && !g.is_pointwise() { vec![T::zero(); pk * plane] } else { Vec::new() };
    for n in 0..batch {
        let gy = &grad_out.data()[n * g.out_ch * plane..(n + 1) * g.out_ch * plane];
        if let Some(db) = db.as_mut() {
            for (o, chunk) in gy.chunks_exact(plane).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        let x = &input.data()[n * item..(n + 1) * item];
        if let Some(dw) = dw.as_mut() {
            let cols: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut col);
                &col
            };
            // dW += dY * col^T
            T::gemm(
                g.out_ch,
                plane,
                pk,
                T::one(),
                gy,
                (plane as isize, 1),
                cols,
                (1, plane as isize),
                T::one(),
                dw,
                (pk as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * item..(n + 1) * item];
            if g.is_pointwise() {
                // dX = W^T * dY
                T::gemm(
                    pk,
                    g.out_ch,
                    plane,
                    T::one(),
                    weight.data(),
                    (1, pk as isize),
                    gy,
                    (plane as isize, 1),
                    T::one(),
                    dxn,
                    (plane as isize, 1),
                );
            } else {
                T::gemm(
                    pk,
                    g.out_ch,
                    plane,
                    T::one(),
                    weight.data(),
                    (1, pk as isize),
                    gy,
                    (plane as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (plane as isize, 1),
                );
                col2im(g, &dcol, dxn);
            }
        }
    }
    let wrap = |shape: Shape, v: Vec<T>| Tensor::new(shape, v).expect("gradient extents match");
    ConvGrads {
        input: dx.map(|v| wrap(input.shape(), v)),
        weight: dw.map(|v| wrap(weight.shape(), v)),
        bias: db.map(|v| wrap(Shape::new(1, g.out_ch, 1, 1), v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sum_identity() {
        let x = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let (_, y) = conv2d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn pointwise_identity_kernel() {
        let x = Tensor::<f64>::from_fn([2, 3, 4, 5], |n, c, y, x| (n + 2 * c + 3 * y) as f64 - 0.5 * x as f64);
        let w = Tensor::<f64>::from_fn([3, 3, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let b = Tensor::<f64>::zeros([1, 3, 1, 1]);
        let (_, y) = conv2d_forward(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::<f32>::zeros([1, 2, 9, 7]);
        let w = Tensor::<f32>::zeros([4, 2, 3, 3]);
        let (g, y) = conv2d_forward(&x, &w, None, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), ((9 + 2 - 3) / 2 + 1, (7 + 2 - 3) / 2 + 1));
        assert_eq!(y.shape(), Shape::new(1, 4, 5, 4));
    }

    #[test]
    fn geometry_errors() {
        let x = Tensor::<f32>::zeros([1, 2, 2, 2]);
        let bad_ch = Tensor::<f32>::zeros([1, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &bad_ch, None, 1, 1), Err(crate::Error::Dimension(_))));
        let big = Tensor::<f32>::zeros([1, 2, 5, 5]);
        assert!(matches!(conv2d_forward(&x, &big, None, 1, 0), Err(crate::Error::Geometry(_))));
    }
}
