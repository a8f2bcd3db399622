//! 2-D convolution lowered to matrix multiplication (im2col).
//!
//! Cross-correlation convention: the kernel is not flipped, so
//! `out[n, o, y, x] = bias[o] + Σ w[o, i, ky, kx] · in[n, i, y·s + ky − p, x·s + kx − p]`
//! with zero padding outside the input.

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Real = f32> {
    /// `(Cout, Cin, K, K)`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real = f32> {
    pub x: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>, stride: usize, pad: usize) -> Result<Self> {
        let s = weight.shape();
        if s.h() != s.w() || !(s.h() == 1 || s.h() == 3) {
            return Err(shape_err!("conv kernel must be 1x1 or 3x3, got {}x{}", s.h(), s.w()));
        }
        if bias.len() != s.n() {
            return Err(shape_err!("conv bias length {} for {} outputs", bias.len(), s.n()));
        }
        if stride == 0 {
            return Err(Error::Domain("conv stride must be positive".into()));
        }
        Ok(Self {
            weight,
            bias,
            stride,
            pad,
        })
    }

    /// He-initialized weights and zero bias.
    pub fn kaiming(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Result<Self> {
        let weight = Tensor::kaiming_init([cout, cin, kernel, kernel], cin * kernel * kernel, rng)?;
        Self::new(weight, vec![T::zero(); cout], stride, pad)
    }

    pub fn cin(&self) -> usize {
        self.weight.shape().c()
    }
    pub fn cout(&self) -> usize {
        self.weight.shape().n()
    }
    pub fn kernel(&self) -> usize {
        self.weight.shape().h()
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c() != self.cin() {
            return Err(shape_err!(
                "conv expects {} input channels, got {}",
                self.cin(),
                input.c()
            ));
        }
        let k = self.kernel();
        let h = conv_output_dim(input.h(), k, self.stride, self.pad)?;
        let w = conv_output_dim(input.w(), k, self.stride, self.pad)?;
        Ok(Shape::new(input.n(), self.cout(), h, w))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `⌊(size + 2·pad − kernel) / stride⌋ + 1`.
///
/// Floor division, so a stride-2 3×3 "same" convolution halves an even
/// size exactly (64 → 32) and trailing padding may go unused.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = size + 2 * pad;
    if padded < kernel {
        return Err(shape_err!("padded size {padded} smaller than kernel {kernel}"));
    }
    Ok((padded - kernel) / stride + 1)
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Real>(p: &ConvParams<T>, input: Shape, output: Shape) -> Self {
        Geometry {
            cin: input.c(),
            h: input.h(),
            w: input.w(),
            k: p.kernel(),
            stride: p.stride,
            pad: p.pad,
            ho: output.h(),
            wo: output.w(),
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Input column range `[lo, hi)` of output columns whose tap `kx`
    /// lands inside the image, as output-column indices.
    fn valid_out_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        // Largest ox with ox·s + kx − pad ≤ w − 1.
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfolds one sample `(Cin, H, W)` into `(Cin·K·K, Ho·Wo)`.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let ncol = self.cols();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    let (lo, hi) = self.valid_out_cols(kx);
                    for oy in 0..self.ho {
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        if self.stride == 1 {
                            let start = lo + kx - self.pad;
                            out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                out_row[ox] = src[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters columns back onto a zeroed sample.
    fn col2im<T: Real>(&self, cols: &[T], x: &mut [T]) {
        let ncol = self.cols();
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    let (lo, hi) = self.valid_out_cols(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let in_row = &src[oy * self.wo..(oy + 1) * self.wo];
                        for ox in lo..hi {
                            dst[ox * self.stride + kx - self.pad] = dst[ox * self.stride + kx - self.pad] + in_row[ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let out_shape = p.output_shape(x.shape())?;
    let g = Geometry::new(p, x.shape(), out_shape);
    let (m, k, n) = (p.cout(), g.rows(), g.cols());
    let mut out = Tensor::zeros(out_shape)?;
    let mut cols = if p.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * n]
    };
    for b in 0..x.shape().n() {
        let rhs: &[T] = if p.is_pointwise() {
            x.sample(b)
        } else {
            g.im2col(x.sample(b), &mut cols);
            &cols
        };
        let y = out.sample_mut(b);
        for (o, plane) in y.chunks_exact_mut(n).enumerate() {
            plane.fill(p.bias[o]);
        }
        T::gemm(
            m,
            k,
            n,
            T::one(),
            p.weight.data(),
            (k as isize, 1),
            rhs,
            (n as isize, 1),
            T::one(),
            y,
            (n as isize, 1),
        );
    }
    Ok(out)
}

pub fn conv2d_backward<T: Real>(x: &Tensor<T>, p: &ConvParams<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
    let out_shape = p.output_shape(x.shape())?;
    if upstream.shape() != out_shape {
        return Err(shape_err!(
            "conv backward: upstream {} but output is {out_shape}",
            upstream.shape()
        ));
    }
    let g = Geometry::new(p, x.shape(), out_shape);
    let (m, k, n) = (p.cout(), g.rows(), g.cols());
    let mut gx = Tensor::zeros(x.shape())?;
    let mut gw = Tensor::zeros(p.weight.shape())?;
    let mut gb = vec![T::zero(); m];
    let pointwise = p.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * n] };
    let mut dcols = if pointwise { Vec::new() } else { vec![T::zero(); k * n] };
    for b in 0..x.shape().n() {
        let dy = upstream.sample(b);
        for (o, plane) in dy.chunks_exact(n).enumerate() {
            gb[o] = gb[o] + plane.iter().copied().sum::<T>();
        }
        let rhs: &[T] = if pointwise {
            x.sample(b)
        } else {
            g.im2col(x.sample(b), &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(
            m,
            n,
            k,
            T::one(),
            dy,
            (n as isize, 1),
            rhs,
            (1, n as isize),
            T::one(),
            gw.data_mut(),
            (k as isize, 1),
        );
        // dcols = Wᵀ · dY
        let dst: &mut [T] = if pointwise { gx.sample_mut(b) } else { &mut dcols };
        T::gemm(
            k,
            m,
            n,
            T::one(),
            p.weight.data(),
            (1, k as isize),
            dy,
            (n as isize, 1),
            T::zero(),
            dst,
            (n as isize, 1),
        );
        if !pointwise {
            g.col2im(&dcols, gx.sample_mut(b));
        }
    }
    Ok(ConvGrads {
        x: gx,
        weight: gw,
        bias: gb,
    })
}
