use super::{Result, Shape, Tensor, TensorError};

/// Stride/padding/kernel extents of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub kh: usize,
    pub kw: usize,
}

/// `floor((in + 2 pad - k) / stride) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < k {
        return None;
    }
    Some((input + 2 * pad - k) / stride + 1)
}

impl ConvGeometry {
    pub fn output_shape(&self, input: Shape, c_out: usize) -> Result<Shape> {
        let oh = conv_output_extent(input.h, self.kh, self.stride, self.padding);
        let ow = conv_output_extent(input.w, self.kw, self.stride, self.padding);
        match (oh, ow) {
            (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok(Shape::new(input.n, c_out, h, w)),
            _ => Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "kernel {}x{} stride {} pad {} does not fit input {}",
                    self.kh, self.kw, self.stride, self.padding, input
                ),
            }),
        }
    }

    /// Valid output index range along one axis for kernel offset `k`:
    /// all `o` with `0 <= o*stride + k - pad < input`.
    #[inline]
    fn valid_range(&self, k: usize, input: usize, output: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // o*s + off >= 0  ->  o >= ceil(-off / s)
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // o*s + off <= input - 1  ->  o <= floor((input - 1 - off) / s)
        let hi_num = input as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(output as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }

    /// Visits every (output offset, input offset, weight offset) triple of a
    /// cross-correlation over `input` with `c_out` filters. Offsets are flat
    /// indices into the respective row-major buffers.
    pub(crate) fn for_each_tap(
        &self,
        input: Shape,
        c_out: usize,
        mut f: impl FnMut(usize, usize, usize),
    ) -> Result<Shape> {
        let out = self.output_shape(input, c_out)?;
        for n in 0..input.n {
            for co in 0..c_out {
                for ci in 0..input.c {
                    for ky in 0..self.kh {
                        let (y0, y1) = self.valid_range(ky, input.h, out.h);
                        for kx in 0..self.kw {
                            let (x0, x1) = self.valid_range(kx, input.w, out.w);
                            let w_idx = ((co * input.c + ci) * self.kh + ky) * self.kw + kx;
                            for oy in y0..y1 {
                                let iy = oy * self.stride + ky - self.padding;
                                let o_row = out.offset(n, co, oy, 0);
                                let i_row = input.offset(n, ci, iy, 0);
                                for ox in x0..x1 {
                                    let ix = ox * self.stride + kx - self.padding;
                                    f(o_row + ox, i_row + ix, w_idx);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_kernel(input: Shape, kernel: &Tensor, bias: Option<&[f64]>) -> Result<()> {
    let k = kernel.shape();
    if k.c != input.c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel expects {} input channels, input {} has {}", k.c, input, input.c),
        });
    }
    if let Some(b) = bias {
        if b.len() != k.n {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias has {} entries for {} output channels", b.len(), k.n),
            });
        }
    }
    Ok(())
}

pub(crate) fn geometry(kernel: &Tensor, stride: usize, padding: usize) -> ConvGeometry {
    let k = kernel.shape();
    ConvGeometry {
        stride,
        padding,
        kh: k.h,
        kw: k.w,
    }
}

/// Cross-correlation (no kernel flip) with zero padding.
///
/// `kernel` has shape `(c_out, c_in, k_h, k_w)`; `bias`, when given, holds one
/// value per output channel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&[f64]>, stride: usize, padding: usize) -> Result<Tensor> {
    check_kernel(input.shape(), kernel, bias)?;
    let geo = geometry(kernel, stride, padding);
    let out_shape = geo.output_shape(input.shape(), kernel.shape().n)?;
    let mut out = Tensor::zeros(out_shape);
    let (x, w) = (input.data(), kernel.data());
    let buf = out.data_mut();
    geo.for_each_tap(input.shape(), kernel.shape().n, |o, i, k| {
        buf[o] += x[i] * w[k];
    })?;
    if let Some(b) = bias {
        for n in 0..out_shape.n {
            for (co, bv) in b.iter().enumerate() {
                for v in out.plane_mut(n, co) {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of a convolution's output w.r.t. its input, given the upstream gradient.
pub fn conv2d_input_grad(
    input_shape: Shape,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geo = geometry(kernel, stride, padding);
    let mut gin = Tensor::zeros(input_shape);
    let (g, w) = (grad_out.data(), kernel.data());
    let buf = gin.data_mut();
    geo.for_each_tap(input_shape, kernel.shape().n, |o, i, k| {
        buf[i] += g[o] * w[k];
    })?;
    Ok(gin)
}

/// Gradients w.r.t. kernel and bias.
pub fn conv2d_weight_grad(
    input: &Tensor,
    kernel_shape: Shape,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let geo = ConvGeometry {
        stride,
        padding,
        kh: kernel_shape.h,
        kw: kernel_shape.w,
    };
    let mut gw = Tensor::zeros(kernel_shape);
    let (x, g) = (input.data(), grad_out.data());
    let buf = gw.data_mut();
    let out = geo.for_each_tap(input.shape(), kernel_shape.n, |o, i, k| {
        buf[k] += g[o] * x[i];
    })?;
    let mut gb = vec![0.0; kernel_shape.n];
    for n in 0..out.n {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += grad_out.plane(n, co).iter().sum::<f64>();
        }
    }
    Ok((gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Direct nested-loop cross-correlation, independent of the tap iterator.
    fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
        let (xs, ks) = (x.shape(), k.shape());
        let oh = (xs.h + 2 * pad - ks.h) / stride + 1;
        let ow = (xs.w + 2 * pad - ks.w) / stride + 1;
        let mut out = Tensor::zeros(Shape::new(xs.n, ks.n, oh, ow));
        for n in 0..xs.n {
            for co in 0..ks.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[co];
                        for ci in 0..xs.c {
                            for ky in 0..ks.h {
                                for kx in 0..ks.w {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc += x.at(n, ci, iy as usize, ix as usize) * k.at(co, ci, ky, kx);
                                }
                            }
                        }
                        *out.at_mut(n, co, oy, ox) = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let y = conv2d(&x, &k, Some(&[0.0]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_sums() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn strided_padded_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(h, w) in &[(9usize, 9usize), (8, 11), (5, 4)] {
            let x = random(Shape::new(1, 4, h, w), &mut rng);
            let k = random(Shape::new(8, 4, 3, 3), &mut rng);
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d(&x, &k, Some(&b), 2, 1).unwrap();
            let want = naive_conv(&x, &k, &b, 2, 1);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::zeros(Shape::new(1, 3, 4, 4));
        let k = Tensor::zeros(Shape::new(2, 2, 3, 3));
        assert!(matches!(
            conv2d(&x, &k, None, 1, 1),
            Err(TensorError::ShapeMismatch { .. })
        ));
        let k = Tensor::zeros(Shape::new(2, 3, 5, 5));
        assert!(conv2d(&x, &k, None, 1, 0).is_err());
    }

    #[test]
    fn linear_in_input_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(Shape::new(1, 3, 7, 6), &mut rng);
        let y = random(Shape::new(1, 3, 7, 6), &mut rng);
        let k = random(Shape::new(5, 3, 3, 3), &mut rng);
        let (a, b) = (0.7, -1.3);
        let mut comb = x.scale(a);
        comb.add_assign(&y.scale(b)).unwrap();
        let lhs = conv2d(&comb, &k, None, 2, 1).unwrap();
        let mut rhs = conv2d(&x, &k, None, 2, 1).unwrap().scale(a);
        rhs.add_assign(&conv2d(&y, &k, None, 2, 1).unwrap().scale(b)).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn input_grad_is_adjoint() {
        // <conv(x), g> == <x, conv^T(g)>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Shape::new(1, 2, 6, 5), &mut rng);
        let k = random(Shape::new(3, 2, 3, 3), &mut rng);
        let y = conv2d(&x, &k, None, 2, 1).unwrap();
        let g = random(y.shape(), &mut rng);
        let gx = conv2d_input_grad(x.shape(), &k, &g, 2, 1).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
