use super::{Result, Shape, Tensor, TensorError};

/// Up to two source indices with their interpolation weights for one output
/// coordinate along a single axis. Weights are non-negative and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisTap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Source taps for every output coordinate of a 1-D linear resize.
pub fn resize_taps(input: usize, output: usize, align_corners: bool) -> Vec<AxisTap> {
    (0..output)
        .map(|i| {
            let src = if align_corners {
                if output == 1 {
                    0.0
                } else {
                    i as f64 * (input - 1) as f64 / (output - 1) as f64
                }
            } else {
                let s = (i as f64 + 0.5) * input as f64 / output as f64 - 0.5;
                s.clamp(0.0, (input - 1) as f64)
            };
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            AxisTap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

/// Calls `f(out_offset, in_offset, weight)` for each of the (at most four)
/// source contributions of every output pixel.
pub(crate) fn for_each_resize_tap(
    input: Shape,
    out_h: usize,
    out_w: usize,
    align_corners: bool,
    mut f: impl FnMut(usize, usize, f64),
) -> Shape {
    let out = Shape::new(input.n, input.c, out_h, out_w);
    let ty = resize_taps(input.h, out_h, align_corners);
    let tx = resize_taps(input.w, out_w, align_corners);
    for n in 0..input.n {
        for c in 0..input.c {
            for (oy, y) in ty.iter().enumerate() {
                for (ox, x) in tx.iter().enumerate() {
                    let o = out.offset(n, c, oy, ox);
                    for (iy, wy) in [(y.lo, y.w_lo), (y.hi, y.w_hi)] {
                        if wy == 0.0 {
                            continue;
                        }
                        for (ix, wx) in [(x.lo, x.w_lo), (x.hi, x.w_hi)] {
                            if wx == 0.0 {
                                continue;
                            }
                            f(o, input.offset(n, c, iy, ix), wy * wx);
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_target(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::InvalidShape {
            shape: vec![out_h, out_w],
            detail: "resize target extents must be >= 1".into(),
        });
    }
    Ok(())
}

/// Bilinear resize of every `(h, w)` plane.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize, align_corners: bool) -> Result<Tensor> {
    check_target(out_h, out_w)?;
    let x = input.data();
    let mut buf = vec![0.0; input.shape().n * input.shape().c * out_h * out_w];
    let shape = for_each_resize_tap(input.shape(), out_h, out_w, align_corners, |o, i, w| {
        buf[o] += w * x[i];
    });
    Tensor::from_vec(shape, buf)
}

/// Adjoint of [`bilinear_resize`]: scatters `grad_out` back onto the source grid.
pub fn bilinear_resize_transpose(input_shape: Shape, grad_out: &Tensor, align_corners: bool) -> Result<Tensor> {
    let g = grad_out.data();
    let go = grad_out.shape();
    let mut gin = Tensor::zeros(input_shape);
    let buf = gin.data_mut();
    for_each_resize_tap(input_shape, go.h, go.w, align_corners, |o, i, w| {
        buf[i] += w * g[o];
    });
    Ok(gin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Closed-form per-pixel bilinear interpolation with align_corners=true.
    fn closed_form(x: &Tensor, oh: usize, ow: usize) -> Tensor {
        let s = x.shape();
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
        for c in 0..s.c {
            for i in 0..oh {
                for j in 0..ow {
                    let sy = i as f64 * (s.h - 1) as f64 / (oh - 1) as f64;
                    let sx = j as f64 * (s.w - 1) as f64 / (ow - 1) as f64;
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(s.h - 1), (x0 + 1).min(s.w - 1));
                    let (dy, dx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = (1.0 - dy) * (1.0 - dx) * x.at(0, c, y0, x0)
                        + (1.0 - dy) * dx * x.at(0, c, y0, x1)
                        + dy * (1.0 - dx) * x.at(0, c, y1, x0)
                        + dy * dx * x.at(0, c, y1, x1);
                    *out.at_mut(0, c, i, j) = v;
                }
            }
        }
        out
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 2, 3, 4), 5.0);
        for align in [true, false] {
            for &(h, w) in &[(1, 1), (7, 2), (13, 9)] {
                let y = bilinear_resize(&x, h, w, align).unwrap();
                assert!(y.data().iter().all(|v| (v - 5.0).abs() <= 1e-12));
            }
        }
    }

    #[test]
    fn linear_ramp_align_corners() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4, true).unwrap();
        let want = [0.0, 1.0, 2.0, 3.0];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = (0..2 * 7 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::from_vec(Shape::new(1, 2, 7, 5), data).unwrap();
        let y = bilinear_resize(&x, 13, 11, true).unwrap();
        assert!(y.max_abs_diff(&closed_form(&x, 13, 11)) < 1e-12);
    }

    #[test]
    fn zero_target_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(bilinear_resize(&x, 0, 3, true).is_err());
    }
}
