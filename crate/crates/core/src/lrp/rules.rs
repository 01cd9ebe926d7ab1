//! Local relevance redistribution rules.
//!
//! Every linear node is described by a [`LinearContext`] that enumerates its
//! contributions `z_ij = x_i * w_ij` (input neuron `i`, output neuron `j`).
//! The ε, z⁺ and γ rules only differ in how each contribution and the bias
//! are transformed before normalization.

use crate::tensor::{self, ConvGeometry, Shape, Tensor, TensorError};

/// Forward data of one linear node, enough to enumerate its contributions.
#[derive(Debug, Clone)]
pub enum LinearContext<'a> {
    /// Fully connected map; `weights[i * n_out + j]` connects input `i` to output `j`.
    Dense {
        x: &'a [f64],
        weights: &'a [f64],
        bias: Option<&'a [f64]>,
    },
    Conv {
        x: &'a Tensor,
        kernel: &'a Tensor,
        bias: Option<&'a [f64]>,
        stride: usize,
        padding: usize,
    },
    /// Element-wise sum of same-shaped operands (`w_ij = 1`).
    Sum { parts: Vec<&'a Tensor> },
    Resize {
        x: &'a Tensor,
        out_h: usize,
        out_w: usize,
        align_corners: bool,
    },
    /// `y = x * gate` with the gate treated as a fixed weight.
    Scale { x: &'a Tensor, gate: &'a Tensor },
}

/// Relevance assigned to each input operand plus what the node kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Redistribution {
    pub inputs: Vec<Tensor>,
    /// Relevance retained by bias, stabilizer, or dropped for a zero denominator.
    pub absorbed: f64,
}

impl LinearContext<'_> {
    fn input_shapes(&self) -> Vec<Shape> {
        match self {
            LinearContext::Dense { x, .. } => vec![Shape::new(1, 1, 1, x.len())],
            LinearContext::Conv { x, .. } | LinearContext::Resize { x, .. } | LinearContext::Scale { x, .. } => {
                vec![x.shape()]
            }
            LinearContext::Sum { parts } => parts.iter().map(|p| p.shape()).collect(),
        }
    }

    fn output_len(&self) -> Result<usize, TensorError> {
        Ok(match self {
            LinearContext::Dense { x, weights, .. } => {
                if x.is_empty() || weights.len() % x.len() != 0 {
                    return Err(TensorError::ShapeMismatch {
                        op: "dense",
                        detail: format!("{} weights for {} inputs", weights.len(), x.len()),
                    });
                }
                weights.len() / x.len()
            }
            LinearContext::Conv {
                x,
                kernel,
                stride,
                padding,
                ..
            } => {
                let geo = ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                    kh: kernel.shape().h,
                    kw: kernel.shape().w,
                };
                geo.output_shape(x.shape(), kernel.shape().n)?.numel()
            }
            LinearContext::Sum { parts } => {
                let s = parts[0].shape();
                if parts.iter().any(|p| p.shape() != s) {
                    return Err(TensorError::ShapeMismatch {
                        op: "sum",
                        detail: "operand shapes differ".into(),
                    });
                }
                s.numel()
            }
            LinearContext::Resize { x, out_h, out_w, .. } => x.shape().n * x.shape().c * out_h * out_w,
            LinearContext::Scale { x, gate } => {
                if x.shape() != gate.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "scale",
                        detail: format!("{} vs {}", x.shape(), gate.shape()),
                    });
                }
                x.len()
            }
        })
    }

    fn bias(&self, j: usize, out_len: usize) -> f64 {
        match self {
            LinearContext::Dense { bias: Some(b), .. } => b[j],
            LinearContext::Conv {
                bias: Some(b), kernel, ..
            } => {
                let plane = out_len / kernel.shape().n;
                // single-sample layout: channel = j / plane (batch folds into the same modulus)
                b[(j / plane) % kernel.shape().n]
            }
            _ => 0.0,
        }
    }

    /// Calls `f(j, slot, i, x_i, w_ij)` for every contribution.
    fn visit(&self, mut f: impl FnMut(usize, usize, usize, f64, f64)) -> Result<(), TensorError> {
        match self {
            LinearContext::Dense { x, weights, .. } => {
                let n_out = weights.len() / x.len();
                for (i, &xi) in x.iter().enumerate() {
                    for j in 0..n_out {
                        f(j, 0, i, xi, weights[i * n_out + j]);
                    }
                }
            }
            LinearContext::Conv {
                x,
                kernel,
                stride,
                padding,
                ..
            } => {
                let geo = ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                    kh: kernel.shape().h,
                    kw: kernel.shape().w,
                };
                let (xd, wd) = (x.data(), kernel.data());
                geo.for_each_tap(x.shape(), kernel.shape().n, |o, i, k| f(o, 0, i, xd[i], wd[k]))?;
            }
            LinearContext::Sum { parts } => {
                for (slot, p) in parts.iter().enumerate() {
                    for (i, &v) in p.data().iter().enumerate() {
                        f(i, slot, i, v, 1.0);
                    }
                }
            }
            LinearContext::Resize {
                x,
                out_h,
                out_w,
                align_corners,
            } => {
                let xd = x.data();
                tensor::for_each_resize_tap(x.shape(), *out_h, *out_w, *align_corners, |o, i, w| {
                    f(o, 0, i, xd[i], w)
                });
            }
            LinearContext::Scale { x, gate } => {
                for (i, (&v, &g)) in x.data().iter().zip(gate.data()).enumerate() {
                    f(i, 0, i, v, g);
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Shared two-pass redistribution: accumulate transformed contributions per
/// output, then hand each output's relevance back proportionally.
fn redistribute(
    ctx: &LinearContext<'_>,
    r_out: &Tensor,
    contribution: impl Fn(f64, f64) -> f64,
    bias_term: impl Fn(f64) -> f64,
    epsilon: f64,
) -> Result<Redistribution, TensorError> {
    let n_out = ctx.output_len()?;
    if r_out.len() != n_out {
        return Err(TensorError::ShapeMismatch {
            op: "lrp",
            detail: format!("relevance has {} entries, layer output has {}", r_out.len(), n_out),
        });
    }
    let mut z_sum = vec![0.0; n_out];
    ctx.visit(|j, _, _, x, w| z_sum[j] += contribution(x, w))?;

    let r = r_out.data();
    let mut coef = vec![0.0; n_out];
    let mut absorbed = 0.0;
    for j in 0..n_out {
        if r[j] == 0.0 {
            continue;
        }
        let mut denom = z_sum[j] + bias_term(ctx.bias(j, n_out));
        if epsilon > 0.0 {
            denom += epsilon * sign(denom);
        }
        if denom == 0.0 {
            absorbed += r[j];
            continue;
        }
        coef[j] = r[j] / denom;
        absorbed += r[j] * (denom - z_sum[j]) / denom;
    }

    let mut inputs: Vec<Tensor> = ctx.input_shapes().into_iter().map(Tensor::zeros).collect();
    {
        let mut bufs: Vec<&mut [f64]> = inputs.iter_mut().map(|t| t.data_mut()).collect();
        ctx.visit(|j, slot, i, x, w| {
            if coef[j] != 0.0 {
                bufs[slot][i] += contribution(x, w) * coef[j];
            }
        })?;
    }
    Ok(Redistribution { inputs, absorbed })
}

/// ε-rule: `R_i = Σ_j z_ij R_j / (Σ_k z_kj + b_j + ε·sign(·))`, with `sign(0) = +1`.
pub fn rule_epsilon(ctx: &LinearContext<'_>, r_out: &Tensor, epsilon: f64) -> Result<Redistribution, TensorError> {
    redistribute(ctx, r_out, |x, w| x * w, |b| b, epsilon)
}

/// z⁺-rule: only positive contributions take part; the bias is ignored.
pub fn rule_zplus(ctx: &LinearContext<'_>, r_out: &Tensor) -> Result<Redistribution, TensorError> {
    redistribute(ctx, r_out, |x, w| (x * w).max(0.0), |_| 0.0, 0.0)
}

/// γ-rule: contributions `x_i (w_ij + γ w_ij⁺)` (bias `b + γ b⁺`), normalized without stabilizer.
pub fn rule_gamma(ctx: &LinearContext<'_>, r_out: &Tensor, gamma: f64) -> Result<Redistribution, TensorError> {
    redistribute(
        ctx,
        r_out,
        |x, w| x * (w + gamma * w.max(0.0)),
        |b| b + gamma * b.max(0.0),
        0.0,
    )
}

/// Signal-take-all for `y = x ⊙ gate(g)`: the signal receives all relevance,
/// the gate pre-activation none. Independent of the gate mode.
pub fn rule_gated_signal_take_all(r_out: &Tensor) -> (Tensor, Tensor) {
    (r_out.clone(), Tensor::zeros(r_out.shape()))
}

pub fn rule_passthrough(r_out: &Tensor) -> Tensor {
    r_out.clone()
}

/// Slices concatenated relevance back to its source branches.
pub fn split_concat(r_out: &Tensor, extents: &[usize]) -> Result<Vec<Tensor>, TensorError> {
    tensor::split_channels(r_out, extents)
}
