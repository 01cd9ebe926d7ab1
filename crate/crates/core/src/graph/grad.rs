use super::{ForwardTape, Graph, GraphError, NodeKind, Result, TargetSpec};
use crate::tensor::{self, Tensor};

/// Reverse-mode gradients of one scalar.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient w.r.t. each node's output, aligned with the tape.
    pub activations: Vec<Tensor>,
    /// `(d kernel, d bias)` for Conv2D nodes.
    pub weights: Vec<Option<(Tensor, Vec<f64>)>>,
}

impl Graph {
    /// Gradient of the scalar selected by `target` w.r.t. every activation and
    /// every convolution weight.
    pub fn backward_gradient(&self, tape: &ForwardTape, target: &TargetSpec) -> Result<Gradients> {
        let (head, seed) = target.gradient_seed(self, tape)?;
        self.backward_from(tape, &[(head, seed)])
    }

    /// Reverse-mode pass starting from arbitrary upstream gradients at the given nodes.
    pub fn backward_from(&self, tape: &ForwardTape, seeds: &[(usize, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.len()];
        for (idx, s) in seeds {
            if s.shape() != self.shapes[*idx] {
                return Err(GraphError::Target(format!(
                    "seed shape {} does not match node `{}` {}",
                    s.shape(),
                    self.nodes[*idx].id,
                    self.shapes[*idx]
                )));
            }
            accumulate(&mut grads[*idx], s.clone());
        }
        let mut weights = vec![None; self.len()];
        let wrap = |idx: usize| {
            let id = self.nodes[idx].id.clone();
            move |source| GraphError::Shape { node: id, source }
        };

        for idx in (0..self.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let ins = &self.inputs[idx];
            match &self.nodes[idx].kind {
                NodeKind::Input { .. } => {}
                NodeKind::Conv2D { stride, padding } => {
                    let w = self.nodes[idx].weights.as_ref().expect("validated");
                    let x = tape.value(ins[0]);
                    let gin =
                        tensor::conv2d_input_grad(x.shape(), &w.kernel, &g, *stride, *padding).map_err(wrap(idx))?;
                    let (gw, gb) =
                        tensor::conv2d_weight_grad(x, w.kernel.shape(), &g, *stride, *padding).map_err(wrap(idx))?;
                    weights[idx] = Some((gw, gb));
                    accumulate(&mut grads[ins[0]], gin);
                }
                NodeKind::Relu => {
                    let x = tape.value(ins[0]);
                    let gin = zip(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads[ins[0]], gin);
                }
                NodeKind::Sigmoid => {
                    let y = tape.value(idx);
                    let gin = zip(&g, y, |gv, yv| gv * yv * (1.0 - yv));
                    accumulate(&mut grads[ins[0]], gin);
                }
                NodeKind::Add | NodeKind::Output => {
                    for &j in ins {
                        accumulate(&mut grads[j], g.clone());
                    }
                }
                NodeKind::GatedMul { mode } => {
                    let gate = tape.gate(idx).expect("gated node caches its gate");
                    let signal = tape.value(ins[0]);
                    let pre = tape.value(ins[1]);
                    let g_signal = zip(&g, gate, |gv, s| gv * s);
                    let mut g_gate = zip(&g, signal, |gv, x| gv * x);
                    for (v, p) in g_gate.data_mut().iter_mut().zip(pre.data()) {
                        *v *= mode.derivative(*p);
                    }
                    accumulate(&mut grads[ins[0]], g_signal);
                    accumulate(&mut grads[ins[1]], g_gate);
                }
                NodeKind::ConcatC => {
                    let extents: Vec<usize> = ins.iter().map(|&j| self.shapes[j].c).collect();
                    let parts = tensor::split_channels(&g, &extents).map_err(wrap(idx))?;
                    for (&j, p) in ins.iter().zip(parts) {
                        accumulate(&mut grads[j], p);
                    }
                }
                NodeKind::BilinearResize { align_corners, .. } => {
                    let gin = tensor::bilinear_resize_transpose(self.shapes[ins[0]], &g, *align_corners)
                        .map_err(wrap(idx))?;
                    accumulate(&mut grads[ins[0]], gin);
                }
            }
            grads[idx] = Some(g);
        }

        let activations = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Tensor::zeros(self.shapes[i])))
            .collect();
        Ok(Gradients { activations, weights })
    }
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&t).expect("gradient shapes follow the graph"),
        None => *slot = Some(t),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}
