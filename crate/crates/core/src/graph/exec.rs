use super::{GateMode, Graph, GraphError, NodeKind, Result};
use crate::tensor::{self, Binary, Pointwise, Tensor};

/// Per-node outputs of one forward pass. `gates` caches the applied gate
/// factor (`sigmoid(g)` or `1 - sigmoid(g)`) for GatedMul nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    values: Vec<Tensor>,
    gates: Vec<Option<Tensor>>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.values[idx]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn gate(&self, idx: usize) -> Option<&Tensor> {
        self.gates[idx].as_ref()
    }
}

impl GateMode {
    pub(crate) fn apply(&self, g: f64) -> f64 {
        match self {
            GateMode::Sigmoid => tensor::sigmoid(g),
            GateMode::OneMinusSigmoid => 1.0 - tensor::sigmoid(g),
        }
    }

    /// Derivative of the gate factor w.r.t. the pre-activation.
    pub(crate) fn derivative(&self, g: f64) -> f64 {
        let s = tensor::sigmoid(g);
        match self {
            GateMode::Sigmoid => s * (1.0 - s),
            GateMode::OneMinusSigmoid => -s * (1.0 - s),
        }
    }
}

impl Graph {
    fn eval_node(&self, idx: usize, ins: &[&Tensor]) -> Result<(Tensor, Option<Tensor>)> {
        let node = &self.nodes[idx];
        let wrap = |source| GraphError::Shape {
            node: node.id.clone(),
            source,
        };
        let out = match &node.kind {
            NodeKind::Input { .. } => unreachable!("inputs are seeded, not evaluated"),
            NodeKind::Conv2D { stride, padding } => {
                let w = node.weights.as_ref().expect("validated");
                tensor::conv2d(ins[0], &w.kernel, w.bias.as_deref(), *stride, *padding).map_err(wrap)?
            }
            NodeKind::Relu => tensor::pointwise(ins[0], Pointwise::Relu),
            NodeKind::Sigmoid => tensor::pointwise(ins[0], Pointwise::Sigmoid),
            NodeKind::Add => {
                let mut acc = ins[0].clone();
                for t in &ins[1..] {
                    acc.add_assign(t).map_err(wrap)?;
                }
                acc
            }
            NodeKind::GatedMul { mode } => {
                let gate = ins[1].map(|g| mode.apply(g));
                let y = tensor::binary(ins[0], &gate, Binary::Mul).map_err(wrap)?;
                return Ok((y, Some(gate)));
            }
            NodeKind::ConcatC => tensor::concat_channels(ins).map_err(wrap)?,
            NodeKind::BilinearResize {
                out_h,
                out_w,
                align_corners,
            } => tensor::bilinear_resize(ins[0], *out_h, *out_w, *align_corners).map_err(wrap)?,
            NodeKind::Output => ins[0].clone(),
        };
        if out.shape() != self.shapes[idx] {
            return Err(wrap(tensor::TensorError::ShapeMismatch {
                op: node.kind.tag().as_str(),
                detail: format!("produced {}, expected {}", out.shape(), self.shapes[idx]),
            }));
        }
        Ok((out, None))
    }

    /// Runs every node once in topological order and records its output.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardTape> {
        if input.shape() != self.input_shape() {
            return Err(GraphError::InputShape {
                expected: self.input_shape(),
                got: input.shape(),
            });
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.len());
        let mut gates = Vec::with_capacity(self.len());
        for idx in 0..self.len() {
            if idx == self.input {
                values.push(input.clone());
                gates.push(None);
                continue;
            }
            let ins: Vec<&Tensor> = self.inputs[idx].iter().map(|&j| &values[j]).collect();
            let (v, g) = self.eval_node(idx, &ins)?;
            values.push(v);
            gates.push(g);
        }
        Ok(ForwardTape { values, gates })
    }

    /// Re-executes only the nodes downstream of `node`, after replacing its
    /// recorded output with `value`. Untouched entries are copied from `tape`.
    pub fn rerun_from(&self, tape: &ForwardTape, node: usize, value: Tensor) -> Result<ForwardTape> {
        let fresh = self.rerun_partial(tape, node, value, None)?;
        let mut out = tape.clone();
        for (i, f) in fresh.into_iter().enumerate() {
            if let Some((v, g)) = f {
                out.values[i] = v;
                out.gates[i] = g;
            }
        }
        Ok(out)
    }

    /// Like [`Graph::rerun_from`] but only returns the output of `target`,
    /// skipping work that does not feed it.
    pub fn rerun_to(&self, tape: &ForwardTape, node: usize, value: Tensor, target: usize) -> Result<Tensor> {
        let mut fresh = self.rerun_partial(tape, node, value, Some(target))?;
        Ok(match fresh[target].take() {
            Some((v, _)) => v,
            None => tape.values[target].clone(),
        })
    }

    fn rerun_partial(
        &self,
        tape: &ForwardTape,
        node: usize,
        value: Tensor,
        target: Option<usize>,
    ) -> Result<Vec<Option<(Tensor, Option<Tensor>)>>> {
        if value.shape() != self.shapes[node] {
            return Err(GraphError::Shape {
                node: self.nodes[node].id.clone(),
                source: tensor::TensorError::ShapeMismatch {
                    op: "rerun",
                    detail: format!("replacement {} vs {}", value.shape(), self.shapes[node]),
                },
            });
        }
        let needed: Vec<bool> = match target {
            Some(t) => (0..self.len()).map(|i| self.is_upstream_of(i, t)).collect(),
            None => vec![true; self.len()],
        };
        let mut fresh: Vec<Option<(Tensor, Option<Tensor>)>> = vec![None; self.len()];
        fresh[node] = Some((value, None));
        for idx in node + 1..self.len() {
            if !needed[idx] || !self.inputs[idx].iter().any(|&j| fresh[j].is_some()) {
                continue;
            }
            let ins: Vec<&Tensor> = self.inputs[idx]
                .iter()
                .map(|&j| match &fresh[j] {
                    Some((v, _)) => v,
                    None => &tape.values[j],
                })
                .collect();
            fresh[idx] = Some(self.eval_node(idx, &ins)?);
        }
        if let Some((_, g)) = &mut fresh[node] {
            *g = tape.gates[node].clone();
        }
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Node;
    use super::*;
    use crate::tensor::Shape;

    fn relu_graph() -> Graph {
        Graph::new(
            vec![
                Node::new(
                    "x",
                    NodeKind::Input {
                        shape: Shape::new(1, 1, 1, 2),
                    },
                    &[],
                ),
                Node::new("r", NodeKind::Relu, &["x"]),
                Node::new("out", NodeKind::Output, &["r"]),
            ],
            vec!["out".into()],
        )
        .unwrap()
    }

    #[test]
    fn single_relu() {
        let g = relu_graph();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        let tape = g.forward(&x).unwrap();
        assert_eq!(tape.len(), g.len());
        assert_eq!(tape.value(g.head("out").unwrap()).data(), &[0.0, 2.0]);
    }

    #[test]
    fn wrong_input_shape() {
        let g = relu_graph();
        let x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(g.forward(&x), Err(GraphError::InputShape { .. })));
    }

    #[test]
    fn rerun_matches_fresh_forward() {
        let g = relu_graph();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        let tape = g.forward(&x).unwrap();
        let x2 = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, -4.0]).unwrap();
        let rerun = g.rerun_from(&tape, 0, x2.clone()).unwrap();
        assert_eq!(rerun, g.forward(&x2).unwrap());
        let head = g.head("out").unwrap();
        assert_eq!(&g.rerun_to(&tape, 0, x2, head).unwrap(), rerun.value(head));
    }
}
