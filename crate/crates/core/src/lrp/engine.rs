use super::ledger::neumaier_sum;
use super::rules::{self, LinearContext, Redistribution};
use super::{ConservationReport, LrpError, Result, RuleAssignment, RuleKind};
use crate::graph::{ForwardTape, Graph, GraphError, NodeKind};
use crate::tensor::Tensor;

/// Relevance per node, aligned with the forward tape, plus the bookkeeping
/// the conservation ledger is built from.
#[derive(Debug, Clone)]
pub struct RelevanceTape {
    relevance: Vec<Tensor>,
    pub(super) outgoing: Vec<f64>,
    pub(super) absorbed: Vec<f64>,
    pub(super) mass: Vec<f64>,
    pub(super) ids: Vec<String>,
    pub(super) kinds: Vec<String>,
    pub(super) rules: Vec<Option<RuleKind>>,
    pub(super) seed_total: f64,
    input: usize,
}

impl RelevanceTape {
    pub fn len(&self) -> usize {
        self.relevance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance.is_empty()
    }

    pub fn relevance(&self, idx: usize) -> &Tensor {
        &self.relevance[idx]
    }

    /// Relevance of the node named `id`.
    pub fn relevance_of(&self, id: &str) -> Option<&Tensor> {
        self.ids.iter().position(|n| n == id).map(|i| &self.relevance[i])
    }

    pub fn input_relevance(&self) -> &Tensor {
        &self.relevance[self.input]
    }

    pub fn absorbed(&self, idx: usize) -> f64 {
        self.absorbed[idx]
    }

    pub fn report(&self) -> ConservationReport {
        ConservationReport::from_tape(self)
    }
}

/// Runs the relevance pass from `seed` at node `head` down to the input.
pub fn lrp_backward(
    graph: &Graph,
    tape: &ForwardTape,
    head: usize,
    seed: &Tensor,
    assignment: &RuleAssignment,
) -> Result<(RelevanceTape, ConservationReport)> {
    lrp_backward_from(graph, tape, &[(head, seed)], assignment)
}

/// Relevance pass starting from any set of seeded nodes. Nodes not reachable
/// backwards from a seed hold zero relevance.
pub fn lrp_backward_from(
    graph: &Graph,
    tape: &ForwardTape,
    seeds: &[(usize, &Tensor)],
    assignment: &RuleAssignment,
) -> Result<(RelevanceTape, ConservationReport)> {
    let n = graph.len();
    if tape.len() != n {
        return Err(LrpError::Config(format!(
            "tape has {} entries for a {n}-node graph",
            tape.len()
        )));
    }
    let rules: Vec<Option<RuleKind>> = graph
        .nodes()
        .iter()
        .map(|node| assignment.rule_for(node))
        .collect::<Result<_>>()?;

    let mut rel: Vec<Option<Tensor>> = vec![None; n];
    let mut seed_total = 0.0;
    for (idx, seed) in seeds {
        if seed.shape() != graph.shape(*idx) {
            return Err(LrpError::Graph(GraphError::Target(format!(
                "seed shape {} does not match node `{}` {}",
                seed.shape(),
                graph.node(*idx).id,
                graph.shape(*idx)
            ))));
        }
        seed_total += neumaier_sum(seed.data());
        add_into(&mut rel[*idx], (*seed).clone());
    }

    let mut outgoing = vec![0.0; n];
    let mut absorbed = vec![0.0; n];
    let mut mass = vec![0.0; n];

    for idx in (0..n).rev() {
        let Some(r) = rel[idx].take() else { continue };
        let node = graph.node(idx);
        let ins = graph.node_inputs(idx);
        let shape_err = |source| LrpError::Shape {
            node: node.id.clone(),
            source,
        };
        let linear = |ctx: LinearContext<'_>, rule: RuleKind| -> Result<Redistribution> {
            match rule {
                RuleKind::Epsilon(e) => rules::rule_epsilon(&ctx, &r, e),
                RuleKind::ZPlus => rules::rule_zplus(&ctx, &r),
                RuleKind::Gamma(g) => rules::rule_gamma(&ctx, &r, g),
                _ => unreachable!("checked by rule_for"),
            }
            .map_err(shape_err)
        };

        let (parts, kept): (Vec<(usize, Tensor)>, f64) = match (&node.kind, rules[idx]) {
            (NodeKind::Input { .. }, _) => (Vec::new(), 0.0),
            (NodeKind::Output, _) => (vec![(ins[0], r.clone())], 0.0),
            (NodeKind::Relu | NodeKind::Sigmoid, _) => (vec![(ins[0], rules::rule_passthrough(&r))], 0.0),
            (NodeKind::ConcatC, _) => {
                let extents: Vec<usize> = ins.iter().map(|&j| graph.shape(j).c).collect();
                let split = rules::split_concat(&r, &extents).map_err(shape_err)?;
                (ins.iter().copied().zip(split).collect(), 0.0)
            }
            (NodeKind::GatedMul { .. }, Some(RuleKind::GatedSignalTakeAll)) => {
                let (signal, gate) = rules::rule_gated_signal_take_all(&r);
                (vec![(ins[0], signal), (ins[1], gate)], 0.0)
            }
            (NodeKind::GatedMul { .. }, Some(rule)) => {
                let gate = tape.gate(idx).expect("gated node caches its gate");
                let red = linear(
                    LinearContext::Scale {
                        x: tape.value(ins[0]),
                        gate,
                    },
                    rule,
                )?;
                let signal = red.inputs.into_iter().next().expect("one operand");
                (
                    vec![(ins[0], signal), (ins[1], Tensor::zeros(graph.shape(ins[1])))],
                    red.absorbed,
                )
            }
            (NodeKind::Conv2D { stride, padding }, Some(rule)) => {
                let w = node.weights.as_ref().expect("validated");
                let red = linear(
                    LinearContext::Conv {
                        x: tape.value(ins[0]),
                        kernel: &w.kernel,
                        bias: w.bias.as_deref(),
                        stride: *stride,
                        padding: *padding,
                    },
                    rule,
                )?;
                (ins.iter().copied().zip(red.inputs).collect(), red.absorbed)
            }
            (NodeKind::Add, Some(rule)) => {
                let red = linear(
                    LinearContext::Sum {
                        parts: ins.iter().map(|&j| tape.value(j)).collect(),
                    },
                    rule,
                )?;
                (ins.iter().copied().zip(red.inputs).collect(), red.absorbed)
            }
            (
                NodeKind::BilinearResize {
                    out_h,
                    out_w,
                    align_corners,
                },
                Some(rule),
            ) => {
                let red = linear(
                    LinearContext::Resize {
                        x: tape.value(ins[0]),
                        out_h: *out_h,
                        out_w: *out_w,
                        align_corners: *align_corners,
                    },
                    rule,
                )?;
                (ins.iter().copied().zip(red.inputs).collect(), red.absorbed)
            }
            (kind, None) => {
                return Err(LrpError::Config(format!(
                    "no rule for node `{}` of kind {}",
                    node.id,
                    kind.tag()
                )))
            }
        };

        let abs_in: f64 = r.data().iter().map(|v| v.abs()).sum();
        if matches!(node.kind, NodeKind::Input { .. }) {
            outgoing[idx] = neumaier_sum(r.data());
            mass[idx] = abs_in;
        } else {
            let mut out_terms: Vec<f64> = Vec::new();
            let mut abs_out = 0.0;
            for (j, t) in parts {
                out_terms.push(neumaier_sum(t.data()));
                abs_out += t.data().iter().map(|v| v.abs()).sum::<f64>();
                add_into(&mut rel[j], t);
            }
            outgoing[idx] = neumaier_sum(&out_terms);
            absorbed[idx] = kept;
            mass[idx] = abs_in + abs_out + kept.abs();
        }
        rel[idx] = Some(r);
    }

    let relevance: Vec<Tensor> = rel
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.unwrap_or_else(|| Tensor::zeros(graph.shape(i))))
        .collect();
    let tape = RelevanceTape {
        relevance,
        outgoing,
        absorbed,
        mass,
        ids: graph.nodes().iter().map(|n| n.id.clone()).collect(),
        kinds: graph.nodes().iter().map(|n| n.kind.tag().to_string()).collect(),
        rules,
        seed_total,
        input: graph.input_index(),
    };
    let report = ConservationReport::from_tape(&tape);
    Ok((tape, report))
}

fn add_into(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&t).expect("relevance shapes follow the graph"),
        None => *slot = Some(t),
    }
}
