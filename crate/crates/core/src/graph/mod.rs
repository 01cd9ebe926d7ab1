//! Computation-graph IR: node kinds, validation with shape propagation,
//! forward execution with an activation tape, analytic gradients, and
//! selection of the scalar being explained.

mod exec;
mod grad;
mod io;
mod target;

pub use exec::ForwardTape;
pub use grad::Gradients;
pub use io::{
    from_manifest, load_model, load_model_dir, save_model, to_manifest, InputRecord, ModelManifest, NodeRecord,
    WeightRef, FORMAT_VERSION,
};
pub use target::{argmax_classes, Region, TargetMode, TargetSpec};

use crate::tensor::{ConvGeometry, Shape, Tensor, TensorError};
use std::collections::{BTreeSet, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}` references unknown node `{input}`")]
    DanglingInput { node: String, input: String },
    #[error("node `{node}` ({kind}) expects {expected} inputs, has {got}")]
    Arity {
        node: String,
        kind: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("node `{node}`: invalid parameter `{field}`: {detail}")]
    Param {
        node: String,
        field: String,
        detail: String,
    },
    #[error("node `{node}`: weight `{name}`: {detail}")]
    Weight { node: String, name: String, detail: String },
    #[error("cycle through nodes {0:?}")]
    Cycle(Vec<String>),
    #[error("node `{0}` is not reachable from the graph input")]
    Unreachable(String),
    #[error("graph needs exactly one Input node, found {0}")]
    InputCount(usize),
    #[error("output `{0}`: {1}")]
    Output(String, String),
    #[error("node `{node}`: {source}")]
    Shape { node: String, source: TensorError },
    #[error("input tensor has shape {got}, graph declares {expected}")]
    InputShape { expected: Shape, got: Shape },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("target: {0}")]
    Target(String),
    #[error("graph failed validation: {}", format_errors(.0))]
    Invalid(Vec<GraphError>),
}

fn format_errors(errors: &[GraphError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateMode {
    /// `y = x * sigmoid(g)`
    Sigmoid,
    /// `y = x * (1 - sigmoid(g))`
    OneMinusSigmoid,
}

impl GateMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateMode::Sigmoid => "sigmoid",
            GateMode::OneMinusSigmoid => "one_minus_sigmoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Input {
        shape: Shape,
    },
    Conv2D {
        stride: usize,
        padding: usize,
    },
    Relu,
    Sigmoid,
    Add,
    /// Inputs are `(signal, gate_pre_activation)`; the sigmoid is applied internally.
    GatedMul {
        mode: GateMode,
    },
    ConcatC,
    BilinearResize {
        out_h: usize,
        out_w: usize,
        align_corners: bool,
    },
    Output,
}

/// Kind discriminant, used for rule defaults and manifest strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KindTag {
    Input,
    Conv2D,
    Relu,
    Sigmoid,
    Add,
    GatedMul,
    ConcatC,
    BilinearResize,
    Output,
}

impl KindTag {
    pub const ALL: [KindTag; 9] = [
        KindTag::Input,
        KindTag::Conv2D,
        KindTag::Relu,
        KindTag::Sigmoid,
        KindTag::Add,
        KindTag::GatedMul,
        KindTag::ConcatC,
        KindTag::BilinearResize,
        KindTag::Output,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            KindTag::Input => "Input",
            KindTag::Conv2D => "Conv2D",
            KindTag::Relu => "ReLU",
            KindTag::Sigmoid => "Sigmoid",
            KindTag::Add => "Add",
            KindTag::GatedMul => "GatedMul",
            KindTag::ConcatC => "ConcatC",
            KindTag::BilinearResize => "BilinearResize",
            KindTag::Output => "Output",
        }
    }

    pub fn parse(s: &str) -> Option<KindTag> {
        KindTag::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for KindTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl NodeKind {
    pub fn tag(&self) -> KindTag {
        match self {
            NodeKind::Input { .. } => KindTag::Input,
            NodeKind::Conv2D { .. } => KindTag::Conv2D,
            NodeKind::Relu => KindTag::Relu,
            NodeKind::Sigmoid => KindTag::Sigmoid,
            NodeKind::Add => KindTag::Add,
            NodeKind::GatedMul { .. } => KindTag::GatedMul,
            NodeKind::ConcatC => KindTag::ConcatC,
            NodeKind::BilinearResize { .. } => KindTag::BilinearResize,
            NodeKind::Output => KindTag::Output,
        }
    }

    fn arity(&self) -> (&'static str, fn(usize) -> bool) {
        match self {
            NodeKind::Input { .. } => ("0", |n| n == 0),
            NodeKind::Add => (">= 2", |n| n >= 2),
            NodeKind::GatedMul { .. } => ("2", |n| n == 2),
            NodeKind::ConcatC => (">= 1", |n| n >= 1),
            _ => ("1", |n| n == 1),
        }
    }
}

/// Kernel `(c_out, c_in, k_h, k_w)` and optional per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel: Tensor,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub inputs: Vec<String>,
    pub weights: Option<ConvWeights>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, inputs: &[&str]) -> Self {
        Node {
            id: id.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            weights: None,
        }
    }

    pub fn conv(
        id: impl Into<String>,
        input: &str,
        kernel: Tensor,
        bias: Option<Vec<f64>>,
        stride: usize,
        padding: usize,
    ) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Conv2D { stride, padding },
            inputs: vec![input.to_string()],
            weights: Some(ConvWeights { kernel, bias }),
        }
    }
}

/// A validated graph. Nodes are stored in topological order with resolved
/// input indices and propagated output shapes.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<Vec<usize>>,
    consumers: Vec<Vec<usize>>,
    shapes: Vec<Shape>,
    index: HashMap<String, usize>,
    input: usize,
    outputs: Vec<usize>,
}

/// Checks a node list against every structural rule and returns all violations.
pub fn validate(nodes: &[Node], outputs: &[String]) -> Vec<GraphError> {
    match analyze(nodes, outputs) {
        Ok(_) => Vec::new(),
        Err(errors) => errors,
    }
}

struct Analysis {
    order: Vec<usize>,
    shapes: Vec<Shape>,
}

fn analyze(nodes: &[Node], outputs: &[String]) -> std::result::Result<Analysis, Vec<GraphError>> {
    let mut errors = Vec::new();
    let mut index = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if index.insert(n.id.as_str(), i).is_some() {
            errors.push(GraphError::DuplicateId(n.id.clone()));
        }
    }

    let n_inputs = nodes
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Input { .. }))
        .count();
    if n_inputs != 1 {
        errors.push(GraphError::InputCount(n_inputs));
    }

    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        let (expected, ok) = n.kind.arity();
        if !ok(n.inputs.len()) {
            errors.push(GraphError::Arity {
                node: n.id.clone(),
                kind: n.kind.tag().as_str(),
                expected,
                got: n.inputs.len(),
            });
        }
        for inp in &n.inputs {
            match index.get(inp.as_str()) {
                Some(&j) => edges[i].push(j),
                None => errors.push(GraphError::DanglingInput {
                    node: n.id.clone(),
                    input: inp.clone(),
                }),
            }
        }
        check_params(n, &mut errors);
    }

    let declared: HashSet<&str> = outputs.iter().map(String::as_str).collect();
    for o in outputs {
        match index.get(o.as_str()) {
            Some(&i) if nodes[i].kind == NodeKind::Output => {}
            Some(_) => errors.push(GraphError::Output(o.clone(), "not an Output node".into())),
            None => errors.push(GraphError::Output(o.clone(), "no such node".into())),
        }
    }
    if declared.len() != outputs.len() {
        errors.push(GraphError::Output(outputs.join(","), "declared twice".into()));
    }
    for n in nodes {
        if n.kind == NodeKind::Output && !declared.contains(n.id.as_str()) {
            errors.push(GraphError::Output(
                n.id.clone(),
                "Output node not declared as a head".into(),
            ));
        }
    }
    if outputs.is_empty() {
        errors.push(GraphError::Output(String::new(), "graph declares no outputs".into()));
    }

    // Kahn's algorithm, preferring declaration order among ready nodes.
    let mut indegree: Vec<usize> = edges.iter().map(Vec::len).collect();
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        for &j in e {
            consumers[j].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let placed: HashSet<usize> = order.iter().copied().collect();
        let stuck = (0..nodes.len())
            .filter(|i| !placed.contains(i))
            .map(|i| nodes[i].id.clone())
            .collect();
        errors.push(GraphError::Cycle(stuck));
        return Err(errors);
    }

    // Reachability from the input node(s).
    let mut reach = vec![false; nodes.len()];
    for &i in &order {
        reach[i] = matches!(nodes[i].kind, NodeKind::Input { .. })
            || (!edges[i].is_empty() && edges[i].iter().all(|&j| reach[j]));
    }
    for (i, r) in reach.iter().enumerate() {
        if !r && !matches!(nodes[i].kind, NodeKind::Input { .. }) {
            errors.push(GraphError::Unreachable(nodes[i].id.clone()));
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    let mut shapes: Vec<Option<Shape>> = vec![None; nodes.len()];
    for &i in &order {
        let ins: Option<Vec<Shape>> = edges[i].iter().map(|&j| shapes[j]).collect();
        let Some(ins) = ins else { continue };
        match infer_shape(&nodes[i], &ins) {
            Ok(s) => shapes[i] = Some(s),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Analysis {
        order,
        shapes: shapes.into_iter().map(|s| s.expect("shape inferred")).collect(),
    })
}

fn check_params(n: &Node, errors: &mut Vec<GraphError>) {
    let param = |field: &str, detail: &str| GraphError::Param {
        node: n.id.clone(),
        field: field.into(),
        detail: detail.into(),
    };
    match &n.kind {
        NodeKind::Conv2D { stride, .. } => {
            if *stride == 0 {
                errors.push(param("stride", "must be >= 1"));
            }
            match &n.weights {
                None => errors.push(GraphError::Weight {
                    node: n.id.clone(),
                    name: "weight".into(),
                    detail: "missing".into(),
                }),
                Some(w) => {
                    if let Some(b) = &w.bias {
                        if b.len() != w.kernel.shape().n {
                            errors.push(GraphError::Weight {
                                node: n.id.clone(),
                                name: "bias".into(),
                                detail: format!("{} entries for {} filters", b.len(), w.kernel.shape().n),
                            });
                        }
                    }
                }
            }
        }
        NodeKind::BilinearResize { out_h, out_w, .. } => {
            if *out_h == 0 || *out_w == 0 {
                errors.push(param("out_h/out_w", "must be >= 1"));
            }
        }
        NodeKind::Input { shape } if shape.n != 1 => {
            errors.push(param("shape", "batch extent must be 1"));
        }
        _ => {}
    }
    if !matches!(n.kind, NodeKind::Conv2D { .. }) && n.weights.is_some() {
        errors.push(GraphError::Weight {
            node: n.id.clone(),
            name: "weight".into(),
            detail: "only Conv2D nodes carry weights".into(),
        });
    }
}

fn infer_shape(n: &Node, ins: &[Shape]) -> Result<Shape> {
    let shape_err = |detail: String| GraphError::Shape {
        node: n.id.clone(),
        source: TensorError::ShapeMismatch {
            op: n.kind.tag().as_str(),
            detail,
        },
    };
    match &n.kind {
        NodeKind::Input { shape } => Ok(*shape),
        NodeKind::Conv2D { stride, padding } => {
            let w = n.weights.as_ref().expect("checked");
            let k = w.kernel.shape();
            if k.c != ins[0].c {
                return Err(shape_err(format!(
                    "kernel expects {} input channels, got {}",
                    k.c, ins[0].c
                )));
            }
            let geo = ConvGeometry {
                stride: *stride,
                padding: *padding,
                kh: k.h,
                kw: k.w,
            };
            geo.output_shape(ins[0], k.n).map_err(|source| GraphError::Shape {
                node: n.id.clone(),
                source,
            })
        }
        NodeKind::Relu | NodeKind::Sigmoid | NodeKind::Output => Ok(ins[0]),
        NodeKind::Add | NodeKind::GatedMul { .. } => {
            if ins.iter().any(|s| *s != ins[0]) {
                return Err(shape_err(format!("operand shapes differ: {:?}", ins)));
            }
            Ok(ins[0])
        }
        NodeKind::ConcatC => {
            let s0 = ins[0];
            if ins.iter().any(|s| (s.n, s.h, s.w) != (s0.n, s0.h, s0.w)) {
                return Err(shape_err(format!("spatial extents differ: {:?}", ins)));
            }
            Ok(Shape::new(s0.n, ins.iter().map(|s| s.c).sum(), s0.h, s0.w))
        }
        NodeKind::BilinearResize { out_h, out_w, .. } => Ok(Shape::new(ins[0].n, ins[0].c, *out_h, *out_w)),
    }
}

impl Graph {
    /// Validates `nodes` and builds the executable graph. `outputs` names the
    /// Output nodes exposed as heads.
    pub fn new(nodes: Vec<Node>, outputs: Vec<String>) -> Result<Graph> {
        let analysis = analyze(&nodes, &outputs).map_err(GraphError::Invalid)?;
        let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
        let nodes: Vec<Node> = analysis
            .order
            .iter()
            .map(|&i| slots[i].take().expect("each node placed once"))
            .collect();
        let shapes: Vec<Shape> = analysis.order.iter().map(|&i| analysis.shapes[i]).collect();
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let inputs: Vec<Vec<usize>> = nodes
            .iter()
            .map(|n| n.inputs.iter().map(|id| index[id]).collect())
            .collect();
        let mut consumers = vec![Vec::new(); nodes.len()];
        for (i, ins) in inputs.iter().enumerate() {
            for &j in ins {
                if !consumers[j].contains(&i) {
                    consumers[j].push(i);
                }
            }
        }
        let input = nodes
            .iter()
            .position(|n| matches!(n.kind, NodeKind::Input { .. }))
            .expect("validated");
        let outputs = outputs.iter().map(|o| index[o]).collect();
        Ok(Graph {
            nodes,
            inputs,
            consumers,
            shapes,
            index,
            input,
            outputs,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    pub fn node_inputs(&self, idx: usize) -> &[usize] {
        &self.inputs[idx]
    }

    pub fn consumers(&self, idx: usize) -> &[usize] {
        &self.consumers[idx]
    }

    pub fn shape(&self, idx: usize) -> Shape {
        self.shapes[idx]
    }

    pub fn input_index(&self) -> usize {
        self.input
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[self.input]
    }

    pub fn input_id(&self) -> &str {
        &self.nodes[self.input].id
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    pub fn output_ids(&self) -> Vec<&str> {
        self.outputs.iter().map(|&i| self.nodes[i].id.as_str()).collect()
    }

    /// Index of the head named `id`.
    pub fn head(&self, id: &str) -> Result<usize> {
        let idx = self.index_of(id)?;
        if !self.outputs.contains(&idx) {
            return Err(GraphError::Target(format!("`{id}` is not a declared output")));
        }
        Ok(idx)
    }

    /// The nodes in the given kind, in topological order.
    pub fn nodes_of_kind(&self, tag: KindTag) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].kind.tag() == tag)
            .collect()
    }

    /// Conv2D nodes on the path feeding `head` (following first inputs
    /// backwards), nearest first.
    pub fn convs_before(&self, head: usize) -> Vec<usize> {
        let mut found = Vec::new();
        let mut cur = head;
        loop {
            if matches!(self.nodes[cur].kind, NodeKind::Conv2D { .. }) {
                found.push(cur);
            }
            match self.inputs[cur].first() {
                Some(&p) => cur = p,
                None => break,
            }
        }
        found
    }

    /// Mutable access to a Conv2D node's weights; used by the trainer.
    pub fn conv_weights_mut(&mut self, idx: usize) -> Option<&mut ConvWeights> {
        self.nodes[idx].weights.as_mut()
    }

    pub fn conv_weights(&self, idx: usize) -> Option<&ConvWeights> {
        self.nodes[idx].weights.as_ref()
    }

    /// Whether `idx` is an ancestor of (or equal to) `of`.
    pub fn is_upstream_of(&self, idx: usize, of: usize) -> bool {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![of];
        while let Some(n) = stack.pop() {
            if n == idx {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend_from_slice(&self.inputs[n]);
        }
        false
    }
}
