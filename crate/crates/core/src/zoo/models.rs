//! Toy models in the graph IR.
//!
//! Both builders share one construction path: every convolution is declared
//! with its geometry and a handcrafted weight filler. In random mode the filler
//! is ignored and weights are He-normal draws from a seeded stream (biases
//! start at zero). With `bias = false` every convolution is built without a
//! bias vector.
//!
//! # Handcrafted toy-pid
//!
//! The first stem convolution (2×2, stride 2) averages each 2×2 pixel block
//! and computes three color features (channels beyond the third stay zero):
//!
//! | channel | feature | fires on |
//! |---|---|---|
//! | 0 | `5(B − R) − 0.5` | flood water |
//! | 1 | `5(G − B) − 0.5` | vegetation |
//! | 2 | `10R − 4.2` | gray road, bright cars |
//!
//! Every later convolution is an identity map (block average for the second
//! stem conv, center tap elsewhere); the D branch and the gate convolution
//! have zero weights. The Pag gate is a constant `σ(−2)` and the
//! Bag gate a constant `1 − σ(−3)`, so the fused map is roughly
//! `0.95·(P + 0.12·I)`. The class layer reads `background = veg + 0.2`,
//! `flood = water`, `road = road`. An all-blue image therefore predicts flood
//! everywhere and an all-gray (0.5) image predicts road.
//!
//! # Handcrafted toy-det
//!
//! Three 2×2 stride-2 convolutions make each grid cell the exact 8×8 pixel
//! block it covers. The first computes car-color features
//!
//! | channel | feature |
//! |---|---|
//! | 0 white | `5(R+G+B) − 11` |
//! | 1 dark | `4 − 5(R+G+B)` |
//! | 2 red | `5(R − G − B) − 1.5` |
//! | 3 warm | `5(R − B) − 2` |
//! | 4 water | `5(B − R) − 0.5` |
//! | 5 vegetation | `5(G − B) − 0.5` |
//! | 6 gray | `10R − 4.2` |
//!
//! and the next two average. Objectness is `white + dark + red + 0.5·warm −
//! 0.3·(water + veg) − 0.2`. The gray channel is not read by objectness: it
//! also fires on bright car bodies and would blur the car colors in the
//! concept vectors. The class head reads the white, dark and red channels, and
//! the box head is a constant.

use super::ZooError;
use crate::graph::{GateMode, Graph, Node, NodeKind};
use crate::tensor::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    ToyPid,
    ToyDet,
}

impl Architecture {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "toy-pid" => Some(Architecture::ToyPid),
            "toy-det" => Some(Architecture::ToyDet),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::ToyPid => "toy-pid",
            Architecture::ToyDet => "toy-det",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WeightMode {
    Handcrafted,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub arch: Architecture,
    /// Channels of the stem and branches.
    pub width: usize,
    /// Channels of the segmentation head convolutions (toy-pid only).
    pub head_width: usize,
    pub weights: WeightMode,
    pub bias: bool,
    pub image_size: usize,
}

impl ToyModelSpec {
    pub fn toy_pid(weights: WeightMode) -> Self {
        ToyModelSpec {
            arch: Architecture::ToyPid,
            width: 8,
            head_width: 16,
            weights,
            bias: true,
            image_size: 64,
        }
    }

    pub fn toy_det(weights: WeightMode) -> Self {
        ToyModelSpec {
            arch: Architecture::ToyDet,
            width: 8,
            head_width: 8,
            weights,
            bias: true,
            image_size: 64,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        let min_width = match self.arch {
            Architecture::ToyPid => 4,
            Architecture::ToyDet => 8,
        };
        if self.width < min_width || self.head_width < 4 {
            return Err(ZooError::Config(format!(
                "{} needs width >= {min_width} and head_width >= 4",
                self.arch.as_str()
            )));
        }
        if self.arch == Architecture::ToyPid && self.head_width < self.width {
            return Err(ZooError::Config("toy-pid head_width must be >= width".into()));
        }
        // both models downsample by 8 overall
        if self.image_size < 8 || !self.image_size.is_multiple_of(8) {
            return Err(ZooError::Config("image_size must be a positive multiple of 8".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Graph, ZooError> {
        match self.arch {
            Architecture::ToyPid => build_toy_pid(self),
            Architecture::ToyDet => build_toy_detector(self),
        }
    }
}

/// Kernel and bias under construction for the handcrafted filler.
struct Fill<'a> {
    kernel: &'a mut Tensor,
    bias: &'a mut [f64],
}

impl Fill<'_> {
    fn set(&mut self, out: usize, inp: usize, y: usize, x: usize, v: f64) {
        *self.kernel.at_mut(out, inp, y, x) = v;
    }

    /// Same weight on every spatial tap.
    fn set_all(&mut self, out: usize, inp: usize, v: f64) {
        let s = self.kernel.shape();
        for y in 0..s.h {
            for x in 0..s.w {
                self.set(out, inp, y, x, v);
            }
        }
    }

    /// Identity on the first `n` channels: block average for even kernels,
    /// center tap for odd ones.
    fn identity(&mut self, n: usize, offset: usize) {
        let s = self.kernel.shape();
        for k in 0..n {
            if s.h.is_multiple_of(2) {
                self.set_all(k, k + offset, 1.0 / (s.h * s.w) as f64);
            } else {
                self.set(k, k + offset, s.h / 2, s.w / 2, 1.0);
            }
        }
    }
}

struct Builder {
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
    bias: bool,
    channels: std::collections::HashMap<String, usize>,
}

impl Builder {
    fn new(spec: &ToyModelSpec) -> Self {
        let size = spec.image_size;
        let mut b = Builder {
            nodes: Vec::new(),
            rng: match spec.weights {
                WeightMode::Handcrafted => None,
                WeightMode::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            },
            bias: spec.bias,
            channels: Default::default(),
        };
        b.push(
            Node::new(
                "x",
                NodeKind::Input {
                    shape: Shape::new(1, 3, size, size),
                },
                &[],
            ),
            3,
        );
        b
    }

    fn push(&mut self, node: Node, channels: usize) {
        self.channels.insert(node.id.clone(), channels);
        self.nodes.push(node);
    }

    fn width_of(&self, id: &str) -> usize {
        self.channels[id]
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        id: &str,
        input: &str,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        fill: impl FnOnce(&mut Fill<'_>),
    ) {
        let c_in = self.width_of(input);
        let shape = Shape::new(c_out, c_in, k, k);
        let mut kernel = Tensor::zeros(shape);
        let mut bias = vec![0.0; c_out];
        match self.rng.as_mut() {
            None => fill(&mut Fill {
                kernel: &mut kernel,
                bias: &mut bias,
            }),
            Some(rng) => {
                let std = (2.0 / (c_in * k * k) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                kernel.data_mut().iter_mut().for_each(|w| *w = normal.sample(rng));
            }
        }
        let bias = self.bias.then_some(bias);
        self.push(Node::conv(id, input, kernel, bias, stride, padding), c_out);
    }

    fn op(&mut self, id: &str, kind: NodeKind, inputs: &[&str]) {
        let c = match kind {
            NodeKind::ConcatC => inputs.iter().map(|i| self.width_of(i)).sum(),
            _ => self.width_of(inputs[0]),
        };
        self.push(Node::new(id, kind, inputs), c);
    }

    fn relu(&mut self, id: &str, input: &str) {
        self.op(id, NodeKind::Relu, &[input]);
    }

    fn resize(&mut self, id: &str, input: &str, out: usize) {
        self.op(
            id,
            NodeKind::BilinearResize {
                out_h: out,
                out_w: out,
                align_corners: false,
            },
            &[input],
        );
    }

    fn finish(self, outputs: &[&str]) -> Result<Graph, ZooError> {
        Ok(Graph::new(self.nodes, outputs.iter().map(|s| s.to_string()).collect())?)
    }
}

/// RGB weights of a color feature applied as a 2×2 block average.
fn color_feature(f: &mut Fill<'_>, out: usize, rgb: [f64; 3], bias: f64) {
    for (c, w) in rgb.into_iter().enumerate() {
        f.set_all(out, c, w / 4.0);
    }
    f.bias[out] = bias;
}

pub fn build_toy_pid(spec: &ToyModelSpec) -> Result<Graph, ZooError> {
    if spec.arch != Architecture::ToyPid {
        return Err(ZooError::Config("build_toy_pid needs a toy-pid spec".into()));
    }
    spec.validate()?;
    let (c, h) = (spec.width, spec.head_width);
    let (half, rest) = (c / 2, c - c / 2);
    let s = spec.image_size;
    let mut b = Builder::new(spec);

    b.conv("stem.conv1", "x", c, 2, 2, 0, |f| {
        color_feature(f, 0, [-5.0, 0.0, 5.0], -0.5);
        color_feature(f, 1, [0.0, 5.0, -5.0], -0.5);
        color_feature(f, 2, [10.0, 0.0, 0.0], -4.2);
    });
    b.relu("stem.relu1", "stem.conv1");
    b.conv("stem.conv2", "stem.relu1", c, 2, 2, 0, |f| f.identity(c, 0));
    b.relu("stem.relu2", "stem.conv2");

    b.conv("p.conv_a", "stem.relu2", half, 3, 1, 1, |f| f.identity(half, 0));
    b.conv("p.conv_b", "stem.relu2", rest, 1, 1, 0, |f| f.identity(rest, half));
    b.op("p.cat", NodeKind::ConcatC, &["p.conv_a", "p.conv_b"]);
    b.relu("p.relu", "p.cat");

    b.conv("i.conv1", "stem.relu2", c, 3, 2, 1, |f| f.identity(c, 0));
    b.relu("i.relu1", "i.conv1");
    b.conv("i.conv2", "i.relu1", c, 3, 1, 1, |f| f.identity(c, 0));
    b.relu("i.relu2", "i.conv2");
    b.resize("i.up", "i.relu2", s / 4);
    b.conv("i.proj", "i.up", c, 1, 1, 0, |f| f.identity(c, 0));

    b.conv("d.conv1", "stem.relu2", c, 3, 1, 1, |_| {});
    b.relu("d.relu1", "d.conv1");
    b.conv("d.conv2", "d.relu1", c, 1, 1, 0, |f| {
        f.bias.iter_mut().for_each(|v| *v = -3.0)
    });

    b.op("pag.cat", NodeKind::ConcatC, &["p.relu", "i.proj"]);
    b.conv("pag.gate", "pag.cat", c, 1, 1, 0, |f| {
        f.bias.iter_mut().for_each(|v| *v = -2.0)
    });
    b.op(
        "pag.mul",
        NodeKind::GatedMul {
            mode: GateMode::Sigmoid,
        },
        &["i.proj", "pag.gate"],
    );
    b.op("pag.add", NodeKind::Add, &["p.relu", "pag.mul"]);
    b.op(
        "bag.mul",
        NodeKind::GatedMul {
            mode: GateMode::OneMinusSigmoid,
        },
        &["pag.add", "d.conv2"],
    );

    b.conv("head.conv1", "bag.mul", h, 3, 1, 1, |f| f.identity(c, 0));
    b.relu("head.relu1", "head.conv1");
    b.conv("head.conv2", "head.relu1", h, 3, 1, 1, |f| f.identity(h, 0));
    b.relu("head.relu2", "head.conv2");
    b.conv("head.conv3", "head.relu2", h, 1, 1, 0, |f| f.identity(h, 0));
    b.relu("head.relu3", "head.conv3");
    b.conv("head.cls", "head.relu3", 3, 1, 1, 0, |f| {
        f.set(0, 1, 0, 0, 1.0);
        f.bias[0] = 0.2;
        f.set(1, 0, 0, 0, 1.0);
        f.set(2, 2, 0, 0, 1.0);
    });
    b.resize("head.up", "head.cls", s);
    b.op("seg", NodeKind::Output, &["head.up"]);
    b.finish(&["seg"])
}

pub fn build_toy_detector(spec: &ToyModelSpec) -> Result<Graph, ZooError> {
    if spec.arch != Architecture::ToyDet {
        return Err(ZooError::Config("build_toy_detector needs a toy-det spec".into()));
    }
    spec.validate()?;
    let c = spec.width;
    let mut b = Builder::new(spec);

    b.conv("stem.conv1", "x", c, 2, 2, 0, |f| {
        color_feature(f, 0, [5.0, 5.0, 5.0], -11.0);
        color_feature(f, 1, [-5.0, -5.0, -5.0], 4.0);
        color_feature(f, 2, [5.0, -5.0, -5.0], -1.5);
        color_feature(f, 3, [5.0, 0.0, -5.0], -2.0);
        color_feature(f, 4, [-5.0, 0.0, 5.0], -0.5);
        color_feature(f, 5, [0.0, 5.0, -5.0], -0.5);
        color_feature(f, 6, [10.0, 0.0, 0.0], -4.2);
    });
    b.relu("stem.relu1", "stem.conv1");
    b.conv("stem.conv2", "stem.relu1", c, 2, 2, 0, |f| f.identity(c, 0));
    b.relu("stem.relu2", "stem.conv2");
    b.conv("stem.conv3", "stem.relu2", c, 2, 2, 0, |f| f.identity(c, 0));
    b.relu("stem.relu3", "stem.conv3");

    b.conv("obj.conv", "stem.relu3", 1, 1, 1, 0, |f| {
        for (ch, w) in [1.0, 1.0, 1.0, 0.5, -0.3, -0.3].into_iter().enumerate() {
            f.set(0, ch, 0, 0, w);
        }
        f.bias[0] = -0.2;
    });
    b.conv("cls.conv", "stem.relu3", 3, 1, 1, 0, |f| {
        for k in 0..3 {
            f.set(k, k, 0, 0, 1.0);
        }
    });
    b.conv("box.conv", "stem.relu3", 4, 1, 1, 0, |f| {
        f.bias.copy_from_slice(&[0.5, 0.5, 1.0, 0.75]);
    });
    b.op("obj", NodeKind::Output, &["obj.conv"]);
    b.op("cls", NodeKind::Output, &["cls.conv"]);
    b.op("box", NodeKind::Output, &["box.conv"]);
    b.finish(&["obj", "cls", "box"])
}

/// Output heads that explanation targets may address.
pub fn explainable_heads(graph: &Graph) -> Vec<&str> {
    graph.output_ids().into_iter().filter(|id| *id != "box").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::KindTag;
    use crate::zoo::scene::solid_image;

    fn pid() -> Graph {
        build_toy_pid(&ToyModelSpec::toy_pid(WeightMode::Handcrafted)).unwrap()
    }

    fn predicted_class(g: &Graph, rgb: [f64; 3]) -> Vec<usize> {
        let tape = g.forward(&solid_image(64, rgb)).unwrap();
        crate::graph::argmax_classes(tape.value(g.head("seg").unwrap()))
    }

    #[test]
    fn toy_pid_structure() {
        let g = pid();
        assert!(!g.nodes_of_kind(KindTag::Add).is_empty());
        assert!(!g.nodes_of_kind(KindTag::ConcatC).is_empty());
        assert!(g.nodes_of_kind(KindTag::BilinearResize).len() >= 2);
        let modes: Vec<GateMode> = g
            .nodes()
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::GatedMul { mode } => Some(mode),
                _ => None,
            })
            .collect();
        assert!(modes.contains(&GateMode::Sigmoid) && modes.contains(&GateMode::OneMinusSigmoid));
        assert_eq!(g.shape(g.head("seg").unwrap()), Shape::new(1, 3, 64, 64));
    }

    #[test]
    fn canonical_inputs() {
        let g = pid();
        assert!(predicted_class(&g, [0.0, 0.0, 1.0]).iter().all(|&k| k == 1));
        assert!(predicted_class(&g, [0.5, 0.5, 0.5]).iter().all(|&k| k == 2));
        assert!(predicted_class(&g, [0.35, 0.5, 0.22]).iter().all(|&k| k == 0));
    }

    #[test]
    fn all_blue_logits_are_closed_form() {
        let g = pid();
        let tape = g.forward(&solid_image(64, [0.0, 0.0, 1.0])).unwrap();
        let logits = tape.value(g.head("seg").unwrap());
        // water feature 4.5 through P + σ(−2)·I, scaled by 1 − σ(−3)
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expected = 4.5 * (1.0 + s(-2.0)) * (1.0 - s(-3.0));
        assert!((logits.at(0, 1, 32, 32) - expected).abs() < 1e-9);
        assert!((logits.at(0, 0, 32, 32) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn detector_heads() {
        let g = build_toy_detector(&ToyModelSpec::toy_det(WeightMode::Handcrafted)).unwrap();
        assert_eq!(g.output_ids(), vec!["obj", "cls", "box"]);
        assert_eq!(g.shape(g.head("obj").unwrap()), Shape::new(1, 1, 8, 8));
        assert_eq!(g.shape(g.head("cls").unwrap()), Shape::new(1, 3, 8, 8));
        assert_eq!(g.shape(g.head("box").unwrap()), Shape::new(1, 4, 8, 8));
        assert_eq!(explainable_heads(&g), vec!["obj", "cls"]);
    }

    #[test]
    fn random_weights_are_seeded_and_bias_optional() {
        let a = ToyModelSpec::toy_pid(WeightMode::Random { seed: 4 }).build().unwrap();
        let b = ToyModelSpec::toy_pid(WeightMode::Random { seed: 4 }).build().unwrap();
        let c = ToyModelSpec::toy_pid(WeightMode::Random { seed: 5 }).build().unwrap();
        assert_eq!(a.nodes(), b.nodes());
        assert_ne!(a.nodes(), c.nodes());
        let nb = ToyModelSpec::toy_pid(WeightMode::Random { seed: 4 })
            .without_bias()
            .build()
            .unwrap();
        assert!(nb
            .nodes()
            .iter()
            .filter_map(|n| n.weights.as_ref())
            .all(|w| w.bias.is_none()));
    }
}
