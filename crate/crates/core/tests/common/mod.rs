#![allow(dead_code)]

pub mod fd;

use gatelrp::graph::{GateMode, Graph, Node, NodeKind};
use gatelrp::tensor::{Shape, Tensor};
use gatelrp::zoo::{generate_scenes, Scene, SceneConfig, ToyModelSpec, WeightMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn input(shape: Shape) -> Node {
    Node::new("x", NodeKind::Input { shape }, &[])
}

pub fn conv(
    id: &str,
    from: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: bool,
    rng: &mut ChaCha8Rng,
) -> Node {
    let kernel = random_tensor(Shape::new(c_out, c_in, k, k), rng);
    let bias = bias.then(|| (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect());
    Node::conv(id, from, kernel, bias, stride, pad)
}

pub fn output(from: &str) -> Node {
    Node::new("y", NodeKind::Output, &[from])
}

/// One small graph per node kind, each ending in an Output.
pub fn single_kind_graphs(seed: u64) -> Vec<(&'static str, Graph)> {
    let mut r = rng(seed);
    let s = Shape::new(1, 2, 5, 5);
    let mut out = Vec::new();
    let mut push = |name: &'static str, nodes: Vec<Node>| {
        out.push((name, Graph::new(nodes, vec!["y".into()]).unwrap()));
    };
    push(
        "conv3x3",
        vec![input(s), conv("c", "x", 2, 3, 3, 1, 1, true, &mut r), output("c")],
    );
    push(
        "conv_stride2",
        vec![input(s), conv("c", "x", 2, 2, 3, 2, 0, true, &mut r), output("c")],
    );
    push(
        "relu",
        vec![input(s), Node::new("r", NodeKind::Relu, &["x"]), output("r")],
    );
    push(
        "sigmoid",
        vec![input(s), Node::new("g", NodeKind::Sigmoid, &["x"]), output("g")],
    );
    push(
        "add",
        vec![
            input(s),
            conv("c", "x", 2, 2, 1, 1, 0, true, &mut r),
            Node::new("a", NodeKind::Add, &["x", "c"]),
            output("a"),
        ],
    );
    for (name, mode) in [
        ("gated_sigmoid", GateMode::Sigmoid),
        ("gated_one_minus", GateMode::OneMinusSigmoid),
    ] {
        push(
            name,
            vec![
                input(s),
                conv("g", "x", 2, 2, 3, 1, 1, true, &mut r),
                Node::new("m", NodeKind::GatedMul { mode }, &["x", "g"]),
                output("m"),
            ],
        );
    }
    push(
        "concat",
        vec![
            input(s),
            conv("c", "x", 2, 3, 1, 1, 0, true, &mut r),
            Node::new("k", NodeKind::ConcatC, &["x", "c"]),
            output("k"),
        ],
    );
    for (name, oh, ow, ac) in [
        ("resize_up", 9, 7, false),
        ("resize_up_aligned", 9, 7, true),
        ("resize_down", 3, 4, false),
    ] {
        push(
            name,
            vec![
                input(s),
                Node::new(
                    "u",
                    NodeKind::BilinearResize {
                        out_h: oh,
                        out_w: ow,
                        align_corners: ac,
                    },
                    &["x"],
                ),
                output("u"),
            ],
        );
    }
    out
}

pub fn toy_pid(bias: bool, seed: u64) -> Graph {
    let spec = ToyModelSpec::toy_pid(WeightMode::Random { seed });
    if bias {
        spec.build()
    } else {
        spec.without_bias().build()
    }
    .unwrap()
}

pub fn toy_det(bias: bool, seed: u64) -> Graph {
    let spec = ToyModelSpec::toy_det(WeightMode::Random { seed });
    if bias {
        spec.build()
    } else {
        spec.without_bias().build()
    }
    .unwrap()
}

/// Random weights with non-zero biases everywhere, so bias paths matter.
pub fn with_random_biases(mut g: Graph, seed: u64) -> Graph {
    let mut r = rng(seed);
    for i in 0..g.len() {
        if let Some(w) = g.conv_weights_mut(i) {
            if let Some(b) = w.bias.as_mut() {
                b.iter_mut().for_each(|v| *v = r.gen_range(-0.2..0.2));
            }
        }
    }
    g
}

pub fn scenes(n: usize, seed: u64) -> Vec<Scene> {
    generate_scenes(&SceneConfig::default(), n, seed)
}
