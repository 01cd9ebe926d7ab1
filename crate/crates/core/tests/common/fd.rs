use super::{random_tensor, rng};
use gatelrp::graph::{ForwardTape, Graph, KindTag};
use gatelrp::tensor::Tensor;
use rand::Rng;

pub const H: f64 = 1e-5;

/// Random cotangent per output head; the checked scalar is `Σ u · head`.
pub fn cotangents(g: &Graph, seed: u64) -> Vec<(usize, Tensor)> {
    let mut r = rng(seed);
    g.outputs()
        .iter()
        .map(|&o| (o, random_tensor(g.shape(o), &mut r)))
        .collect()
}

pub fn scalar(tape: &ForwardTape, u: &[(usize, Tensor)]) -> f64 {
    u.iter()
        .map(|(o, t)| {
            tape.value(*o)
                .data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum()
}

pub fn relu_signs(g: &Graph, tape: &ForwardTape) -> Vec<bool> {
    g.nodes_of_kind(KindTag::Relu)
        .into_iter()
        .flat_map(|i| {
            tape.value(g.node_inputs(i)[0])
                .data()
                .iter()
                .map(|v| *v > 0.0)
                .collect::<Vec<_>>()
        })
        .collect()
}

pub struct Check {
    pub max_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Central differences on sampled input entries and conv weights.
/// Coordinates whose perturbation flips a ReLU are skipped: the function is
/// not differentiable across the kink.
pub fn fd_check(g: &Graph, x: &Tensor, samples: usize, seed: u64) -> Check {
    let u = cotangents(g, seed);
    let tape = g.forward(x).unwrap();
    let signs = relu_signs(g, &tape);
    let grads = g.backward_from(&tape, &u).unwrap();
    let mut r = rng(seed + 1);

    // (analytic, numeric) pairs
    let mut pairs = Vec::new();
    let mut skipped = 0;
    let input = g.input_index();
    let n_in = x.data().len();
    for _ in 0..samples.min(n_in) {
        let i = r.gen_range(0..n_in);
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let (tp, tm) = (g.forward(&xp).unwrap(), g.forward(&xm).unwrap());
        if relu_signs(g, &tp) != signs || relu_signs(g, &tm) != signs {
            skipped += 1;
            continue;
        }
        let numeric = (scalar(&tp, &u) - scalar(&tm, &u)) / (2.0 * H);
        pairs.push((grads.activations[input].data()[i], numeric));
    }

    let convs = g.nodes_of_kind(KindTag::Conv2D);
    for _ in 0..samples {
        if convs.is_empty() {
            break;
        }
        let c = convs[r.gen_range(0..convs.len())];
        let (gk, gb) = grads.weights[c].as_ref().unwrap();
        let kernel_len = gk.data().len();
        let n_bias = g.conv_weights(c).unwrap().bias.as_ref().map_or(0, Vec::len);
        let j = r.gen_range(0..kernel_len + n_bias);
        let perturbed = |delta: f64| {
            let mut gg = g.clone();
            let w = gg.conv_weights_mut(c).unwrap();
            if j < kernel_len {
                w.kernel.data_mut()[j] += delta;
            } else {
                w.bias.as_mut().unwrap()[j - kernel_len] += delta;
            }
            let t = gg.forward(x).unwrap();
            (relu_signs(&gg, &t) == signs, scalar(&t, &u))
        };
        let ((okp, fp), (okm, fm)) = (perturbed(H), perturbed(-H));
        if !(okp && okm) {
            skipped += 1;
            continue;
        }
        let analytic = if j < kernel_len {
            gk.data()[j]
        } else {
            gb[j - kernel_len]
        };
        pairs.push((analytic, (fp - fm) / (2.0 * H)));
    }

    let scale = pairs.iter().fold(0.0f64, |m, (a, _)| m.max(a.abs()));
    let floor = 1e-6 * scale.max(1e-12);
    let max_rel = pairs
        .iter()
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max);
    Check {
        max_rel,
        checked: pairs.len(),
        skipped,
    }
}
