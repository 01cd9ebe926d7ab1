use super::scene::{Scene, NUM_CLASSES};
use super::ZooError;
use crate::graph::{ForwardTape, Graph, NodeKind};
use crate::tensor::{Shape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTask {
    /// Per-pixel softmax cross-entropy on the `seg` head.
    Segmentation,
    /// Objectness BCE on every cell plus color cross-entropy on positive cells.
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TrainTask,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(task: TrainTask, epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            task,
            epochs,
            lr,
            batch_size: 8,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    /// Mean per-sample loss of each epoch, measured before each batch's update.
    pub losses: Vec<f64>,
}

/// Loss of one sample and its gradient seeds at the output heads.
fn sample_loss(
    graph: &Graph,
    tape: &ForwardTape,
    task: TrainTask,
    scene: &Scene,
) -> Result<(f64, Vec<(usize, Tensor)>), ZooError> {
    match task {
        TrainTask::Segmentation => {
            let head = graph.head("seg")?;
            let logits = tape.value(head);
            let s = logits.shape();
            if s.c != NUM_CLASSES || scene.mask.len() != s.plane() {
                return Err(ZooError::Config(format!(
                    "segmentation head {s} does not match the masks"
                )));
            }
            let plane = s.plane();
            let mut grad = Tensor::zeros(s);
            let mut loss = 0.0;
            for p in 0..plane {
                let z: Vec<f64> = (0..s.c).map(|c| logits.data()[c * plane + p]).collect();
                let (probs, lse) = softmax(&z);
                let label = scene.mask[p] as usize;
                loss += lse - z[label];
                for c in 0..s.c {
                    let onehot = if c == label { 1.0 } else { 0.0 };
                    grad.data_mut()[c * plane + p] = (probs[c] - onehot) / plane as f64;
                }
            }
            Ok((loss / plane as f64, vec![(head, grad)]))
        }
        TrainTask::Detection => {
            let (obj_head, cls_head) = (graph.head("obj")?, graph.head("cls")?);
            let obj = tape.value(obj_head);
            let cls = tape.value(cls_head);
            let grid = obj.shape();
            let cell = scene_size(scene) / grid.h;
            let cells = grid.plane();
            let mut positive = vec![None; cells];
            for b in &scene.boxes {
                let (r, c) = b.center_cell(cell);
                positive[r * grid.w + c] = Some(b.color.index());
            }
            let n_pos = positive.iter().filter(|p| p.is_some()).count();
            let mut g_obj = Tensor::zeros(grid);
            let mut g_cls = Tensor::zeros(cls.shape());
            let mut loss = 0.0;
            for p in 0..cells {
                let z = obj.data()[p];
                let y = if positive[p].is_some() { 1.0 } else { 0.0 };
                // log(1 + e^z) − y z, computed stably
                loss += (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z) / cells as f64;
                g_obj.data_mut()[p] = (sigmoid(z) - y) / cells as f64;
                if let Some(label) = positive[p] {
                    if label >= cls.shape().c {
                        continue;
                    }
                    let z: Vec<f64> = (0..cls.shape().c).map(|c| cls.data()[c * cells + p]).collect();
                    let (probs, lse) = softmax(&z);
                    loss += (lse - z[label]) / n_pos as f64;
                    for c in 0..z.len() {
                        let onehot = if c == label { 1.0 } else { 0.0 };
                        g_cls.data_mut()[c * cells + p] = (probs[c] - onehot) / n_pos as f64;
                    }
                }
            }
            Ok((loss, vec![(obj_head, g_obj), (cls_head, g_cls)]))
        }
    }
}

fn scene_size(scene: &Scene) -> usize {
    scene.image.shape().h
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Probabilities and log-sum-exp of a logit vector.
fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (e.iter().map(|v| v / s).collect(), m + s.ln())
}

/// Mini-batch gradient descent without momentum. Per-sample gradients in a
/// batch are computed in parallel and summed in sample order, so the result is
/// bit-identical for a given seed regardless of thread count.
pub fn train_sgd(graph: &mut Graph, scenes: &[Scene], config: &TrainConfig) -> Result<TrainReport, ZooError> {
    if !(config.lr.is_finite() && config.lr > 0.0) || config.batch_size == 0 {
        return Err(ZooError::Config("lr must be positive and batch_size >= 1".into()));
    }
    if scenes.is_empty() && config.epochs > 0 {
        return Err(ZooError::Config("cannot train on an empty dataset".into()));
    }
    let convs: Vec<usize> = (0..graph.len())
        .filter(|&i| matches!(graph.node(i).kind, NodeKind::Conv2D { .. }))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let g: &Graph = graph;
            let per_sample: Vec<(f64, Vec<Option<(Tensor, Vec<f64>)>>)> = batch
                .par_iter()
                .map(|&i| {
                    let tape = g.forward(&scenes[i].image)?;
                    let (loss, seeds) = sample_loss(g, &tape, config.task, &scenes[i])?;
                    let grads = g.backward_from(&tape, &seeds)?;
                    Ok((loss, grads.weights))
                })
                .collect::<Result<_, ZooError>>()?;
            let scale = config.lr / batch.len() as f64;
            let mut total: Vec<Option<(Tensor, Vec<f64>)>> = vec![None; graph.len()];
            for (loss, weights) in per_sample {
                if !loss.is_finite() {
                    losses.push(f64::NAN);
                    return Err(ZooError::Diverged { epoch, losses });
                }
                epoch_loss += loss;
                for &idx in &convs {
                    let Some((gw, gb)) = &weights[idx] else { continue };
                    match &mut total[idx] {
                        Some((tw, tb)) => {
                            tw.add_assign(gw).expect("same kernel shape");
                            tb.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                        }
                        slot => *slot = Some((gw.clone(), gb.clone())),
                    }
                }
            }
            for &idx in &convs {
                let Some((gw, gb)) = &total[idx] else { continue };
                let w = graph.conv_weights_mut(idx).expect("conv node");
                w.kernel
                    .data_mut()
                    .iter_mut()
                    .zip(gw.data())
                    .for_each(|(v, g)| *v -= scale * g);
                if let Some(b) = w.bias.as_mut() {
                    b.iter_mut().zip(gb).for_each(|(v, g)| *v -= scale * g);
                }
            }
        }
        let mean = epoch_loss / scenes.len() as f64;
        losses.push(mean);
        if !mean.is_finite() {
            return Err(ZooError::Diverged { epoch, losses });
        }
    }
    Ok(TrainReport {
        config: config.clone(),
        losses,
    })
}

/// Fraction of pixels whose argmax class equals the mask.
pub fn pixel_accuracy(graph: &Graph, scenes: &[Scene]) -> Result<f64, ZooError> {
    let head = graph.head("seg")?;
    let hits: Vec<(usize, usize)> = scenes
        .par_iter()
        .map(|s| {
            let tape = graph.forward(&s.image)?;
            let pred = crate::graph::argmax_classes(tape.value(head));
            let ok = pred.iter().zip(&s.mask).filter(|(p, m)| **p == **m as usize).count();
            Ok((ok, s.mask.len()))
        })
        .collect::<Result<_, ZooError>>()?;
    let (ok, total) = hits.iter().fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    Ok(ok as f64 / total.max(1) as f64)
}

/// Grid cell with the highest objectness logit; ties go to the first cell in
/// row-major order.
pub fn objectness_argmax(graph: &Graph, image: &Tensor) -> Result<(usize, usize), ZooError> {
    let head = graph.head("obj")?;
    let tape = graph.forward(image)?;
    let obj = tape.value(head);
    let Shape { w, .. } = obj.shape();
    let mut best = 0;
    for (i, v) in obj.data().iter().enumerate() {
        if *v > obj.data()[best] {
            best = i;
        }
    }
    Ok((best / w, best % w))
}

/// Fraction of single-car scenes whose objectness argmax cell overlaps the box.
pub fn detection_hit_rate(graph: &Graph, scenes: &[Scene]) -> Result<f64, ZooError> {
    let grid = graph.shape(graph.head("obj")?);
    let single: Vec<&Scene> = scenes.iter().filter(|s| s.boxes.len() == 1).collect();
    let hits = single
        .par_iter()
        .map(|s| {
            let cell = scene_size(s) / grid.h;
            let (r, c) = objectness_argmax(graph, &s.image)?;
            Ok(s.boxes[0].overlaps_cell(r, c, cell))
        })
        .collect::<Result<Vec<bool>, ZooError>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / single.len().max(1) as f64)
}
