//! Feature-map perturbation benchmark.
//!
//! Channels of a layer are ranked by an attribution method, then deleted
//! (set to zero) or inserted in most-relevant-first order while the forward
//! pass is re-run downstream of the layer. The explained logit traces a curve
//! whose area over (deletion) or under (insertion) the starting value measures
//! how faithful the ranking is.

use crate::crp::concept_vector;
use crate::graph::{ForwardTape, Graph, GraphError, Region, TargetSpec};
use crate::lrp::{lrp_backward, LrpError, RuleAssignment};
use crate::tensor::Tensor;
use crate::zoo::Scene;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbError {
    #[error("unknown method `{0}`; valid methods: lrp, gradient, gradcam, activation, random")]
    UnknownMethod(String),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("curve direction mismatch: {0}")]
    Direction(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Lrp(#[from] LrpError),
}

type Result<T, E = PerturbError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreMethod {
    LrpRelevance(RuleAssignment),
    Gradient,
    GradCam,
    Activation,
    Random { seed: u64 },
}

impl ScoreMethod {
    pub const NAMES: [&'static str; 5] = ["lrp", "gradient", "gradcam", "activation", "random"];

    /// Builds a method from its name; LRP uses the default composite and
    /// Random the given seed.
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "lrp" | "lrp-epsilon" => ScoreMethod::LrpRelevance(RuleAssignment::default()),
            "gradient" => ScoreMethod::Gradient,
            "gradcam" | "grad-cam" => ScoreMethod::GradCam,
            "activation" => ScoreMethod::Activation,
            "random" => ScoreMethod::Random { seed },
            other => return Err(PerturbError::UnknownMethod(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::LrpRelevance(_) => "lrp",
            ScoreMethod::Gradient => "gradient",
            ScoreMethod::GradCam => "gradcam",
            ScoreMethod::Activation => "activation",
            ScoreMethod::Random { .. } => "random",
        }
    }
}

/// Per-channel scores of `layer` for the explained scalar of `target`.
/// `stream` distinguishes samples for the Random method.
pub fn channel_scores(
    graph: &Graph,
    tape: &ForwardTape,
    layer: usize,
    target: &TargetSpec,
    method: &ScoreMethod,
    stream: u64,
) -> Result<Vec<f64>> {
    let act = tape.value(layer);
    let s = act.shape();
    let plane_sums = |t: &Tensor, f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..s.c).map(|c| t.plane(0, c).iter().map(|v| f(*v)).sum()).collect()
    };
    Ok(match method {
        ScoreMethod::LrpRelevance(assignment) => {
            let (_, seed) = target.select_scalar(graph, tape)?;
            let head = graph.head(&target.head)?;
            let (rel, _) = lrp_backward(graph, tape, head, &seed, assignment)?;
            concept_vector(&rel, &graph.node(layer).id).map_err(|e| PerturbError::Config(e.to_string()))?
        }
        ScoreMethod::Gradient => {
            let g = graph.backward_gradient(tape, target)?;
            plane_sums(&g.activations[layer], &|v| v.abs())
        }
        ScoreMethod::GradCam => {
            let g = graph.backward_gradient(tape, target)?;
            let plane = s.plane() as f64;
            let grad_mean = plane_sums(&g.activations[layer], &|v| v);
            let act_mean = plane_sums(act, &|v| v);
            grad_mean
                .iter()
                .zip(&act_mean)
                .map(|(g, a)| (g / plane) * (a / plane))
                .collect()
        }
        ScoreMethod::Activation => plane_sums(act, &|v| v),
        ScoreMethod::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(stream);
            let mut scores: Vec<f64> = (0..s.c).map(|c| c as f64).collect();
            scores.shuffle(&mut rng);
            scores
        }
    })
}

/// Channel indices by descending score, ties to the lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Splits a ranking into perturbation steps: one channel per step up to 64
/// channels, otherwise 32 near-equal groups.
pub fn step_groups(order: &[usize]) -> Vec<Vec<usize>> {
    let c = order.len();
    if c <= 64 {
        return order.iter().map(|&i| vec![i]).collect();
    }
    let (base, extra) = (c / 32, c % 32);
    let mut groups = Vec::with_capacity(32);
    let mut at = 0;
    for g in 0..32 {
        let len = base + usize::from(g < extra);
        groups.push(order[at..at + len].to_vec());
        at += len;
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Deletion,
    Insertion,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Deletion => "deletion",
            Direction::Insertion => "insertion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbCurve {
    pub direction: Direction,
    /// `f_0 … f_T`.
    pub values: Vec<f64>,
    /// Channels changed at each step.
    pub steps: Vec<Vec<usize>>,
}

fn check_permutation(order: &[usize], c: usize) -> Result<()> {
    let mut seen = vec![false; c];
    for &i in order {
        if i >= c || std::mem::replace(&mut seen[i], true) {
            return Err(PerturbError::Config(format!(
                "ranking is not a permutation of {c} channels"
            )));
        }
    }
    if order.len() != c {
        return Err(PerturbError::Config(format!(
            "ranking has {} entries for {c} channels",
            order.len()
        )));
    }
    Ok(())
}

fn perturb_curve(
    graph: &Graph,
    tape: &ForwardTape,
    layer: usize,
    target: &TargetSpec,
    order: &[usize],
    direction: Direction,
) -> Result<PerturbCurve> {
    let act = tape.value(layer);
    check_permutation(order, act.shape().c)?;
    let head = graph.head(&target.head)?;
    let groups = step_groups(order);
    let mut values = Vec::with_capacity(groups.len() + 1);
    let mut current = match direction {
        Direction::Deletion => act.clone(),
        Direction::Insertion => Tensor::zeros(act.shape()),
    };
    let eval = |value: &Tensor| -> Result<f64> {
        let logits = graph.rerun_to(tape, layer, value.clone(), head)?;
        Ok(target.scalar_on(&logits)?)
    };
    values.push(eval(&current)?);
    for group in &groups {
        for &c in group {
            let plane = current.plane_mut(0, c);
            match direction {
                Direction::Deletion => plane.iter_mut().for_each(|v| *v = 0.0),
                Direction::Insertion => plane.copy_from_slice(act.plane(0, c)),
            }
        }
        values.push(eval(&current)?);
    }
    Ok(PerturbCurve {
        direction,
        values,
        steps: groups,
    })
}

/// `target` must be resolved so every perturbed pass reads the same logits.
pub fn deletion_curve(
    graph: &Graph,
    tape: &ForwardTape,
    layer: usize,
    target: &TargetSpec,
    order: &[usize],
) -> Result<PerturbCurve> {
    perturb_curve(graph, tape, layer, target, order, Direction::Deletion)
}

pub fn insertion_curve(
    graph: &Graph,
    tape: &ForwardTape,
    layer: usize,
    target: &TargetSpec,
    order: &[usize],
) -> Result<PerturbCurve> {
    perturb_curve(graph, tape, layer, target, order, Direction::Insertion)
}

fn mean_change(curve: &PerturbCurve, sign: f64) -> f64 {
    let t = curve.values.len() - 1;
    let f0 = curve.values[0];
    curve.values[1..].iter().map(|f| sign * (f0 - f)).sum::<f64>() / t.max(1) as f64
}

/// `(1/T) Σ_{t≥1} (f_0 − f_t)` of a deletion curve.
pub fn aoc(curve: &PerturbCurve) -> Result<f64> {
    if curve.direction != Direction::Deletion {
        return Err(PerturbError::Direction("AOC needs a deletion curve".into()));
    }
    Ok(mean_change(curve, 1.0))
}

/// `(1/T) Σ_{t≥1} (f_t − f_0)` of an insertion curve.
pub fn auc(curve: &PerturbCurve) -> Result<f64> {
    if curve.direction != Direction::Insertion {
        return Err(PerturbError::Direction("AUC needs an insertion curve".into()));
    }
    Ok(mean_change(curve, -1.0))
}

/// What each benchmark sample explains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchTarget {
    /// Class logits summed over the predicted region of `class`; the whole
    /// image when nothing is predicted as `class`.
    Segmentation { head: String, class: usize },
    /// Class logit at the cell where `head` peaks.
    Peak { head: String, class: usize },
}

impl BenchTarget {
    pub fn resolve(&self, graph: &Graph, tape: &ForwardTape) -> Result<TargetSpec> {
        match self {
            BenchTarget::Segmentation { head, class } => {
                let t = TargetSpec::segmentation(head, *class, Region::Predicted).resolve(graph, tape)?;
                match &t.mode {
                    crate::graph::TargetMode::Segmentation {
                        region: Region::Mask(m),
                        ..
                    } if !m.iter().any(|&v| v) => Ok(TargetSpec::segmentation(
                        head,
                        *class,
                        Region::Mask(vec![true; m.len()]),
                    )),
                    _ => Ok(t),
                }
            }
            BenchTarget::Peak { head, class } => {
                let idx = graph.head(head)?;
                let logits = tape.value(idx);
                let plane = logits.plane(0, *class.min(&(logits.shape().c - 1)));
                let mut best = 0;
                for (i, v) in plane.iter().enumerate() {
                    if *v > plane[best] {
                        best = i;
                    }
                }
                let w = logits.shape().w;
                Ok(TargetSpec::detection(head, best / w, best % w, *class).resolve(graph, tape)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub layers: Vec<String>,
    pub methods: Vec<ScoreMethod>,
    pub n: usize,
    pub seed: u64,
    pub target: BenchTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub layer: String,
    pub mean_aoc: f64,
    pub mean_auc: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// AOC and AUC averaged over samples and layers.
    pub mean_aoc: f64,
    pub mean_auc: f64,
}

/// Paired one-sided sign test of `better` against `worse` on per-sample AOC
/// averaged over layers. Ties are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub better: String,
    pub worse: String,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub sample: usize,
    pub layer: String,
    pub method: String,
    pub deletion: Vec<f64>,
    pub insertion: Vec<f64>,
    pub aoc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub target: BenchTarget,
    pub samples: Vec<usize>,
    pub layers: Vec<String>,
    pub methods: Vec<String>,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<MethodSummary>,
    pub sign_tests: Vec<SignTest>,
    #[serde(skip)]
    pub curves: Vec<CurveRecord>,
}

impl BenchReport {
    pub fn row(&self, method: &str, layer: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.layer == layer)
    }

    pub fn method(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|m| m.method == method)
    }

    pub fn sign_test(&self, better: &str, worse: &str) -> Option<&SignTest> {
        self.sign_tests.iter().find(|t| t.better == better && t.worse == worse)
    }

    /// `sample,layer,method,direction,step,logit` rows in report order.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("sample,layer,method,direction,step,logit\n");
        for c in &self.curves {
            for (dir, values) in [("deletion", &c.deletion), ("insertion", &c.insertion)] {
                for (step, v) in values.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{dir},{step},{v:e}", c.sample, c.layer, c.method);
                }
            }
        }
        out
    }
}

/// One-sided sign test p-value `P(X ≥ wins)` for `X ~ Bin(wins + losses, ½)`.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 {
        return 1.0;
    }
    if wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

/// Seeded choice of `n` distinct sample indices out of `total`, returned
/// ascending.
pub fn select_samples(total: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

pub fn run_benchmark(graph: &Graph, scenes: &[Scene], config: &BenchConfig) -> Result<BenchReport> {
    if config.layers.is_empty() {
        return Err(PerturbError::Config("layer list is empty".into()));
    }
    if config.methods.is_empty() {
        return Err(PerturbError::Config("method list is empty".into()));
    }
    if config.n == 0 || config.n > scenes.len() {
        return Err(PerturbError::Config(format!(
            "sample count {} must be in 1..={}",
            config.n,
            scenes.len()
        )));
    }
    let layers: Vec<usize> = config
        .layers
        .iter()
        .map(|l| graph.index_of(l).map_err(|_| PerturbError::UnknownLayer(l.clone())))
        .collect::<Result<_>>()?;
    let samples = select_samples(scenes.len(), config.n, config.seed);

    let per_sample: Vec<Vec<CurveRecord>> = samples
        .par_iter()
        .map(|&sid| {
            let tape = graph.forward(&scenes[sid].image)?;
            let target = config.target.resolve(graph, &tape)?;
            let mut records = Vec::new();
            for (&layer, name) in layers.iter().zip(&config.layers) {
                for method in &config.methods {
                    let scores = channel_scores(graph, &tape, layer, &target, method, sid as u64)?;
                    let order = ranking(&scores);
                    let del = deletion_curve(graph, &tape, layer, &target, &order)?;
                    let ins = insertion_curve(graph, &tape, layer, &target, &order)?;
                    records.push(CurveRecord {
                        sample: sid,
                        layer: name.clone(),
                        method: method.name().to_string(),
                        aoc: aoc(&del)?,
                        auc: auc(&ins)?,
                        deletion: del.values,
                        insertion: ins.values,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    let curves: Vec<CurveRecord> = per_sample.into_iter().flatten().collect();

    let names: Vec<String> = config.methods.iter().map(|m| m.name().to_string()).collect();
    let n = samples.len() as f64;
    let mut rows = Vec::new();
    for layer in &config.layers {
        for m in &names {
            let (a, u) = curves
                .iter()
                .filter(|c| &c.layer == layer && &c.method == m)
                .fold((0.0, 0.0), |(a, u), c| (a + c.aoc, u + c.auc));
            rows.push(BenchRow {
                method: m.clone(),
                layer: layer.clone(),
                mean_aoc: a / n,
                mean_auc: u / n,
                samples: samples.len(),
            });
        }
    }
    let summary: Vec<MethodSummary> = names
        .iter()
        .map(|m| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| &r.method == m).collect();
            let l = mine.len() as f64;
            MethodSummary {
                method: m.clone(),
                mean_aoc: mine.iter().map(|r| r.mean_aoc).sum::<f64>() / l,
                mean_auc: mine.iter().map(|r| r.mean_auc).sum::<f64>() / l,
            }
        })
        .collect();

    // per-sample AOC averaged over layers, for the paired tests
    let per_sample_aoc = |m: &str| -> Vec<f64> {
        samples
            .iter()
            .map(|&s| {
                let v: Vec<f64> = curves
                    .iter()
                    .filter(|c| c.sample == s && c.method == m)
                    .map(|c| c.aoc)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect()
    };
    let mut sign_tests = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in names.iter().skip(i + 1) {
            for (better, worse) in [(a, b), (b, a)] {
                let (x, y) = (per_sample_aoc(better), per_sample_aoc(worse));
                let wins = x.iter().zip(&y).filter(|(p, q)| p > q).count();
                let losses = x.iter().zip(&y).filter(|(p, q)| p < q).count();
                sign_tests.push(SignTest {
                    better: better.clone(),
                    worse: worse.clone(),
                    wins,
                    losses,
                    ties: samples.len() - wins - losses,
                    p_value: sign_test_p(wins, losses),
                });
            }
        }
    }

    Ok(BenchReport {
        seed: config.seed,
        target: config.target.clone(),
        samples,
        layers: config.layers.clone(),
        methods: names,
        rows,
        summary,
        sign_tests,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(values: Vec<f64>, direction: Direction) -> PerturbCurve {
        PerturbCurve {
            direction,
            steps: vec![vec![]; values.len() - 1],
            values,
        }
    }

    #[test]
    fn areas_of_simple_curves() {
        let flat = linear(vec![2.0; 5], Direction::Deletion);
        assert_eq!(aoc(&flat).unwrap(), 0.0);
        let t = 8;
        let decay: Vec<f64> = (0..=t).map(|s| 3.0 - s as f64 / t as f64).collect();
        let a = aoc(&linear(decay, Direction::Deletion)).unwrap();
        assert!((a - (t as f64 + 1.0) / (2.0 * t as f64)).abs() < 1e-12);
        assert!(auc(&flat).is_err());
        assert!(aoc(&linear(vec![0.0, 1.0], Direction::Insertion)).is_err());
    }

    #[test]
    fn groups_and_ranking() {
        assert_eq!(ranking(&[0.1, 0.5, 0.5, -2.0]), vec![1, 2, 0, 3]);
        let order: Vec<usize> = (0..70).collect();
        let g = step_groups(&order);
        assert_eq!(g.len(), 32);
        assert_eq!(g.iter().map(Vec::len).sum::<usize>(), 70);
        assert_eq!(g[0].len(), 3);
        assert_eq!(g[31].len(), 2);
        assert_eq!(step_groups(&order[..64]).len(), 64);
    }

    #[test]
    fn sign_test_values() {
        // P(X >= 9 | n = 10) = 11/1024
        assert!((sign_test_p(9, 1) - 11.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert_eq!(sign_test_p(0, 5), 1.0);
    }

    #[test]
    fn method_names() {
        for name in ScoreMethod::NAMES {
            assert_eq!(ScoreMethod::parse(name, 0).unwrap().name(), name);
        }
        assert!(matches!(
            ScoreMethod::parse("saliency", 0),
            Err(PerturbError::UnknownMethod(_))
        ));
    }

    #[test]
    fn sample_selection_is_seeded() {
        assert_eq!(select_samples(50, 10, 3), select_samples(50, 10, 3));
        assert_eq!(select_samples(5, 5, 9), vec![0, 1, 2, 3, 4]);
    }
}
