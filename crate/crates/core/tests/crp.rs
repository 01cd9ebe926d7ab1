mod common;

use common::*;
use gatelrp::crp::{
    concept_record, concept_vector, conditional_heatmap, layer_heatmap, relmax_references, top_concepts,
};
use gatelrp::graph::{ForwardTape, Graph, Region, TargetSpec};
use gatelrp::lrp::{lrp_backward, RelevanceTape, RuleAssignment};
use gatelrp::tensor::Tensor;
use gatelrp::zoo::{ToyModelSpec, WeightMode};
use proptest::prelude::*;

struct Case {
    graph: Graph,
    tape: ForwardTape,
    rel: RelevanceTape,
}

fn case(graph: Graph, image: &Tensor, target: TargetSpec) -> Case {
    let tape = graph.forward(image).unwrap();
    let t = target.resolve(&graph, &tape).unwrap();
    let (_, seed) = t.select_scalar(&graph, &tape).unwrap();
    let (rel, _) = lrp_backward(
        &graph,
        &tape,
        graph.head(&t.head).unwrap(),
        &seed,
        &RuleAssignment::default(),
    )
    .unwrap();
    Case { graph, tape, rel }
}

fn pid_case(seed: u64) -> Case {
    let g = ToyModelSpec::toy_pid(WeightMode::Handcrafted).build().unwrap();
    case(
        g,
        &scenes(1, seed)[0].image,
        TargetSpec::segmentation("seg", 1, Region::Mask(vec![true; 64 * 64])),
    )
}

fn det_case(seed: u64) -> Case {
    let g = ToyModelSpec::toy_det(WeightMode::Handcrafted).build().unwrap();
    let s = &scenes(1, seed)[0];
    case(g, &s.image, TargetSpec::detection("obj", 4, 4, 0))
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn singleton_sum(c: &Case, layer: &str) -> Tensor {
    let channels = c.rel.relevance_of(layer).unwrap().shape().c;
    let mut sum: Option<Tensor> = None;
    for ch in 0..channels {
        let m = conditional_heatmap(&c.graph, &c.tape, &c.rel, layer, &[ch], &RuleAssignment::default()).unwrap();
        match &mut sum {
            None => sum = Some(m),
            Some(s) => s.add_assign(&m).unwrap(),
        }
    }
    sum.unwrap()
}

#[test]
fn singletons_add_up_to_the_unconditional_heatmap() {
    // layers every path to the head passes through
    let checks: [(Case, &[&str]); 2] = [
        (pid_case(1), &["head.conv1", "head.conv2", "head.conv3", "stem.conv2"]),
        (det_case(2), &["stem.conv1", "stem.conv2", "stem.conv3"]),
    ];
    for (c, layers) in &checks {
        let full = c.rel.input_relevance().sum_channels();
        for layer in layers.iter() {
            let d = max_abs_diff(&singleton_sum(c, layer), &full);
            assert!(d < 1e-9, "{layer}: deviation {d:.3e}");
        }
    }
}

#[test]
fn branch_layers_add_up_to_their_own_layer_heatmap() {
    let c = pid_case(3);
    for layer in ["p.conv_a", "i.proj", "i.conv1"] {
        let whole = layer_heatmap(&c.graph, &c.tape, &c.rel, layer, &RuleAssignment::default()).unwrap();
        let d = max_abs_diff(&singleton_sum(&c, layer), &whole);
        assert!(d < 1e-9, "{layer}: deviation {d:.3e}");
    }
}

#[test]
fn concept_vector_matches_a_plain_loop() {
    let c = pid_case(4);
    for layer in ["head.conv1", "i.proj", "stem.conv1"] {
        let r = c.rel.relevance_of(layer).unwrap();
        let s = r.shape();
        let mut expected = vec![0.0; s.c];
        for (ch, e) in expected.iter_mut().enumerate() {
            for y in 0..s.h {
                for x in 0..s.w {
                    *e += r.at(0, ch, y, x);
                }
            }
        }
        let got = concept_vector(&c.rel, layer).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
    assert!(concept_vector(&c.rel, "nope").is_err());
}

#[test]
fn empty_or_out_of_range_channel_sets_are_rejected() {
    let c = det_case(0);
    let rules = RuleAssignment::default();
    assert!(conditional_heatmap(&c.graph, &c.tape, &c.rel, "stem.conv1", &[], &rules).is_err());
    assert!(conditional_heatmap(&c.graph, &c.tape, &c.rel, "stem.conv1", &[99], &rules).is_err());
    assert!(conditional_heatmap(&c.graph, &c.tape, &c.rel, "missing", &[0], &rules).is_err());
}

#[test]
fn relmax_picks_the_largest_channel_relevance() {
    let g = ToyModelSpec::toy_pid(WeightMode::Handcrafted).build().unwrap();
    let records: Vec<_> = scenes(12, 9)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let c = case(
                g.clone(),
                &s.image,
                TargetSpec::segmentation("seg", 1, Region::Mask(vec![true; 64 * 64])),
            );
            concept_record(&c.rel, "head.conv3", i, None).unwrap()
        })
        .collect();
    for ch in [0, 5] {
        let refs = relmax_references(&records, "head.conv3", ch, 4, (64, 64), 16).unwrap();
        let mut by_value: Vec<(f64, usize)> = records
            .iter()
            .map(|r| (r.vector.values[ch], r.vector.sample_id))
            .collect();
        by_value.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = by_value.iter().take(4).map(|v| v.1).collect();
        assert_eq!(
            refs.references.iter().map(|r| r.sample_id).collect::<Vec<_>>(),
            expected
        );
        for r in &refs.references {
            assert_eq!(r.crop[2] - r.crop[0], 16);
            assert_eq!(r.crop[3] - r.crop[1], 16);
        }
    }
    assert!(relmax_references(&records, "head.conv3", 0, 0, (64, 64), 16).is_err());
    let top = top_concepts(&records[0].vector.values, 3);
    assert_eq!(top.len(), 3);
    assert!(records[0].vector.values[top[0]] >= records[0].vector.values[top[2]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn any_channel_partition_is_additive(seed in 0u64..400, split in proptest::collection::vec(any::<bool>(), 16)) {
        let c = pid_case(seed);
        let layer = "head.conv2";
        let (a, b): (Vec<usize>, Vec<usize>) = (0..16).partition(|&i| split[i]);
        prop_assume!(!a.is_empty() && !b.is_empty());
        let rules = RuleAssignment::default();
        let mut sum = conditional_heatmap(&c.graph, &c.tape, &c.rel, layer, &a, &rules).unwrap();
        sum.add_assign(&conditional_heatmap(&c.graph, &c.tape, &c.rel, layer, &b, &rules).unwrap()).unwrap();
        let whole = layer_heatmap(&c.graph, &c.tape, &c.rel, layer, &rules).unwrap();
        prop_assert!(max_abs_diff(&sum, &whole) < 1e-9);
    }
}
