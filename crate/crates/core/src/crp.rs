//! Concept relevance: per-channel relevance summaries, channel-conditioned
//! heatmaps and reference-sample retrieval.
//!
//! A conditional heatmap restarts the relevance pass at the concept layer:
//! the unconditional pass supplies the relevance arriving at the layer, the
//! channels outside the requested set are zeroed, and the masked map is
//! propagated to the input. Everything above the layer is untouched, and
//! because each rule is linear in relevance for a fixed forward tape, the
//! heatmaps of a channel partition add up to the heatmap seeded with the full
//! layer relevance.

use crate::graph::{ForwardTape, Graph, GraphError, TargetSpec};
use crate::lrp::{lrp_backward_from, LrpError, RelevanceTape, RuleAssignment};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default number of reference samples per concept.
pub const DEFAULT_K: usize = 8;
/// Default side of the reference crop window, in input pixels.
pub const DEFAULT_CROP: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrpError {
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("invalid channel set: {0}")]
    Channels(String),
    #[error("k must be >= 1")]
    ZeroK,
    #[error(transparent)]
    Lrp(#[from] LrpError),
}

impl From<GraphError> for CrpError {
    fn from(e: GraphError) -> Self {
        CrpError::Lrp(LrpError::Graph(e))
    }
}

type Result<T, E = CrpError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub layer_id: String,
    pub sample_id: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
}

/// Per-channel relevance sums of `layer`.
pub fn concept_vector(tape: &RelevanceTape, layer: &str) -> Result<Vec<f64>> {
    let r = tape
        .relevance_of(layer)
        .ok_or_else(|| CrpError::UnknownLayer(layer.to_string()))?;
    let s = r.shape();
    let mut out = vec![0.0; s.c];
    for n in 0..s.n {
        for (c, v) in out.iter_mut().enumerate() {
            *v += r.plane(n, c).iter().sum::<f64>();
        }
    }
    Ok(out)
}

/// Concept vector plus where each channel's relevance peaks, for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub vector: ConceptVector,
    /// `(row, col)` of the largest relevance per channel, in layer coordinates.
    pub peaks: Vec<(usize, usize)>,
    /// Spatial size of the layer.
    pub layer_hw: (usize, usize),
}

pub fn concept_record(
    tape: &RelevanceTape,
    layer: &str,
    sample_id: usize,
    target: Option<TargetSpec>,
) -> Result<ConceptRecord> {
    let values = concept_vector(tape, layer)?;
    let r = tape.relevance_of(layer).expect("checked above");
    let s = r.shape();
    let peaks = (0..s.c)
        .map(|c| {
            let plane = r.plane(0, c);
            let mut best = 0;
            for (i, v) in plane.iter().enumerate() {
                if *v > plane[best] {
                    best = i;
                }
            }
            (best / s.w, best % s.w)
        })
        .collect();
    Ok(ConceptRecord {
        vector: ConceptVector {
            layer_id: layer.to_string(),
            sample_id,
            values,
            target,
        },
        peaks,
        layer_hw: (s.h, s.w),
    })
}

/// Input-space relevance of the channels in `channels` at `layer`, summed
/// over the color channels. `full` is the unconditional relevance tape of the
/// same forward pass.
pub fn conditional_heatmap(
    graph: &Graph,
    tape: &ForwardTape,
    full: &RelevanceTape,
    layer: &str,
    channels: &[usize],
    assignment: &RuleAssignment,
) -> Result<Tensor> {
    let idx = graph
        .index_of(layer)
        .map_err(|_| CrpError::UnknownLayer(layer.to_string()))?;
    let r = full.relevance(idx);
    let c = r.shape().c;
    if channels.is_empty() {
        return Err(CrpError::Channels("channel set is empty".into()));
    }
    let mut keep = vec![false; c];
    for &ch in channels {
        if ch >= c {
            return Err(CrpError::Channels(format!(
                "channel {ch} out of range for {c} channels at `{layer}`"
            )));
        }
        keep[ch] = true;
    }
    let mut masked = r.clone();
    for n in 0..r.shape().n {
        for (ch, _) in keep.iter().enumerate().filter(|(_, k)| !**k) {
            masked.plane_mut(n, ch).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (conditional, _) = lrp_backward_from(graph, tape, &[(idx, &masked)], assignment)?;
    Ok(conditional.input_relevance().sum_channels())
}

/// Input heatmap of the whole layer relevance; the reference that
/// conditional heatmaps of a channel partition add up to.
pub fn layer_heatmap(
    graph: &Graph,
    tape: &ForwardTape,
    full: &RelevanceTape,
    layer: &str,
    assignment: &RuleAssignment,
) -> Result<Tensor> {
    let idx = graph
        .index_of(layer)
        .map_err(|_| CrpError::UnknownLayer(layer.to_string()))?;
    let all: Vec<usize> = (0..graph.shape(idx).c).collect();
    conditional_heatmap(graph, tape, full, layer, &all, assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub sample_id: usize,
    pub value: f64,
    /// Peak location in layer coordinates.
    pub peak: (usize, usize),
    /// Crop `[row0, col0, row1, col1)` in input pixels, centered on the peak.
    pub crop: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub layer_id: String,
    pub channel: usize,
    pub references: Vec<Reference>,
}

/// Maps a layer-space peak to a `crop × crop` input window, clamped to the image.
pub fn crop_window(
    peak: (usize, usize),
    layer_hw: (usize, usize),
    input_hw: (usize, usize),
    crop: usize,
) -> [usize; 4] {
    let axis = |p: usize, layer: usize, input: usize| {
        let scale = input as f64 / layer as f64;
        let center = ((p as f64 + 0.5) * scale).floor() as usize;
        let size = crop.min(input);
        let start = center.saturating_sub(size / 2).min(input - size);
        (start, start + size)
    };
    let (r0, r1) = axis(peak.0, layer_hw.0, input_hw.0);
    let (c0, c1) = axis(peak.1, layer_hw.1, input_hw.1);
    [r0, c0, r1, c1]
}

/// Top-`k` samples by the relevance of `channel`, ties broken by sample id.
pub fn relmax_references(
    records: &[ConceptRecord],
    layer: &str,
    channel: usize,
    k: usize,
    input_hw: (usize, usize),
    crop: usize,
) -> Result<ReferenceSet> {
    if k == 0 {
        return Err(CrpError::ZeroK);
    }
    let mut rows: Vec<&ConceptRecord> = records.iter().filter(|r| r.vector.layer_id == layer).collect();
    if rows.is_empty() && !records.is_empty() {
        return Err(CrpError::UnknownLayer(layer.to_string()));
    }
    if let Some(r) = rows.iter().find(|r| channel >= r.vector.values.len()) {
        return Err(CrpError::Channels(format!(
            "channel {channel} out of range for {} channels",
            r.vector.values.len()
        )));
    }
    rows.sort_by(|a, b| {
        b.vector.values[channel]
            .total_cmp(&a.vector.values[channel])
            .then(a.vector.sample_id.cmp(&b.vector.sample_id))
    });
    let references = rows
        .into_iter()
        .take(k)
        .map(|r| Reference {
            sample_id: r.vector.sample_id,
            value: r.vector.values[channel],
            peak: r.peaks[channel],
            crop: crop_window(r.peaks[channel], r.layer_hw, input_hw, crop),
        })
        .collect();
    Ok(ReferenceSet {
        layer_id: layer.to_string(),
        channel,
        references,
    })
}

/// Channels ordered by descending relevance (ties by index); the first `m`.
pub fn top_concepts(values: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(m);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, values: Vec<f64>) -> ConceptRecord {
        let n = values.len();
        ConceptRecord {
            vector: ConceptVector {
                layer_id: "l".into(),
                sample_id: id,
                values,
                target: None,
            },
            peaks: vec![(0, 0); n],
            layer_hw: (4, 4),
        }
    }

    #[test]
    fn relmax_argmax_and_ties() {
        let recs = vec![record(0, vec![0.2]), record(1, vec![0.9]), record(2, vec![0.5])];
        let set = relmax_references(&recs, "l", 0, 1, (64, 64), 16).unwrap();
        assert_eq!(set.references[0].sample_id, 1);

        let equal: Vec<_> = (0..5).rev().map(|i| record(i, vec![1.0])).collect();
        let set = relmax_references(&equal, "l", 0, 3, (64, 64), 16).unwrap();
        let ids: Vec<usize> = set.references.iter().map(|r| r.sample_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);

        let set = relmax_references(&recs, "l", 0, 10, (64, 64), 16).unwrap();
        let ids: Vec<usize> = set.references.iter().map(|r| r.sample_id).collect();
        assert_eq!(ids, vec![1, 2, 0]);
        assert_eq!(relmax_references(&recs, "l", 0, 0, (64, 64), 16), Err(CrpError::ZeroK));
    }

    #[test]
    fn crop_is_clamped() {
        assert_eq!(crop_window((0, 0), (16, 16), (64, 64), 16), [0, 0, 16, 16]);
        assert_eq!(crop_window((15, 15), (16, 16), (64, 64), 16), [48, 48, 64, 64]);
        assert_eq!(crop_window((8, 4), (16, 16), (64, 64), 16), [26, 10, 42, 26]);
    }

    #[test]
    fn top_concepts_order() {
        assert_eq!(top_concepts(&[0.1, 0.5, 0.5, -1.0], 3), vec![1, 2, 0]);
    }
}
