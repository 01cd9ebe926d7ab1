//! `model.json` + `weights.bin` model format.
//!
//! The manifest lists the declared inputs, the nodes (id, kind, params,
//! inputs, weight refs) and the output heads. Weights are little-endian
//! IEEE-754 `f32` values stored row-major at each ref's byte offset, and are
//! widened to `f64` on load.

use super::{ConvWeights, GateMode, Graph, GraphError, Node, NodeKind, Result};
use crate::tensor::{Shape, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub inputs: Vec<InputRecord>,
    pub nodes: Vec<NodeRecord>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub kind: String,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub weight_refs: Vec<WeightRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRef {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GraphError {
    GraphError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Builds the manifest and weight blob describing `graph`.
pub fn to_manifest(graph: &Graph) -> (ModelManifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, values: &[f64]| {
        let r = WeightRef {
            name: name.to_string(),
            shape,
            byte_offset: blob.len() as u64,
        };
        for v in values {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        r
    };
    let mut inputs = Vec::new();
    let mut nodes = Vec::new();
    for node in graph.nodes() {
        let mut params = Map::new();
        match &node.kind {
            NodeKind::Input { shape } => {
                inputs.push(InputRecord {
                    id: node.id.clone(),
                    shape: shape.dims().to_vec(),
                });
                continue;
            }
            NodeKind::Conv2D { stride, padding } => {
                params.insert("stride".into(), (*stride).into());
                params.insert("padding".into(), (*padding).into());
            }
            NodeKind::GatedMul { mode } => {
                params.insert("gate_mode".into(), mode.as_str().into());
            }
            NodeKind::BilinearResize {
                out_h,
                out_w,
                align_corners,
            } => {
                params.insert("out_h".into(), (*out_h).into());
                params.insert("out_w".into(), (*out_w).into());
                params.insert("align_corners".into(), (*align_corners).into());
            }
            _ => {}
        }
        let mut weight_refs = Vec::new();
        if let Some(w) = &node.weights {
            weight_refs.push(push("weight", w.kernel.shape().dims().to_vec(), w.kernel.data()));
            if let Some(b) = &w.bias {
                weight_refs.push(push("bias", vec![b.len()], b));
            }
        }
        nodes.push(NodeRecord {
            id: node.id.clone(),
            kind: node.kind.tag().as_str().to_string(),
            params,
            inputs: node.inputs.clone(),
            weight_refs,
        });
    }
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        inputs,
        nodes,
        outputs: graph.output_ids().into_iter().map(String::from).collect(),
    };
    (manifest, blob)
}

/// Writes `model.json` and `weights.bin` into `dir`.
pub fn save_model(graph: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (manifest, blob) = to_manifest(graph);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| GraphError::Parse(e.to_string()))?;
    let mpath = dir.join("model.json");
    std::fs::write(&mpath, json + "\n").map_err(|e| io_err(&mpath, e))?;
    let wpath = dir.join("weights.bin");
    std::fs::write(&wpath, blob).map_err(|e| io_err(&wpath, e))?;
    Ok(())
}

pub fn load_model_dir(dir: &Path) -> Result<Graph> {
    load_model(&dir.join("model.json"), &dir.join("weights.bin"))
}

pub fn load_model(manifest: &Path, weights: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(manifest).map_err(|e| io_err(manifest, e))?;
    let blob = std::fs::read(weights).map_err(|e| io_err(weights, e))?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| GraphError::Parse(format!("{}: {e}", manifest.display())))?;
    from_manifest(&manifest, &blob)
}

/// Materializes weights from `blob` and validates the resulting graph.
pub fn from_manifest(manifest: &ModelManifest, blob: &[u8]) -> Result<Graph> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(GraphError::Parse(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut errors = Vec::new();
    let mut nodes = Vec::new();
    for input in &manifest.inputs {
        match Shape::from_slice(&input.shape) {
            Ok(shape) => nodes.push(Node::new(&input.id, NodeKind::Input { shape }, &[])),
            Err(e) => errors.push(GraphError::Param {
                node: input.id.clone(),
                field: "shape".into(),
                detail: e.to_string(),
            }),
        }
    }
    for rec in &manifest.nodes {
        match node_from_record(rec, blob) {
            Ok(n) => nodes.push(n),
            Err(mut e) => errors.append(&mut e),
        }
    }
    if !errors.is_empty() {
        return Err(GraphError::Invalid(errors));
    }
    Graph::new(nodes, manifest.outputs.clone())
}

fn node_from_record(rec: &NodeRecord, blob: &[u8]) -> std::result::Result<Node, Vec<GraphError>> {
    let mut errors = Vec::new();
    let param_err = |field: &str, detail: String| GraphError::Param {
        node: rec.id.clone(),
        field: field.into(),
        detail,
    };
    let uint = |field: &str, default: Option<usize>, errors: &mut Vec<GraphError>| -> usize {
        match rec.params.get(field) {
            Some(v) => v.as_u64().map(|v| v as usize).unwrap_or_else(|| {
                errors.push(param_err(field, format!("expected a non-negative integer, got {v}")));
                0
            }),
            None => default.unwrap_or_else(|| {
                errors.push(param_err(field, "missing".into()));
                0
            }),
        }
    };
    let kind = match rec.kind.as_str() {
        "Conv2D" => NodeKind::Conv2D {
            stride: uint("stride", Some(1), &mut errors),
            padding: uint("padding", Some(0), &mut errors),
        },
        "ReLU" => NodeKind::Relu,
        "Sigmoid" => NodeKind::Sigmoid,
        "Add" => NodeKind::Add,
        "GatedMul" => {
            let mode = match rec.params.get("gate_mode").and_then(Value::as_str) {
                Some("sigmoid") | None => GateMode::Sigmoid,
                Some("one_minus_sigmoid") => GateMode::OneMinusSigmoid,
                Some(other) => {
                    errors.push(param_err("gate_mode", format!("unknown mode `{other}`")));
                    GateMode::Sigmoid
                }
            };
            NodeKind::GatedMul { mode }
        }
        "ConcatC" => NodeKind::ConcatC,
        "BilinearResize" => NodeKind::BilinearResize {
            out_h: uint("out_h", None, &mut errors),
            out_w: uint("out_w", None, &mut errors),
            align_corners: match rec.params.get("align_corners") {
                None => true,
                Some(Value::Bool(b)) => *b,
                Some(v) => {
                    errors.push(param_err("align_corners", format!("expected a bool, got {v}")));
                    true
                }
            },
        },
        "Output" => NodeKind::Output,
        "Input" => {
            errors.push(param_err("kind", "inputs are declared in the `inputs` list".into()));
            NodeKind::Output
        }
        other => {
            errors.push(param_err("kind", format!("unknown node kind `{other}`")));
            NodeKind::Output
        }
    };

    let mut kernel = None;
    let mut bias = None;
    for wr in &rec.weight_refs {
        match read_weight(wr, blob) {
            Ok(values) => match wr.name.as_str() {
                "weight" => match Shape::from_slice(&wr.shape).and_then(|s| Tensor::from_vec(s, values)) {
                    Ok(t) => kernel = Some(t),
                    Err(e) => errors.push(weight_err(rec, wr, e.to_string())),
                },
                "bias" => bias = Some(values),
                other => errors.push(weight_err(rec, wr, format!("unknown weight name `{other}`"))),
            },
            Err(detail) => errors.push(weight_err(rec, wr, detail)),
        }
    }
    let weights = match (&kind, kernel) {
        (NodeKind::Conv2D { .. }, Some(kernel)) => Some(ConvWeights { kernel, bias }),
        (NodeKind::Conv2D { .. }, None) => {
            if errors.is_empty() {
                errors.push(GraphError::Weight {
                    node: rec.id.clone(),
                    name: "weight".into(),
                    detail: "missing weight_ref".into(),
                });
            }
            None
        }
        (_, Some(_)) => {
            errors.push(GraphError::Weight {
                node: rec.id.clone(),
                name: "weight".into(),
                detail: "only Conv2D nodes carry weights".into(),
            });
            None
        }
        (_, None) => None,
    };
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Node {
        id: rec.id.clone(),
        kind,
        inputs: rec.inputs.clone(),
        weights,
    })
}

fn weight_err(rec: &NodeRecord, wr: &WeightRef, detail: String) -> GraphError {
    GraphError::Weight {
        node: rec.id.clone(),
        name: wr.name.clone(),
        detail,
    }
}

fn read_weight(wr: &WeightRef, blob: &[u8]) -> std::result::Result<Vec<f64>, String> {
    let count: usize = wr.shape.iter().product();
    let start = usize::try_from(wr.byte_offset).map_err(|_| "byte_offset overflows".to_string())?;
    let end = start
        .checked_add(count * 4)
        .ok_or_else(|| "byte range overflows".to_string())?;
    if end > blob.len() {
        return Err(format!(
            "bytes {start}..{end} lie outside the {}-byte weight blob",
            blob.len()
        ));
    }
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_conv_manifest() -> ModelManifest {
        serde_json::from_str(
            r#"{
              "format_version": 1,
              "inputs": [{"id": "x", "shape": [1, 1, 3, 3]}],
              "nodes": [
                {"id": "c", "kind": "Conv2D", "params": {"stride": 1, "padding": 1}, "inputs": ["x"],
                 "weight_refs": [{"name": "weight", "shape": [1, 1, 1, 1], "byte_offset": 0},
                                 {"name": "bias", "shape": [1], "byte_offset": 4}]},
                {"id": "out", "kind": "Output", "inputs": ["c"]}
              ],
              "outputs": ["out"]
            }"#,
        )
        .unwrap()
    }

    fn blob(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn loads_single_conv() {
        let g = from_manifest(&one_conv_manifest(), &blob(&[2.0, 0.5])).unwrap();
        assert_eq!(g.nodes_of_kind(super::super::KindTag::Conv2D).len(), 1);
        let w = g.conv_weights(g.index_of("c").unwrap()).unwrap();
        assert_eq!(w.kernel.data(), &[2.0]);
        assert_eq!(w.bias.as_deref(), Some(&[0.5][..]));
    }

    #[test]
    fn weight_outside_blob_names_node() {
        let err = from_manifest(&one_conv_manifest(), &blob(&[2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`c`") && msg.contains("bias"), "{msg}");
    }

    #[test]
    fn dangling_reference_names_id() {
        let mut m = one_conv_manifest();
        m.nodes[1].inputs = vec!["nope".into()];
        let err = from_manifest(&m, &blob(&[2.0, 0.5])).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn unknown_kind_and_bad_param_reported() {
        let mut m = one_conv_manifest();
        m.nodes[0].params.insert("stride".into(), "two".into());
        m.nodes.push(NodeRecord {
            id: "z".into(),
            kind: "MaxPool".into(),
            params: Map::new(),
            inputs: vec!["x".into()],
            weight_refs: vec![],
        });
        let GraphError::Invalid(errs) = from_manifest(&m, &blob(&[2.0, 0.5])).unwrap_err() else {
            panic!("expected a list of errors");
        };
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let g = from_manifest(&one_conv_manifest(), &blob(&[2.0, 0.5])).unwrap();
        let (m, b) = to_manifest(&g);
        let g2 = from_manifest(&m, &b).unwrap();
        assert_eq!(g.nodes(), g2.nodes());
    }
}
