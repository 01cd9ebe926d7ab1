use super::{ForwardTape, Graph, GraphError, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Pixels of a segmentation head that contribute to the explained scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Pixels whose argmax class equals the target class.
    Predicted,
    /// Explicit row-major `h * w` mask.
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetMode {
    /// Sum of class-`class` logits over `region`.
    Segmentation { class: usize, region: Region },
    /// Class-`class` logit at grid cell `(row, col)`.
    Detection { row: usize, col: usize, class: usize },
}

/// Which scalar of which head is being explained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub head: String,
    #[serde(flatten)]
    pub mode: TargetMode,
}

impl TargetSpec {
    pub fn segmentation(head: &str, class: usize, region: Region) -> Self {
        TargetSpec {
            head: head.to_string(),
            mode: TargetMode::Segmentation { class, region },
        }
    }

    pub fn detection(head: &str, row: usize, col: usize, class: usize) -> Self {
        TargetSpec {
            head: head.to_string(),
            mode: TargetMode::Detection { row, col, class },
        }
    }

    /// Replaces a predicted region by the explicit mask it denotes on `tape`,
    /// so the same pixels can be reused on perturbed forward passes.
    pub fn resolve(&self, graph: &Graph, tape: &ForwardTape) -> Result<TargetSpec> {
        let head = graph.head(&self.head)?;
        let logits = tape.value(head);
        self.check(logits)?;
        Ok(match &self.mode {
            TargetMode::Segmentation {
                class,
                region: Region::Predicted,
            } => TargetSpec::segmentation(&self.head, *class, Region::Mask(predicted_mask(logits, *class))),
            _ => self.clone(),
        })
    }

    fn check(&self, logits: &Tensor) -> Result<()> {
        let s = logits.shape();
        let err = |m: String| Err(GraphError::Target(m));
        if s.n != 1 {
            return err(format!("head `{}` has batch extent {}", self.head, s.n));
        }
        match &self.mode {
            TargetMode::Segmentation { class, region } => {
                if *class >= s.c {
                    return err(format!("class {class} out of range for {} channels", s.c));
                }
                if let Region::Mask(m) = region {
                    if m.len() != s.plane() {
                        return err(format!(
                            "region mask has {} entries, head plane has {}",
                            m.len(),
                            s.plane()
                        ));
                    }
                }
            }
            TargetMode::Detection { row, col, class } => {
                if *class >= s.c || *row >= s.h || *col >= s.w {
                    return err(format!("cell ({row}, {col}) class {class} out of range for head {s}"));
                }
            }
        }
        Ok(())
    }

    /// `(head index, per-entry weights)` where the explained scalar equals
    /// `sum(weights * head_logits)`; weights are 0/1.
    pub(crate) fn gradient_seed(&self, graph: &Graph, tape: &ForwardTape) -> Result<(usize, Tensor)> {
        let head = graph.head(&self.head)?;
        let resolved = self.resolve(graph, tape)?;
        let s = graph.shape(head);
        let mut seed = Tensor::zeros(s);
        match &resolved.mode {
            TargetMode::Segmentation {
                class,
                region: Region::Mask(mask),
            } => {
                if !mask.iter().any(|&m| m) {
                    return Err(GraphError::Target("empty region: nothing to explain".into()));
                }
                for (v, &m) in seed.plane_mut(0, *class).iter_mut().zip(mask) {
                    if m {
                        *v = 1.0;
                    }
                }
            }
            TargetMode::Detection { row, col, class } => *seed.at_mut(0, *class, *row, *col) = 1.0,
            TargetMode::Segmentation { .. } => unreachable!("resolved"),
        }
        Ok((head, seed))
    }

    /// The explained scalar and the initial relevance at the head: the
    /// selected logits in place, zero elsewhere.
    pub fn select_scalar(&self, graph: &Graph, tape: &ForwardTape) -> Result<(f64, Tensor)> {
        let (head, indicator) = self.gradient_seed(graph, tape)?;
        let logits = tape.value(head);
        let mut seed = indicator;
        for (s, l) in seed.data_mut().iter_mut().zip(logits.data()) {
            *s *= l;
        }
        Ok((seed.sum(), seed))
    }

    /// Just the explained scalar.
    pub fn scalar(&self, graph: &Graph, tape: &ForwardTape) -> Result<f64> {
        self.select_scalar(graph, tape).map(|(v, _)| v)
    }

    /// Same as [`TargetSpec::scalar`] on a bare head tensor; `self` must
    /// already be resolved.
    pub fn scalar_on(&self, logits: &Tensor) -> Result<f64> {
        self.check(logits)?;
        match &self.mode {
            TargetMode::Segmentation {
                class,
                region: Region::Mask(mask),
            } => Ok(logits
                .plane(0, *class)
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v)
                .sum()),
            TargetMode::Detection { row, col, class } => Ok(logits.at(0, *class, *row, *col)),
            TargetMode::Segmentation { .. } => Err(GraphError::Target("target region not resolved".into())),
        }
    }
}

/// Per-pixel argmax over channels; ties resolve to the lower channel index.
pub fn argmax_classes(logits: &Tensor) -> Vec<usize> {
    let s = logits.shape();
    (0..s.plane())
        .map(|p| {
            let mut best = 0;
            for c in 1..s.c {
                if logits.plane(0, c)[p] > logits.plane(0, best)[p] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn predicted_mask(logits: &Tensor, class: usize) -> Vec<bool> {
    argmax_classes(logits).into_iter().map(|c| c == class).collect()
}
