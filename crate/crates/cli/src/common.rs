use crate::error::CliError;
use gatelrp::graph::{load_model_dir, ForwardTape, Graph, KindTag, Region, TargetSpec};
use gatelrp::lrp::{RuleAssignment, RuleKind};
use gatelrp::perturb::BenchTarget;
use gatelrp::tensor::Tensor;
use gatelrp::zoo::{explainable_heads, read_mask_png, read_rgb_png};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    gatelrp::zoo::write_json(path, value).map_err(CliError::data)
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

pub fn parse_pair(s: &str, what: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("{what}: expected `a,b`, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

/// Comma-separated items, each either a bare rule (applied to every linear
/// kind), `Kind=rule` (a node-kind default) or `node_id=rule` (an override).
pub fn parse_rules(s: &str) -> Result<RuleAssignment, CliError> {
    let mut a = RuleAssignment::default();
    for item in split_list(s) {
        if item.eq_ignore_ascii_case("default") {
            continue;
        }
        match item.split_once('=') {
            None => {
                let rule: RuleKind = item.parse().map_err(CliError::usage)?;
                for kind in [KindTag::Conv2D, KindTag::Add, KindTag::BilinearResize] {
                    a.set_default(kind, rule).map_err(CliError::usage)?;
                }
            }
            Some((key, rule)) => {
                let rule: RuleKind = rule.parse().map_err(CliError::usage)?;
                match KindTag::parse(key.trim()) {
                    Some(kind) => a.set_default(kind, rule),
                    None => a.set_override(key.trim(), rule),
                }
                .map_err(CliError::usage)?;
            }
        }
    }
    Ok(a)
}

pub fn load_graph(dir: &Path) -> Result<Graph, CliError> {
    if !dir.exists() {
        return Err(CliError::Usage(format!(
            "model directory {} does not exist",
            dir.display()
        )));
    }
    load_model_dir(dir).map_err(CliError::data)
}

pub fn load_image(path: &Path) -> Result<Tensor, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("image {} does not exist", path.display())));
    }
    read_rgb_png(path).map_err(CliError::data)
}

pub fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} directory {} does not exist",
            path.display()
        )))
    }
}

pub fn default_head(graph: &Graph) -> Result<String, CliError> {
    explainable_heads(graph)
        .first()
        .map(|s| s.to_string())
        .ok_or_else(|| CliError::usage("model has no explainable head"))
}

/// Heads at input resolution are segmentation heads; coarser ones are grids.
pub fn is_dense_head(graph: &Graph, head: &str) -> Result<bool, CliError> {
    let idx = graph.head(head).map_err(CliError::usage)?;
    let (s, i) = (graph.shape(idx), graph.input_shape());
    Ok(s.h == i.h && s.w == i.w)
}

/// Head and class a prototype store or benchmark explains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainContext {
    pub head: String,
    pub class: usize,
}

impl ExplainContext {
    pub fn resolve(graph: &Graph, head: Option<String>, class: Option<usize>) -> Result<Self, CliError> {
        let head = match head {
            Some(h) => h,
            None => default_head(graph)?,
        };
        let idx = graph.head(&head).map_err(CliError::usage)?;
        let class = class.unwrap_or(if is_dense_head(graph, &head)? { 1 } else { 0 });
        let channels = graph.shape(idx).c;
        if class >= channels {
            return Err(CliError::Usage(format!(
                "class {class} out of range for head `{head}` with {channels} channels"
            )));
        }
        Ok(ExplainContext { head, class })
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("plain struct")
    }

    pub fn decode(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Data(format!("prototype store context `{s}`: {e}")))
    }

    /// Dense heads explain the predicted region (the whole image when it is
    /// empty); grid heads explain the cell where the class logit peaks.
    pub fn bench_target(&self, graph: &Graph) -> Result<BenchTarget, CliError> {
        Ok(if is_dense_head(graph, &self.head)? {
            BenchTarget::Segmentation {
                head: self.head.clone(),
                class: self.class,
            }
        } else {
            BenchTarget::Peak {
                head: self.head.clone(),
                class: self.class,
            }
        })
    }

    /// Strict target for a single explanation: an empty predicted region is
    /// an error rather than a fallback.
    pub fn target(
        &self,
        graph: &Graph,
        tape: &ForwardTape,
        cell: Option<(usize, usize)>,
        mask: Option<&Path>,
    ) -> Result<TargetSpec, CliError> {
        let spec = if is_dense_head(graph, &self.head)? {
            let region = match mask {
                None => Region::Predicted,
                Some(p) => {
                    let m = read_mask_png(p).map_err(CliError::data)?;
                    Region::Mask(m.iter().map(|&v| v as usize == self.class).collect())
                }
            };
            TargetSpec::segmentation(&self.head, self.class, region)
        } else {
            match cell {
                Some((r, c)) => TargetSpec::detection(&self.head, r, c, self.class),
                None => return self.bench_target(graph)?.resolve(graph, tape).map_err(CliError::data),
            }
        };
        let resolved = spec.resolve(graph, tape).map_err(CliError::data)?;
        // validates the region is non-empty
        resolved.scalar(graph, tape).map_err(CliError::data)?;
        Ok(resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_strings() {
        let a = parse_rules("epsilon:0").unwrap();
        assert_eq!(a.defaults["Conv2D"], RuleKind::Epsilon(0.0));
        let a = parse_rules("Add=zplus, head.cls=gamma:0.5").unwrap();
        assert_eq!(a.defaults["Add"], RuleKind::ZPlus);
        assert_eq!(a.overrides["head.cls"], RuleKind::Gamma(0.5));
        assert!(matches!(parse_rules("bogus"), Err(CliError::Usage(_))));
        assert_eq!(parse_rules("default").unwrap(), RuleAssignment::default());
    }

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("1, 3", "cars").unwrap(), (1, 3));
        assert!(parse_pair("1", "cars").is_err());
    }
}
