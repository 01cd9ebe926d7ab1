//! Layer-wise relevance propagation over a recorded forward tape.
//!
//! Relevance starts at a head (the seed) and flows backwards in reverse
//! topological order. Each node hands its accumulated relevance to its inputs
//! according to the rule assigned to it; whatever a linear rule cannot hand
//! on (bias share, stabilizer share, zero denominators) is booked as
//! absorbed in the [`ConservationReport`].

mod engine;
mod ledger;
mod rules;

pub use engine::{lrp_backward, lrp_backward_from, RelevanceTape};
pub use ledger::{neumaier_sum, ConservationReport, NodeLedger, LEDGER_TOLERANCE};
pub use rules::{
    rule_epsilon, rule_gamma, rule_gated_signal_take_all, rule_passthrough, rule_zplus, split_concat, LinearContext,
    Redistribution,
};

use crate::graph::{GraphError, KindTag, Node};
use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LrpError {
    #[error("rule configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node `{node}`: {source}")]
    Shape { node: String, source: TensorError },
}

pub type Result<T, E = LrpError> = std::result::Result<T, E>;

/// Stabilizer of the default ε-rule.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    Epsilon(f64),
    ZPlus,
    Gamma(f64),
    GatedSignalTakeAll,
    PassThrough,
}

impl RuleKind {
    fn validate(&self) -> Result<()> {
        match self {
            RuleKind::Epsilon(e) if !(e.is_finite() && *e >= 0.0) => {
                Err(LrpError::Config(format!("epsilon must be finite and >= 0, got {e}")))
            }
            RuleKind::Gamma(g) if !(g.is_finite() && *g >= 0.0) => {
                Err(LrpError::Config(format!("gamma must be finite and >= 0, got {g}")))
            }
            _ => Ok(()),
        }
    }

    fn is_linear(&self) -> bool {
        matches!(self, RuleKind::Epsilon(_) | RuleKind::ZPlus | RuleKind::Gamma(_))
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKind::Epsilon(e) => write!(f, "epsilon:{e}"),
            RuleKind::ZPlus => f.write_str("zplus"),
            RuleKind::Gamma(g) => write!(f, "gamma:{g}"),
            RuleKind::GatedSignalTakeAll => f.write_str("signal-take-all"),
            RuleKind::PassThrough => f.write_str("passthrough"),
        }
    }
}

impl FromStr for RuleKind {
    type Err = LrpError;

    /// Accepts `epsilon[:value]`, `zplus`, `gamma[:value]`, `signal-take-all`, `passthrough`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.as_str(), None),
        };
        let number = |default: f64| -> Result<f64> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|_| LrpError::Config(format!("bad rule parameter `{a}` in `{s}`"))),
            }
        };
        let rule = match name {
            "epsilon" | "eps" => RuleKind::Epsilon(number(DEFAULT_EPSILON)?),
            "zplus" | "z+" => RuleKind::ZPlus,
            "gamma" => RuleKind::Gamma(number(0.25)?),
            "signal-take-all" | "signal_take_all" | "gated" => RuleKind::GatedSignalTakeAll,
            "passthrough" | "identity" => RuleKind::PassThrough,
            _ => return Err(LrpError::Config(format!("unknown rule `{s}`"))),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl Serialize for RuleKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RuleKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Default rule per node kind plus per-node overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAssignment {
    pub defaults: BTreeMap<String, RuleKind>,
    #[serde(default)]
    pub overrides: BTreeMap<String, RuleKind>,
}

impl Default for RuleAssignment {
    /// Conv2D/Add/BilinearResize → ε(1e-6); GatedMul → signal-take-all; ReLU/Sigmoid → pass-through.
    fn default() -> Self {
        RuleAssignment::uniform(RuleKind::Epsilon(DEFAULT_EPSILON))
    }
}

impl RuleAssignment {
    /// The default composite with `linear` on every Conv2D, Add and BilinearResize node.
    pub fn uniform(linear: RuleKind) -> Self {
        let mut defaults = BTreeMap::new();
        for tag in [KindTag::Conv2D, KindTag::Add, KindTag::BilinearResize] {
            defaults.insert(tag.as_str().to_string(), linear);
        }
        defaults.insert(KindTag::GatedMul.as_str().into(), RuleKind::GatedSignalTakeAll);
        defaults.insert(KindTag::Relu.as_str().into(), RuleKind::PassThrough);
        defaults.insert(KindTag::Sigmoid.as_str().into(), RuleKind::PassThrough);
        RuleAssignment {
            defaults,
            overrides: BTreeMap::new(),
        }
    }

    /// No defaults at all; every kind must be set explicitly.
    pub fn empty() -> Self {
        RuleAssignment {
            defaults: BTreeMap::new(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn set_default(&mut self, kind: KindTag, rule: RuleKind) -> Result<()> {
        rule.validate()?;
        self.defaults.insert(kind.as_str().to_string(), rule);
        Ok(())
    }

    pub fn set_override(&mut self, node: &str, rule: RuleKind) -> Result<()> {
        rule.validate()?;
        self.overrides.insert(node.to_string(), rule);
        Ok(())
    }

    pub fn with_override(mut self, node: &str, rule: RuleKind) -> Result<Self> {
        self.set_override(node, rule)?;
        Ok(self)
    }

    /// Resolves and checks the rule for `node`. Input, Output and ConcatC are
    /// structural and have no rule (`None`).
    pub fn rule_for(&self, node: &Node) -> Result<Option<RuleKind>> {
        let tag = node.kind.tag();
        if matches!(tag, KindTag::Input | KindTag::Output | KindTag::ConcatC) {
            return Ok(None);
        }
        let rule = self
            .overrides
            .get(&node.id)
            .or_else(|| {
                self.defaults
                    .iter()
                    .find(|(k, _)| KindTag::parse(k) == Some(tag))
                    .map(|(_, r)| r)
            })
            .copied()
            .ok_or_else(|| LrpError::Config(format!("no rule assigned for node `{}` of kind {tag}", node.id)))?;
        rule.validate()?;
        let ok = match tag {
            KindTag::Conv2D | KindTag::Add | KindTag::BilinearResize => rule.is_linear(),
            KindTag::GatedMul => rule == RuleKind::GatedSignalTakeAll || rule.is_linear(),
            KindTag::Relu | KindTag::Sigmoid => rule == RuleKind::PassThrough,
            KindTag::Input | KindTag::Output | KindTag::ConcatC => unreachable!(),
        };
        if !ok {
            return Err(LrpError::Config(format!(
                "rule {rule} cannot be applied to node `{}` of kind {tag}",
                node.id
            )));
        }
        Ok(Some(rule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;

    #[test]
    fn parses_rules() {
        assert_eq!("epsilon:0.1".parse::<RuleKind>().unwrap(), RuleKind::Epsilon(0.1));
        assert_eq!(
            "epsilon".parse::<RuleKind>().unwrap(),
            RuleKind::Epsilon(DEFAULT_EPSILON)
        );
        assert_eq!("ZPlus".parse::<RuleKind>().unwrap(), RuleKind::ZPlus);
        assert_eq!("gamma:1".parse::<RuleKind>().unwrap(), RuleKind::Gamma(1.0));
        assert!("epsilon:-1".parse::<RuleKind>().is_err());
        assert!("alphabeta".parse::<RuleKind>().is_err());
        for r in [RuleKind::Epsilon(0.5), RuleKind::ZPlus, RuleKind::GatedSignalTakeAll] {
            assert_eq!(r.to_string().parse::<RuleKind>().unwrap(), r);
        }
    }

    #[test]
    fn rule_resolution() {
        let a = RuleAssignment::default();
        let relu = Node::new("r", NodeKind::Relu, &["x"]);
        assert_eq!(a.rule_for(&relu).unwrap(), Some(RuleKind::PassThrough));
        let a = a.with_override("r", RuleKind::ZPlus).unwrap();
        assert!(a.rule_for(&relu).is_err());
        let missing = RuleAssignment::empty();
        assert!(matches!(missing.rule_for(&relu), Err(LrpError::Config(_))));
        let concat = Node::new("c", NodeKind::ConcatC, &["x"]);
        assert_eq!(missing.rule_for(&concat).unwrap(), None);
    }
}
