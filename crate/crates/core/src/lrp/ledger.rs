use super::RelevanceTape;
use serde::{Deserialize, Serialize};

/// Per-node ledger tolerance on `|incoming - outgoing - absorbed|`, scaled by
/// `max(1, mass)` where mass is the absolute relevance handled at the node.
pub const LEDGER_TOLERANCE: f64 = 1e-9;

/// Compensated summation; keeps ledger sums exact enough that rounding in
/// the bookkeeping itself never trips the tolerance.
pub fn neumaier_sum<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub id: String,
    pub kind: String,
    pub rule: Option<String>,
    /// Total relevance arriving at the node's output.
    pub incoming: f64,
    /// Total relevance handed to the node's inputs (or kept, for the graph input).
    pub outgoing: f64,
    /// Bias share, stabilizer share and dropped relevance.
    pub absorbed: f64,
    /// Absolute relevance handled by the node; scales the tolerance.
    pub mass: f64,
    pub residual: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub nodes: Vec<NodeLedger>,
    /// Σ of the seed relevance (equals the explained scalar for logit seeds).
    pub seed_total: f64,
    /// Σ of relevance arriving at the graph input.
    pub input_total: f64,
    pub absorbed_total: f64,
}

impl ConservationReport {
    pub fn from_tape(tape: &RelevanceTape) -> Self {
        let mut nodes = Vec::with_capacity(tape.len());
        for i in 0..tape.len() {
            let incoming = neumaier_sum(tape.relevance(i).data());
            let (outgoing, absorbed, mass) = (tape.outgoing[i], tape.absorbed[i], tape.mass[i]);
            let residual = incoming - outgoing - absorbed;
            nodes.push(NodeLedger {
                id: tape.ids[i].clone(),
                kind: tape.kinds[i].clone(),
                rule: tape.rules[i].map(|r| r.to_string()),
                incoming,
                outgoing,
                absorbed,
                mass,
                residual,
                violation: residual.abs() > LEDGER_TOLERANCE * mass.max(1.0),
            });
        }
        let absorbed_total = neumaier_sum(nodes.iter().map(|n| &n.absorbed));
        ConservationReport {
            input_total: neumaier_sum(tape.input_relevance().data()),
            seed_total: tape.seed_total,
            absorbed_total,
            nodes,
        }
    }

    pub fn violations(&self) -> Vec<&NodeLedger> {
        self.nodes.iter().filter(|n| n.violation).collect()
    }

    pub fn node(&self, id: &str) -> Option<&NodeLedger> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// `seed − (input + absorbed)`; zero for a fully conservative pass.
    pub fn global_residual(&self) -> f64 {
        self.seed_total - self.input_total - self.absorbed_total
    }

    pub fn relative_global_residual(&self) -> f64 {
        self.global_residual().abs() / self.seed_total.abs().max(f64::MIN_POSITIVE)
    }

    /// `|Σ input − seed| / |seed|`: the conservation gap ignoring absorption.
    pub fn input_conservation_error(&self) -> f64 {
        (self.input_total - self.seed_total).abs() / self.seed_total.abs().max(f64::MIN_POSITIVE)
    }
}
