//! Layer-wise relevance propagation for gated-fusion convolutional graphs,
//! with concept-level explanations, prototype discovery and a perturbation
//! benchmark.

pub mod crp;
pub mod graph;
pub mod lrp;
pub mod pcx;
pub mod perturb;
pub mod render;
pub mod tensor;
pub mod zoo;
