//! Prototypes over concept relevance vectors: mixture fitting, prototype
//! summaries, assignment, outlier flags and difference-to-prototype reports.

mod gmm;

pub use gmm::{fit_gmm, Assignment, GmmConfig, GmmModel, VARIANCE_FLOOR};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PcxError {
    #[error("need at least K rows: N = {n}, K = {k}")]
    TooFewRows { n: usize, k: usize },
    #[error("vector has {got} entries, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("vector is all zero; its direction is undefined")]
    ZeroVector,
    #[error("percentile q = {0} outside (0, 50]")]
    Percentile(f64),
    #[error("component {component} out of range for K = {k}")]
    Component { component: usize, k: usize },
    #[error("configuration: {0}")]
    Config(String),
}

/// Divides by the L1 norm of absolute values, keeping signs. `None` for an
/// all-zero (or non-finite) vector.
pub fn normalize_l1(v: &[f64]) -> Option<Vec<f64>> {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// Rows of normalized concept relevance for one layer and explanation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatrix {
    pub layer_id: String,
    pub context: String,
    pub rows: Vec<Vec<f64>>,
    /// Sample id of each row.
    pub sample_ids: Vec<usize>,
    /// Samples dropped because their raw vector was all zero.
    pub excluded: Vec<usize>,
}

impl ConceptMatrix {
    /// Normalizes raw `(sample id, vector)` pairs, excluding all-zero rows.
    pub fn from_vectors(layer_id: &str, context: &str, vectors: &[(usize, Vec<f64>)]) -> Self {
        let mut m = ConceptMatrix {
            layer_id: layer_id.to_string(),
            context: context.to_string(),
            rows: Vec::new(),
            sample_ids: Vec::new(),
            excluded: Vec::new(),
        };
        for (id, v) in vectors {
            match normalize_l1(v) {
                Some(row) => {
                    m.rows.push(row);
                    m.sample_ids.push(*id);
                }
                None => m.excluded.push(*id),
            }
        }
        m
    }

    /// Rows used as given, without normalization.
    pub fn raw(layer_id: &str, rows: Vec<Vec<f64>>) -> Self {
        ConceptMatrix {
            layer_id: layer_id.to_string(),
            context: String::new(),
            sample_ids: (0..rows.len()).collect(),
            rows,
            excluded: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_mean(&self) -> Vec<f64> {
        let dim = self.rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for r in &self.rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= self.rows.len().max(1) as f64);
        mean
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, PcxError> {
    if a.len() != b.len() {
        return Err(PcxError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(PcxError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine after subtracting each vector's own mean over concepts, falling
/// back to the plain cosine when a centered vector vanishes.
pub fn centered_cosine(a: &[f64], b: &[f64]) -> Result<f64, PcxError> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let c: Vec<f64> = v.iter().map(|x| x - m).collect();
        // rounding residue of a constant vector counts as zero
        (norm(&c) > 1e-12 * norm(v)).then_some(c)
    };
    match (center(a), center(b)) {
        (Some(ca), Some(cb)) => cosine_similarity(&ca, &cb).or_else(|_| cosine_similarity(a, b)),
        _ => cosine_similarity(a, b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSummary {
    pub component: usize,
    /// Percent of training rows hard-assigned to this component.
    pub coverage: f64,
    /// Centered cosine of the component mean against the global mean; absent
    /// when either vector is zero.
    pub cosine: Option<f64>,
    /// `(concept, μ value)` for the top concepts by `|μ|`.
    pub top_concepts: Vec<(usize, f64)>,
}

pub fn prototype_summary(
    model: &GmmModel,
    matrix: &ConceptMatrix,
    top_m: usize,
) -> Result<Vec<PrototypeSummary>, PcxError> {
    let mut counts = vec![0usize; model.k()];
    for row in &matrix.rows {
        counts[model.assign(row)?.component] += 1;
    }
    let global = matrix.column_mean();
    Ok((0..model.k())
        .map(|k| {
            let mu = &model.means[k];
            let mut order: Vec<usize> = (0..mu.len()).collect();
            order.sort_by(|&a, &b| mu[b].abs().total_cmp(&mu[a].abs()).then(a.cmp(&b)));
            PrototypeSummary {
                component: k,
                coverage: 100.0 * counts[k] as f64 / matrix.len().max(1) as f64,
                cosine: centered_cosine(mu, &global).ok(),
                top_concepts: order.into_iter().take(top_m).map(|c| (c, mu[c])).collect(),
            }
        })
        .collect())
}

/// Linear-interpolation percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierCalibration {
    pub q: f64,
    pub threshold: f64,
    /// Training log-likelihoods, ascending.
    pub training: Vec<f64>,
}

pub fn calibrate_outliers(model: &GmmModel, matrix: &ConceptMatrix, q: f64) -> Result<OutlierCalibration, PcxError> {
    if !(q > 0.0 && q <= 50.0) {
        return Err(PcxError::Percentile(q));
    }
    let mut training = matrix
        .rows
        .iter()
        .map(|r| model.log_density(r))
        .collect::<Result<Vec<f64>, _>>()?;
    training.sort_by(f64::total_cmp);
    Ok(OutlierCalibration {
        q,
        threshold: percentile(&training, q),
        training,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierScore {
    pub log_likelihood: f64,
    /// Percent of training log-likelihoods at or below this one.
    pub percentile: f64,
    pub outlier: bool,
}

pub fn outlier_score(
    vector: &[f64],
    model: &GmmModel,
    calibration: &OutlierCalibration,
) -> Result<OutlierScore, PcxError> {
    let ll = model.log_density(vector)?;
    let below = calibration.training.partition_point(|t| *t <= ll);
    Ok(OutlierScore {
        log_likelihood: ll,
        percentile: 100.0 * below as f64 / calibration.training.len().max(1) as f64,
        outlier: ll < calibration.threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    OverUsed,
    UnderUsed,
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub concept: usize,
    pub test: f64,
    pub prototype: f64,
    pub delta: f64,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub component: usize,
    pub entries: Vec<DiffEntry>,
}

impl DiffReport {
    pub fn top(&self, n: usize) -> &[DiffEntry] {
        &self.entries[..n.min(self.entries.len())]
    }
}

/// Per-concept `test − μ_component`, largest magnitude first (ties by concept).
pub fn difference_to_prototype(vector: &[f64], model: &GmmModel, component: usize) -> Result<DiffReport, PcxError> {
    if component >= model.k() {
        return Err(PcxError::Component {
            component,
            k: model.k(),
        });
    }
    let mu = &model.means[component];
    if vector.len() != mu.len() {
        return Err(PcxError::Dimension {
            expected: mu.len(),
            got: vector.len(),
        });
    }
    let mut entries: Vec<DiffEntry> = vector
        .iter()
        .zip(mu)
        .enumerate()
        .map(|(c, (&t, &p))| {
            let delta = t - p;
            DiffEntry {
                concept: c,
                test: t,
                prototype: p,
                delta,
                usage: if delta > 0.0 {
                    Usage::OverUsed
                } else if delta < 0.0 {
                    Usage::UnderUsed
                } else {
                    Usage::Matched
                },
            }
        })
        .collect();
    entries.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then(a.concept.cmp(&b.concept)));
    Ok(DiffReport { component, entries })
}

/// Everything `prototypes.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    pub layer_id: String,
    pub context: String,
    pub model: GmmModel,
    pub summaries: Vec<PrototypeSummary>,
    pub calibration: OutlierCalibration,
    pub training_samples: Vec<usize>,
    pub excluded_samples: Vec<usize>,
}

impl PrototypeStore {
    pub fn fit(matrix: &ConceptMatrix, config: GmmConfig, q: f64, top_m: usize) -> Result<Self, PcxError> {
        let model = fit_gmm(matrix, config)?;
        let summaries = prototype_summary(&model, matrix, top_m)?;
        let calibration = calibrate_outliers(&model, matrix, q)?;
        Ok(PrototypeStore {
            layer_id: matrix.layer_id.clone(),
            context: matrix.context.clone(),
            model,
            summaries,
            calibration,
            training_samples: matrix.sample_ids.clone(),
            excluded_samples: matrix.excluded.clone(),
        })
    }

    /// Assignment, outlier score and difference report of a raw concept vector.
    pub fn assess(&self, raw: &[f64], diff_top: usize) -> Result<AssignmentRecord, PcxError> {
        let v = normalize_l1(raw).ok_or(PcxError::ZeroVector)?;
        let a = self.model.assign(&v)?;
        let score = outlier_score(&v, &self.model, &self.calibration)?;
        let diff = difference_to_prototype(&v, &self.model, a.component)?;
        Ok(AssignmentRecord {
            component: a.component,
            responsibilities: a.responsibilities,
            log_likelihood: score.log_likelihood,
            percentile: score.percentile,
            outlier: score.outlier,
            diff: diff.top(diff_top).to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub component: usize,
    pub responsibilities: Vec<f64>,
    pub log_likelihood: f64,
    pub percentile: f64,
    pub outlier: bool,
    pub diff: Vec<DiffEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]), Err(PcxError::ZeroVector));
    }

    #[test]
    fn normalization_drops_zero_rows() {
        let m = ConceptMatrix::from_vectors("l", "", &[(0, vec![1.0, -3.0]), (1, vec![0.0, 0.0])]);
        assert_eq!(m.rows, vec![vec![0.25, -0.75]]);
        assert_eq!(m.excluded, vec![1]);
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 5.0) - 5.95).abs() < 1e-12);
        assert_eq!(percentile(&v, 50.0), 50.5);
    }

    #[test]
    fn diff_report_cases() {
        let model = fit_gmm(
            &ConceptMatrix::raw("l", vec![vec![0.1, 0.2, 0.3, 0.4]; 3]),
            GmmConfig::new(1, 0),
        )
        .unwrap();
        let mu = model.means[0].clone();
        let same = difference_to_prototype(&mu, &model, 0).unwrap();
        assert!(same.entries.iter().all(|e| e.delta == 0.0 && e.usage == Usage::Matched));
        let mut bumped = mu.clone();
        bumped[3] += 0.2;
        let r = difference_to_prototype(&bumped, &model, 0).unwrap();
        assert_eq!(r.entries[0].concept, 3);
        assert_eq!(r.entries[0].usage, Usage::OverUsed);
        assert!((r.entries[0].delta - 0.2).abs() < 1e-15);
        assert!(difference_to_prototype(&mu, &model, 1).is_err());
    }

    #[test]
    fn q_range() {
        let m = ConceptMatrix::raw("l", vec![vec![0.0], vec![1.0]]);
        let model = fit_gmm(&m, GmmConfig::new(1, 0)).unwrap();
        assert!(calibrate_outliers(&model, &m, 0.0).is_err());
        assert!(calibrate_outliers(&model, &m, 50.5).is_err());
        assert!(calibrate_outliers(&model, &m, 50.0).is_ok());
    }
}
