use super::{ConceptMatrix, PcxError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl GmmConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        GmmConfig {
            k,
            seed,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub layer_id: String,
    pub config: GmmConfig,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Total training log-likelihood before each M-step, then at the end.
    pub log_likelihood: Vec<f64>,
    /// History indices at which a degenerate component was re-seeded; the
    /// likelihood may drop across these points.
    pub reseeded_at: Vec<usize>,
    /// Components still degenerate after their single re-seed.
    pub degenerate: Vec<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub component: usize,
    pub log_likelihood: f64,
    pub responsibilities: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `log π_k + log N(x | μ_k, diag σ²_k)` for every component.
    fn joint_log(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let mut lp = self.weights[k].ln();
                for d in 0..x.len() {
                    let v = self.variances[k][d];
                    let diff = x[d] - self.means[k][d];
                    lp -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + diff * diff / v);
                }
                lp
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, PcxError> {
        self.check_dim(x)?;
        Ok(log_sum_exp(&self.joint_log(x)))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PcxError> {
        if x.len() != self.dim() {
            return Err(PcxError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Most responsible component (ties to the lower id), the mixture
    /// log-density and the responsibilities.
    pub fn assign(&self, x: &[f64]) -> Result<Assignment, PcxError> {
        self.check_dim(x)?;
        let joint = self.joint_log(x);
        let lse = log_sum_exp(&joint);
        let responsibilities: Vec<f64> = joint.iter().map(|j| (j - lse).exp()).collect();
        let mut component = 0;
        for (k, r) in responsibilities.iter().enumerate() {
            if *r > responsibilities[component] {
                component = k;
            }
        }
        Ok(Assignment {
            component,
            log_likelihood: lse,
            responsibilities,
        })
    }
}

/// Farthest-point seeding: a seeded random first center, then repeatedly the
/// row farthest (squared Euclidean) from its nearest chosen center.
fn farthest_point_centers(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![rng.gen_range(0..rows.len())];
    let mut nearest: Vec<f64> = rows.iter().map(|r| dist(r, &rows[centers[0]])).collect();
    while centers.len() < k {
        let mut best = 0;
        for (i, d) in nearest.iter().enumerate() {
            if *d > nearest[best] {
                best = i;
            }
        }
        centers.push(best);
        for (i, r) in rows.iter().enumerate() {
            nearest[i] = nearest[i].min(dist(r, &rows[best]));
        }
    }
    centers
}

fn column_variance(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    (0..dim)
        .map(|d| {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            var.max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Expectation-maximization for a diagonal GMM.
pub fn fit_gmm(matrix: &ConceptMatrix, config: GmmConfig) -> Result<GmmModel, PcxError> {
    let rows = &matrix.rows;
    let (n, k) = (rows.len(), config.k);
    if k == 0 || n < k {
        return Err(PcxError::TooFewRows { n, k });
    }
    if !(config.tol >= 0.0) {
        return Err(PcxError::Config(format!("tol must be >= 0, got {}", config.tol)));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PcxError::Config("rows differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let global_var = column_variance(rows);
    let centers = farthest_point_centers(rows, k, &mut rng);
    let mut model = GmmModel {
        layer_id: matrix.layer_id.clone(),
        config,
        weights: vec![1.0 / k as f64; k],
        means: centers.iter().map(|&i| rows[i].clone()).collect(),
        variances: vec![global_var.clone(); k],
        log_likelihood: Vec::new(),
        reseeded_at: Vec::new(),
        degenerate: Vec::new(),
        converged: false,
    };
    let mut reseeded = vec![false; k];
    let min_weight = 1.0 / (10.0 * n as f64);

    for _ in 0..config.max_iter {
        let (resp, total) = e_step(&model, rows);
        if let Some(&prev) = model.log_likelihood.last() {
            let since_reseed = model.reseeded_at.last() != Some(&model.log_likelihood.len());
            if since_reseed && total - prev < config.tol {
                model.log_likelihood.push(total);
                model.converged = true;
                break;
            }
        }
        model.log_likelihood.push(total);
        m_step(&mut model, rows, &resp);

        let weak: Vec<usize> = (0..k).filter(|&j| model.weights[j] < min_weight).collect();
        let fresh: Vec<usize> = weak.iter().copied().filter(|&j| !reseeded[j]).collect();
        if !fresh.is_empty() {
            for &j in &fresh {
                reseeded[j] = true;
                // the row the current mixture explains worst
                let worst = (0..n)
                    .map(|i| (i, log_sum_exp(&model.joint_log(&rows[i]))))
                    .fold((0, f64::INFINITY), |b, (i, l)| if l < b.1 { (i, l) } else { b });
                model.means[j] = rows[worst.0].clone();
                model.variances[j] = global_var.clone();
                model.weights[j] = 1.0 / k as f64;
            }
            let s: f64 = model.weights.iter().sum();
            model.weights.iter_mut().for_each(|w| *w /= s);
            model.reseeded_at.push(model.log_likelihood.len());
        }
    }
    if !model.converged {
        let (_, total) = e_step(&model, rows);
        model.log_likelihood.push(total);
    }
    model.degenerate = (0..k).filter(|&j| model.weights[j] < min_weight).collect();
    Ok(model)
}

/// Responsibilities per row and the total log-likelihood. Rows are processed
/// in parallel; the total is summed in row order.
fn e_step(model: &GmmModel, rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let per_row: Vec<(Vec<f64>, f64)> = rows
        .par_iter()
        .map(|x| {
            let joint = model.joint_log(x);
            let lse = log_sum_exp(&joint);
            (joint.iter().map(|j| (j - lse).exp()).collect(), lse)
        })
        .collect();
    let total = per_row.iter().map(|(_, l)| l).sum();
    (per_row.into_iter().map(|(r, _)| r).collect(), total)
}

fn m_step(model: &mut GmmModel, rows: &[Vec<f64>], resp: &[Vec<f64>]) {
    let (n, k, dim) = (rows.len(), model.k(), model.dim());
    // a tiny prior mass keeps every weight strictly positive
    let prior = 1e-10;
    for j in 0..k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        model.weights[j] = (nk + prior) / (n as f64 + k as f64 * prior);
        if nk <= 0.0 {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for (x, r) in rows.iter().zip(resp) {
            for d in 0..dim {
                mean[d] += r[j] * x[d];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; dim];
        for (x, r) in rows.iter().zip(resp) {
            for d in 0..dim {
                var[d] += r[j] * (x[d] - mean[d]).powi(2);
            }
        }
        model.variances[j] = var.iter().map(|v| (v / nk).max(VARIANCE_FLOOR)).collect();
        model.means[j] = mean;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> ConceptMatrix {
        ConceptMatrix::raw("l", rows)
    }

    #[test]
    fn single_component_is_closed_form() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![2.0, 5.0]];
        let m = fit_gmm(&matrix(rows), GmmConfig::new(1, 0)).unwrap();
        assert_eq!(m.weights, vec![1.0]);
        assert!((m.means[0][0] - 2.0).abs() < 1e-12);
        assert!((m.means[0][1] - 2.0).abs() < 1e-12);
        assert!((m.variances[0][0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let err = fit_gmm(&matrix(vec![vec![0.0]]), GmmConfig::new(2, 0)).unwrap_err();
        assert_eq!(err, PcxError::TooFewRows { n: 1, k: 2 });
    }

    #[test]
    fn assign_checks_length_and_ties() {
        let m = GmmModel {
            layer_id: "l".into(),
            config: GmmConfig::new(2, 0),
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![0.0]],
            variances: vec![vec![1.0], vec![1.0]],
            log_likelihood: vec![],
            reseeded_at: vec![],
            degenerate: vec![],
            converged: true,
        };
        assert_eq!(m.assign(&[0.3]).unwrap().component, 0);
        assert!(m.assign(&[0.3, 1.0]).is_err());
    }
}
