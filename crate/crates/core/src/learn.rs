//! Logistic regression and the scoring primitives used by the evaluation.
//!
//! The training objective is the mean L2-regularized negative log-likelihood
//!
//! ```text
//! f(w, b) = (1/n) * [ Σ_i softplus(z_i) - y_i z_i  +  (l2 / 2) ||w||² ],   z_i = w·x_i + b
//! ```
//!
//! with the bias left unregularized. Identical feature vectors are merged into
//! weighted rows before optimisation, which leaves the objective unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{TypicalLoadProfile, UsageRun};
use crate::prepare::FeatureRow;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("no training rows")]
    EmptyTraining,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("only one class present")]
    SingleClass,
    #[error("score is NaN")]
    NanScore,
    #[error("scores and labels differ in length")]
    LengthMismatch,
    #[error("no runs to score")]
    NoRuns,
    #[error("no typical profile for {0}")]
    MissingProfile(NaiveDate),
    #[error("reference profile has zero norm")]
    ZeroReference,
    #[error("duration k = 0 makes the 1/k normalization undefined")]
    ZeroDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Damped Newton steps with Armijo backtracking.
    Newton,
    /// Steepest descent with Armijo backtracking.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub solver: Solver,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iters: 500,
            tol: 1e-6,
            solver: Solver::Newton,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub l2: f64,
    pub dim: usize,
    pub rows: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Single-class training set: the model predicts the class prior.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Constant probability returned by degenerate models.
    pub constant: Option<f64>,
    pub meta: TrainingMeta,
}

impl GlmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, LearnError> {
        predict_proba(self, features)
    }

    pub fn save_json(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)
    }

    pub fn load_json(path: &Path) -> std::io::Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict_proba(model: &GlmModel, features: &[f64]) -> Result<f64, LearnError> {
    if features.len() != model.weights.len() {
        return Err(LearnError::DimensionMismatch {
            expected: model.weights.len(),
            got: features.len(),
        });
    }
    if let Some(p) = model.constant {
        return Ok(p);
    }
    Ok(sigmoid(dot(&model.weights, features) + model.bias))
}

/// Unique feature vectors with their positive and negative label counts.
struct Design {
    x: Vec<Vec<f64>>,
    pos: Vec<f64>,
    neg: Vec<f64>,
    total: f64,
    dim: usize,
}

impl Design {
    fn from_rows<'a>(rows: impl IntoIterator<Item = &'a FeatureRow>) -> Result<Self, LearnError> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut design = Design {
            x: Vec::new(),
            pos: Vec::new(),
            neg: Vec::new(),
            total: 0.0,
            dim: 0,
        };
        for row in rows {
            if design.total == 0.0 {
                design.dim = row.features.len();
            } else if row.features.len() != design.dim {
                return Err(LearnError::DimensionMismatch {
                    expected: design.dim,
                    got: row.features.len(),
                });
            }
            let key: Vec<u64> = row.features.iter().map(|v| v.to_bits()).collect();
            let slot = *index.entry(key).or_insert_with(|| {
                design.x.push(row.features.clone());
                design.pos.push(0.0);
                design.neg.push(0.0);
                design.x.len() - 1
            });
            if row.label {
                design.pos[slot] += 1.0;
            } else {
                design.neg[slot] += 1.0;
            }
            design.total += 1.0;
        }
        if design.total == 0.0 {
            return Err(LearnError::EmptyTraining);
        }
        Ok(design)
    }

    fn positives(&self) -> f64 {
        self.pos.iter().sum()
    }

    /// Objective value. `theta` is `[w..., b]`.
    fn objective(&self, theta: &[f64], l2: f64) -> f64 {
        let (w, b) = theta.split_at(self.dim);
        let mut loss = 0.0;
        for ((x, p), n) in self.x.iter().zip(&self.pos).zip(&self.neg) {
            let z = dot(w, x) + b[0];
            loss += p * softplus(-z) + n * softplus(z);
        }
        (loss + 0.5 * l2 * dot(w, w)) / self.total
    }

    fn gradient(&self, theta: &[f64], l2: f64) -> Vec<f64> {
        let (w, b) = theta.split_at(self.dim);
        let mut g = vec![0.0; self.dim + 1];
        for ((x, p), n) in self.x.iter().zip(&self.pos).zip(&self.neg) {
            let prob = sigmoid(dot(w, x) + b[0]);
            let r = (p + n) * prob - p;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj;
            }
            g[self.dim] += r;
        }
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj += l2 * wj;
        }
        g.iter_mut().for_each(|v| *v /= self.total);
        g
    }

    /// Hessian as a dense row-major `(dim+1)²` matrix.
    fn hessian(&self, theta: &[f64], l2: f64) -> Vec<f64> {
        let d = self.dim + 1;
        let (w, b) = theta.split_at(self.dim);
        let mut h = vec![0.0; d * d];
        let mut xa = vec![0.0; d];
        for ((x, p), n) in self.x.iter().zip(&self.pos).zip(&self.neg) {
            let prob = sigmoid(dot(w, x) + b[0]);
            let s = (p + n) * prob * (1.0 - prob);
            if s == 0.0 {
                continue;
            }
            xa[..self.dim].copy_from_slice(x);
            xa[self.dim] = 1.0;
            for i in 0..d {
                let si = s * xa[i];
                if si == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    h[i * d + j] += si * xa[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                h[j * d + i] = h[i * d + j];
            }
        }
        for i in 0..self.dim {
            h[i * d + i] += l2;
        }
        h[d * d - 1] += 1e-12 * self.total;
        h.iter_mut().for_each(|v| *v /= self.total);
        h
    }
}

/// Solve `a x = b` for symmetric positive definite `a` (row-major `n×n`).
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Mean regularized negative log-likelihood at `(weights, bias)`.
pub fn objective(rows: &[FeatureRow], l2: f64, weights: &[f64], bias: f64) -> Result<f64, LearnError> {
    let design = Design::from_rows(rows)?;
    let mut theta = weights.to_vec();
    theta.push(bias);
    check_dim(&design, weights)?;
    Ok(design.objective(&theta, l2))
}

/// Analytic gradient of [`objective`]; the last entry is the bias component.
pub fn objective_gradient(
    rows: &[FeatureRow],
    l2: f64,
    weights: &[f64],
    bias: f64,
) -> Result<Vec<f64>, LearnError> {
    let design = Design::from_rows(rows)?;
    check_dim(&design, weights)?;
    let mut theta = weights.to_vec();
    theta.push(bias);
    Ok(design.gradient(&theta, l2))
}

fn check_dim(design: &Design, weights: &[f64]) -> Result<(), LearnError> {
    if weights.len() != design.dim {
        return Err(LearnError::DimensionMismatch {
            expected: design.dim,
            got: weights.len(),
        });
    }
    Ok(())
}

/// Fit a logistic regression from a zero start.
///
/// A single-class training set yields a degenerate model that always returns
/// the class prior (0 or 1).
pub fn train_logistic(rows: &[FeatureRow], cfg: &LogisticConfig) -> Result<GlmModel, LearnError> {
    train_logistic_iter(rows.iter(), cfg)
}

pub fn train_logistic_iter<'a>(
    rows: impl IntoIterator<Item = &'a FeatureRow>,
    cfg: &LogisticConfig,
) -> Result<GlmModel, LearnError> {
    let design = Design::from_rows(rows)?;
    let positives = design.positives();
    let mut meta = TrainingMeta {
        iterations: 0,
        l2: cfg.l2,
        dim: design.dim,
        rows: design.total as usize,
        converged: true,
        gradient_norm: 0.0,
        degenerate: false,
    };
    if positives == 0.0 || positives == design.total {
        meta.degenerate = true;
        return Ok(GlmModel {
            weights: vec![0.0; design.dim],
            bias: 0.0,
            constant: Some(if positives == 0.0 { 0.0 } else { 1.0 }),
            meta,
        });
    }

    let mut theta = vec![0.0; design.dim + 1];
    let mut value = design.objective(&theta, cfg.l2);
    let mut gd_step = 1.0;
    meta.converged = false;
    for iter in 0..cfg.max_iters {
        let grad = design.gradient(&theta, cfg.l2);
        meta.gradient_norm = norm(&grad);
        if meta.gradient_norm < cfg.tol {
            meta.converged = true;
            break;
        }
        meta.iterations = iter + 1;
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let (direction, mut step) = match cfg.solver {
            Solver::Newton => match cholesky_solve(&design.hessian(&theta, cfg.l2), &neg_grad) {
                Some(d) => (d, 1.0),
                None => (neg_grad, gd_step),
            },
            Solver::GradientDescent => (neg_grad, gd_step),
        };
        let slope = dot(&grad, &direction);
        let mut accepted = false;
        let mut candidate = theta.clone();
        for _ in 0..60 {
            for ((c, t), d) in candidate.iter_mut().zip(&theta).zip(&direction) {
                *c = t + step * d;
            }
            let next = design.objective(&candidate, cfg.l2);
            if next <= value + 1e-4 * step * slope {
                value = next;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        gd_step = (step * 2.0).min(1e6);
        std::mem::swap(&mut theta, &mut candidate);
    }
    if !meta.converged {
        meta.gradient_norm = norm(&design.gradient(&theta, cfg.l2));
        meta.converged = meta.gradient_norm < cfg.tol;
    }
    let bias = theta.pop().expect("bias");
    Ok(GlmModel {
        weights: theta,
        bias,
        constant: None,
        meta,
    })
}

/// Area under the ROC curve via the Mann–Whitney statistic with midranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, LearnError> {
    if scores.len() != labels.len() {
        return Err(LearnError::LengthMismatch);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(LearnError::NanScore);
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LearnError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares the mean rank.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// How each run's squared error is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseNormalization {
    /// Divide by the vector length `k + 1`.
    #[default]
    VectorLength,
    /// Divide by `k`, the duration beyond the start hour.
    DurationK,
}

/// Mean over runs of the normalized squared distance between the run's load
/// and the typical profile in force on the run's date.
pub fn load_mse(
    runs: &[UsageRun],
    profiles_at_date: &BTreeMap<NaiveDate, TypicalLoadProfile>,
    normalization: MseNormalization,
) -> Result<f64, LearnError> {
    if runs.is_empty() {
        return Err(LearnError::NoRuns);
    }
    let mut total = 0.0;
    for run in runs {
        let profile = profiles_at_date
            .get(&run.date())
            .ok_or(LearnError::MissingProfile(run.date()))?;
        if profile.values.len() != run.load.len() {
            return Err(LearnError::DimensionMismatch {
                expected: profile.values.len(),
                got: run.load.len(),
            });
        }
        let sq: f64 = run
            .load
            .iter()
            .zip(&profile.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let denom = match normalization {
            MseNormalization::VectorLength => run.load.len(),
            MseNormalization::DurationK => run.load.len() - 1,
        };
        if denom == 0 {
            return Err(LearnError::ZeroDuration);
        }
        total += sq / denom as f64;
    }
    Ok(total / runs.len() as f64)
}

/// `‖current − reference‖₂ / ‖reference‖₂`.
pub fn normalized_distance(current: &[f64], reference: &[f64]) -> Result<f64, LearnError> {
    if current.len() != reference.len() {
        return Err(LearnError::DimensionMismatch {
            expected: reference.len(),
            got: current.len(),
        });
    }
    let denom = norm(reference);
    if denom == 0.0 {
        return Err(LearnError::ZeroReference);
    }
    let diff: Vec<f64> = current.iter().zip(reference).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / denom)
}
