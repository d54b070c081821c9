//! Routing of new inputs to clusters: a one-vs-one soft-margin SVM trained
//! by SMO, with a nearest-centroid alternative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Something that assigns an input to a cluster label in `1..=J`.
pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SvmKernel {
    Linear,
    Rbf { gamma: f64 },
}

impl SvmKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            SvmKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            SvmKernel::Rbf { gamma } => {
                let q: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * q).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: SvmKernel,
    /// Box constraint on the dual variables.
    pub c: f64,
    /// Iteration cap per binary machine; `None` means ten times its
    /// training-set size.
    pub max_iter: Option<usize>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: SvmKernel::Linear,
            c: 10.0,
            max_iter: None,
            tol: 1e-3,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::arg("SVM regularization C must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("SVM tolerance must be positive"));
        }
        if let SvmKernel::Rbf { gamma } = self.kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::arg("RBF gamma must be positive"));
            }
        }
        Ok(())
    }
}

/// Binary machine separating `positive` (decision > 0) from `negative`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub positive: usize,
    pub negative: usize,
    /// Primal weights, present for the linear kernel.
    pub weights: Option<Vec<f64>>,
    /// Support vectors with their `alpha_i y_i`, kept for nonlinear kernels.
    pub support: Vec<(f64, Vec<f64>)>,
    pub bias: f64,
    pub converged: bool,
}

impl BinarySvm {
    pub fn decision(&self, kernel: &SvmKernel, x: &[f64]) -> f64 {
        let s = match &self.weights {
            Some(w) => w.iter().zip(x).map(|(a, b)| a * b).sum(),
            None => self.support.iter().map(|(c, sv)| c * kernel.eval(sv, x)).sum::<f64>(),
        };
        s + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub dim: usize,
    pub labels: Vec<usize>,
    pub kernel: SvmKernel,
    pub machines: Vec<BinarySvm>,
    /// Convergence problems met during training.
    pub warnings: Vec<String>,
}

/// Dual solution of one binary problem.
struct Dual {
    alpha: Vec<f64>,
    rho: f64,
    converged: bool,
}

/// SMO with second-order working-set selection on
/// `min 1/2 a^T Q a - sum a  s.t. 0 <= a <= C, y^T a = 0`.
fn smo(q: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Dual {
    let n = y.len();
    let qx = |i: usize, j: usize| q[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let tau = 1e-12;
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let mut converged = false;

    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i == usize::MAX {
                continue;
            }
            let b = gmax - v;
            if b > 0.0 {
                let mut a = qx(i, i) + qx(t, t) - 2.0 * y[i] * y[t] * qx(i, t);
                if a <= 0.0 {
                    a = tau;
                }
                let score = -b * b / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = qx(i, i) + qx(j, j) + 2.0 * qx(i, j);
            if quad <= 0.0 {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qx(i, i) + qx(j, j) - 2.0 * qx(i, j);
            if quad <= 0.0 {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += qx(t, i) * di + qx(t, j) * dj;
        }
    }

    // offset from the free variables, else the midpoint of the feasible range
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            count += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if count > 0 {
        sum / count as f64
    } else {
        (ub + lb) / 2.0
    };
    Dual {
        alpha,
        rho,
        converged,
    }
}

fn train_pair(
    points: &[&[f64]],
    y: &[f64],
    positive: usize,
    negative: usize,
    config: &SvmConfig,
) -> BinarySvm {
    let n = points.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = y[i] * y[j] * config.kernel.eval(points[i], points[j]);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let max_iter = config.max_iter.unwrap_or(10 * n).max(1);
    let dual = smo(&q, y, config.c, config.tol, max_iter);
    let support: Vec<(f64, Vec<f64>)> = (0..n)
        .filter(|&t| dual.alpha[t] > 0.0)
        .map(|t| (dual.alpha[t] * y[t], points[t].to_vec()))
        .collect();
    let weights = matches!(config.kernel, SvmKernel::Linear).then(|| {
        let mut w = vec![0.0; points[0].len()];
        for (coef, sv) in &support {
            for (wk, xk) in w.iter_mut().zip(sv) {
                *wk += coef * xk;
            }
        }
        w
    });
    BinarySvm {
        positive,
        negative,
        support: if weights.is_some() { Vec::new() } else { support },
        weights,
        bias: -dual.rho,
        converged: dual.converged,
    }
}

/// Trains one binary machine per unordered pair of labels.
pub fn train_svm(points: &[&[f64]], labels: &[usize], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    if points.len() != labels.len() {
        return Err(Error::arg("point and label counts differ"));
    }
    let dim = points.first().map_or(0, |p| p.len());
    if points.iter().any(|p| p.len() != dim) || dim == 0 {
        return Err(Error::arg("SVM inputs must share a positive dimension"));
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::arg("SVM inputs contain non-finite values"));
    }
    let mut set: Vec<usize> = labels.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.len() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "classifier needs at least two classes, got {}",
            set.len()
        )));
    }

    let mut machines = Vec::new();
    let mut warnings = Vec::new();
    for (ai, &a) in set.iter().enumerate() {
        for &b in &set[ai + 1..] {
            let (pts, ys): (Vec<&[f64]>, Vec<f64>) = points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == a || l == b)
                .map(|(p, &l)| (*p, if l == a { 1.0 } else { -1.0 }))
                .unzip();
            let m = train_pair(&pts, &ys, a, b, config);
            if !m.converged {
                let msg = format!("SVM for classes ({a}, {b}) stopped before reaching tolerance");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            machines.push(m);
        }
    }
    Ok(SvmModel {
        dim,
        labels: set,
        kernel: config.kernel,
        machines,
        warnings,
    })
}

impl SvmModel {
    /// Majority vote; ties go to the larger summed margin, then the lower
    /// label.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "input has dimension {}, classifier expects {}",
                x.len(),
                self.dim
            )));
        }
        let k = self.labels.len();
        let slot = |l: usize| self.labels.binary_search(&l).unwrap();
        let mut votes = vec![0usize; k];
        let mut margin = vec![0.0; k];
        for m in &self.machines {
            let d = m.decision(&self.kernel, x);
            let (win, lose) = if d > 0.0 {
                (m.positive, m.negative)
            } else {
                (m.negative, m.positive)
            };
            votes[slot(win)] += 1;
            margin[slot(win)] += d.abs();
            margin[slot(lose)] -= d.abs();
        }
        let mut best = 0;
        for t in 1..k {
            if votes[t] > votes[best] || (votes[t] == votes[best] && margin[t] > margin[best]) {
                best = t;
            }
        }
        Ok(self.labels[best])
    }
}

impl Classifier for SvmModel {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        SvmModel::classify(self, x)
    }
}

/// Assigns the label of the closest class mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn train(points: &[&[f64]], labels: &[usize]) -> Result<Self> {
        if points.is_empty() || points.len() != labels.len() {
            return Err(Error::arg("need matching, nonempty points and labels"));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::arg("inputs differ in dimension"));
        }
        let mut set: Vec<usize> = labels.to_vec();
        set.sort_unstable();
        set.dedup();
        let centroids = set
            .iter()
            .map(|&l| {
                let mut c = vec![0.0; dim];
                let mut n = 0.0;
                for (p, _) in points.iter().zip(labels).filter(|(_, &m)| m == l) {
                    for (ck, pk) in c.iter_mut().zip(p.iter()) {
                        *ck += pk;
                    }
                    n += 1.0;
                }
                c.iter_mut().for_each(|v| *v /= n);
                c
            })
            .collect();
        Ok(NearestCentroid {
            labels: set,
            centroids,
        })
    }
}

impl Classifier for NearestCentroid {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.centroids[0].len() {
            return Err(Error::arg("input dimension does not match the centroids"));
        }
        let dist = |c: &Vec<f64>| -> f64 { c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
        let mut best = 0;
        for t in 1..self.centroids.len() {
            if dist(&self.centroids[t]) < dist(&self.centroids[best]) {
                best = t;
            }
        }
        Ok(self.labels[best])
    }
}

/// The router stored in an emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Router {
    /// A single cluster: every input maps to label 1.
    Single { dim: usize },
    Svm(SvmModel),
    NearestCentroid(NearestCentroid),
}

impl Classifier for Router {
    fn classify(&self, x: &[f64]) -> Result<usize> {
        match self {
            Router::Single { dim } => {
                if x.len() != *dim {
                    return Err(Error::arg(format!(
                        "input has dimension {}, expected {dim}",
                        x.len()
                    )));
                }
                Ok(1)
            }
            Router::Svm(m) => m.classify(x),
            Router::NearestCentroid(m) => m.classify(x),
        }
    }
}
