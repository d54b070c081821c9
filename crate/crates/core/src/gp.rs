//! Gaussian-process regression with a squared-exponential kernel.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood in
//! log-parameter space: several seeded restarts, each a quasi-Newton ascent
//! with a backtracking line search; the best restart wins.

use faer::linalg::solvers::DenseSolveCore;
use faer::linalg::solvers::Llt;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, MatRef, Par, Side};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal jitter values tried in turn when the kernel matrix fails to
/// factor.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Squared-exponential kernel hyperparameters. One lengthscale means an
/// isotropic kernel, otherwise one per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let k = KernelConfig {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.signal_variance) {
            return Err(Error::arg("signal variance must be positive"));
        }
        if self.lengthscales.is_empty() || !self.lengthscales.iter().all(|&l| pos(l)) {
            return Err(Error::arg("lengthscales must be positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::arg("noise variance must be nonnegative"));
        }
        Ok(())
    }

    fn check_dim(&self, r: usize) -> Result<()> {
        let m = self.lengthscales.len();
        if m != 1 && m != r {
            return Err(Error::arg(format!(
                "{m} lengthscales for {r}-dimensional inputs"
            )));
        }
        Ok(())
    }

    fn lengthscale(&self, k: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[k]
        }
    }

    /// Kernel value without validation; dimensions must already agree.
    fn eval_unchecked(&self, z: &[f64], z2: &[f64]) -> f64 {
        let mut q = 0.0;
        for (k, (a, b)) in z.iter().zip(z2).enumerate() {
            let t = (a - b) / self.lengthscale(k);
            q += t * t;
        }
        self.signal_variance * (-0.5 * q).exp()
    }
}

/// `s^2 exp(-1/2 sum_i (z_i - z'_i)^2 / l_i^2)`.
pub fn kernel_eval(cfg: &KernelConfig, z: &[f64], z2: &[f64]) -> Result<f64> {
    cfg.validate()?;
    if z.len() != z2.len() {
        return Err(Error::arg("kernel inputs differ in dimension"));
    }
    cfg.check_dim(z.len())?;
    Ok(cfg.eval_unchecked(z, z2))
}

fn check_inputs(z: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if z.is_empty() {
        return Err(Error::arg("GP needs at least one training point"));
    }
    if z.len() != y.len() {
        return Err(Error::arg("input and output counts differ"));
    }
    let r = z[0].len();
    if z.iter().any(|row| row.len() != r) {
        return Err(Error::arg("training inputs have inconsistent dimension"));
    }
    if z.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::arg("training data contains non-finite values"));
    }
    Ok(r)
}

/// Signal part of the kernel matrix (no noise, no jitter).
fn signal_matrix(cfg: &KernelConfig, z: &[Vec<f64>]) -> Mat<f64> {
    let n = z.len();
    let mut k = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = cfg.signal_variance;
        for i in j + 1..n {
            let v = cfg.eval_unchecked(&z[i], &z[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factorization of `K + (noise + jitter) I`, escalating jitter on
/// failure.
fn factor(cfg: &KernelConfig, kf: &Mat<f64>) -> Result<(Llt<f64>, f64)> {
    let n = kf.nrows();
    for jitter in JITTER_LADDER {
        let mut k = kf.clone();
        for i in 0..n {
            k[(i, i)] += cfg.noise_variance + jitter;
        }
        if let Ok(llt) = k.llt(Side::Lower) {
            return Ok((llt, jitter));
        }
    }
    Err(Error::Conditioning(format!(
        "kernel matrix of size {n} not positive definite even with jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn cholesky_solve(l: MatRef<'_, f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut b = Mat::from_fn(n, 1, |i, _| rhs[i]);
    solve_lower_triangular_in_place(l, b.as_mut(), Par::Seq);
    solve_upper_triangular_in_place(l.transpose(), b.as_mut(), Par::Seq);
    (0..n).map(|i| b[(i, 0)]).collect()
}

fn lml_from_factor(l: MatRef<'_, f64>, resid: &[f64], alpha: &[f64]) -> f64 {
    let n = resid.len();
    let fit: f64 = resid.iter().zip(alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    -0.5 * fit - logdet - 0.5 * n as f64 * LN_2PI
}

/// Everything the likelihood and its gradient share at one hyperparameter
/// setting.
struct Factored {
    kf: Mat<f64>,
    llt: Llt<f64>,
    jitter: f64,
    alpha: Vec<f64>,
    value: f64,
}

impl Factored {
    fn new(z: &[Vec<f64>], y: &[f64], mean: f64, cfg: &KernelConfig) -> Result<Self> {
        let kf = signal_matrix(cfg, z);
        let (llt, jitter) = factor(cfg, &kf)?;
        let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
        let alpha = cholesky_solve(llt.L(), &resid);
        let value = lml_from_factor(llt.L(), &resid, &alpha);
        Ok(Factored {
            kf,
            llt,
            jitter,
            alpha,
            value,
        })
    }

    /// `1/2 tr((alpha alpha^T - K^{-1}) dK)` for each log-parameter.
    fn gradient(&self, z: &[Vec<f64>], cfg: &KernelConfig, with_noise: bool) -> Vec<f64> {
        let n = z.len();
        let r = z[0].len();
        let kinv = self.llt.inverse();
        let alpha = &self.alpha;
        let m = cfg.lengthscales.len();
        let iso = m == 1;
        let mut g_len = vec![0.0; m];
        let mut g_sig = 0.0;
        let mut trace_w = 0.0;
        let inv_l2: Vec<f64> = (0..r).map(|k| 1.0 / cfg.lengthscale(k).powi(2)).collect();
        for j in 0..n {
            let kinv_j = kinv.col(j).try_as_col_major().unwrap().as_slice();
            let kf_j = self.kf.col(j).try_as_col_major().unwrap().as_slice();
            let wjj = alpha[j] * alpha[j] - kinv_j[j];
            trace_w += wjj;
            g_sig += wjj * kf_j[j];
            let zj = &z[j];
            for i in j + 1..n {
                // off-diagonal pairs count twice
                let w = 2.0 * (alpha[i] * alpha[j] - kinv_j[i]) * kf_j[i];
                g_sig += w;
                let zi = &z[i];
                if iso {
                    let q: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
                    g_len[0] += w * q * inv_l2[0];
                } else {
                    for k in 0..r {
                        let d = zi[k] - zj[k];
                        g_len[k] += w * d * d * inv_l2[k];
                    }
                }
            }
        }
        let mut grad: Vec<f64> = g_len.into_iter().map(|v| 0.5 * v).collect();
        grad.push(0.5 * g_sig);
        if with_noise {
            grad.push(0.5 * cfg.noise_variance * trace_w);
        }
        grad
    }
}

fn checked(z: &[Vec<f64>], y: &[f64], cfg: &KernelConfig) -> Result<()> {
    let r = check_inputs(z, y)?;
    cfg.validate()?;
    cfg.check_dim(r)
}

/// Log marginal likelihood of `y` under the GP prior with constant mean.
pub fn log_marginal_likelihood(
    z: &[Vec<f64>],
    y: &[f64],
    mean: f64,
    cfg: &KernelConfig,
) -> Result<f64> {
    checked(z, y, cfg)?;
    Ok(Factored::new(z, y, mean, cfg)?.value)
}

/// Log marginal likelihood and its gradient with respect to
/// `[ln l_1, .., ln l_m, ln s^2, ln noise]` (the noise entry is omitted when
/// `with_noise` is false).
pub fn log_marginal_likelihood_gradient(
    z: &[Vec<f64>],
    y: &[f64],
    mean: f64,
    cfg: &KernelConfig,
    with_noise: bool,
) -> Result<(f64, Vec<f64>)> {
    checked(z, y, cfg)?;
    let f = Factored::new(z, y, mean, cfg)?;
    Ok((f.value, f.gradient(z, cfg, with_noise)))
}

/// Options for hyperparameter fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_opt_iter: usize,
    /// Pin the noise variance instead of learning it.
    pub fixed_noise: Option<f64>,
    /// One lengthscale per input dimension (otherwise a single shared one).
    pub ard: bool,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            max_opt_iter: 100,
            fixed_noise: None,
            ard: true,
            seed: 0,
        }
    }
}

/// A trained GP: training data, hyperparameters and the cached factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GpRecord", into = "GpRecord")]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    mean: f64,
    kernel: KernelConfig,
    jitter: f64,
    /// Rows of the lower Cholesky factor, row `i` holding `i + 1` entries.
    chol_rows: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GpRecord {
    mean: f64,
    kernel: KernelConfig,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl TryFrom<GpRecord> for GpModel {
    type Error = Error;

    fn try_from(r: GpRecord) -> Result<Self> {
        GpModel::new(r.inputs, r.outputs, r.mean, r.kernel)
    }
}

impl From<GpModel> for GpRecord {
    fn from(m: GpModel) -> Self {
        GpRecord {
            mean: m.mean,
            kernel: m.kernel,
            inputs: m.inputs,
            outputs: m.outputs,
        }
    }
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.mean == other.mean
            && self.kernel == other.kernel
    }
}

impl GpModel {
    /// Conditions the prior on the training data with fixed hyperparameters.
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, mean: f64, kernel: KernelConfig) -> Result<Self> {
        checked(&inputs, &outputs, &kernel)?;
        let f = Factored::new(&inputs, &outputs, mean, &kernel)?;
        let l = f.llt.L();
        let chol_rows = (0..l.nrows())
            .map(|i| (0..=i).map(|k| l[(i, k)]).collect())
            .collect();
        let (jitter, alpha) = (f.jitter, f.alpha);
        Ok(GpModel {
            inputs,
            outputs,
            mean,
            kernel,
            jitter,
            chol_rows,
            alpha,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn mean_constant(&self) -> f64 {
        self.mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let resid: Vec<f64> = self.outputs.iter().map(|v| v - self.mean).collect();
        let n = self.len();
        let fit: f64 = resid.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let logdet: f64 = self.chol_rows.iter().map(|row| row[row.len() - 1].ln()).sum();
        -0.5 * fit - logdet - 0.5 * n as f64 * LN_2PI
    }

    /// Posterior mean and (clamped, nonnegative) variance at `z`.
    pub fn predict(&self, z: &[f64]) -> Result<(f64, f64)> {
        Ok(self.predict_many(std::slice::from_ref(&z.to_vec()))?[0])
    }

    /// Posterior mean and variance at many inputs. Each query is computed
    /// independently, so results do not depend on how queries are batched.
    pub fn predict_many(&self, zs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        let r = self.input_dim();
        if let Some(bad) = zs.iter().find(|z| z.len() != r) {
            return Err(Error::arg(format!(
                "query has dimension {}, model expects {r}",
                bad.len()
            )));
        }
        let n = self.len();
        let mut ks = vec![0.0; n];
        let mut v = vec![0.0; n];
        Ok(zs
            .iter()
            .map(|z| {
                for (k, zi) in ks.iter_mut().zip(&self.inputs) {
                    *k = self.kernel.eval_unchecked(zi, z);
                }
                let mean = self.mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
                // forward substitution L v = k
                for i in 0..n {
                    let row = &self.chol_rows[i];
                    let dot: f64 = row[..i].iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
                    v[i] = (ks[i] - dot) / row[i];
                }
                let explained: f64 = v.iter().map(|a| a * a).sum();
                (mean, (self.kernel.signal_variance - explained).max(0.0))
            })
            .collect())
    }
}

/// Box constraints and restart ranges in log-parameter space.
struct Search {
    lower: Vec<f64>,
    upper: Vec<f64>,
    init_lo: Vec<f64>,
    init_hi: Vec<f64>,
}

impl Search {
    fn new(z: &[Vec<f64>], y: &[f64], opts: &FitOptions) -> Self {
        let r = z[0].len();
        let n = y.len() as f64;
        let range = |k: usize| {
            let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), row| {
                (a.min(row[k]), b.max(row[k]))
            });
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        };
        let ranges: Vec<f64> = if opts.ard {
            (0..r).map(range).collect()
        } else {
            vec![(0..r).map(range).fold(0.0, f64::max)]
        };
        let mean = y.iter().sum::<f64>() / n;
        let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-12);

        let mut s = Search {
            lower: Vec::new(),
            upper: Vec::new(),
            init_lo: Vec::new(),
            init_hi: Vec::new(),
        };
        let mut push = |lo: f64, hi: f64, a: f64, b: f64| {
            s.lower.push(lo.ln());
            s.upper.push(hi.ln());
            s.init_lo.push(a.ln());
            s.init_hi.push(b.ln());
        };
        // squared distances grow with the input dimension, so start the
        // lengthscales on that scale
        let spread = (r as f64).sqrt();
        for &rg in &ranges {
            push(1e-3 * rg, 1e3 * rg * spread, 0.05 * rg * spread, 5.0 * rg * spread);
        }
        push(1e-6 * var, 1e4 * var, 0.1 * var, 10.0 * var);
        if opts.fixed_noise.is_none() {
            push(1e-10 * var, var, 1e-8 * var, 1e-2 * var);
        }
        s
    }

    /// True when coordinate `i` sits on a bound and `d` points outward.
    fn pinned(&self, x: &[f64], i: usize, d: f64) -> bool {
        (x[i] <= self.lower[i] && d < 0.0) || (x[i] >= self.upper[i] && d > 0.0)
    }

    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

fn config_from(theta: &[f64], n_len: usize, fixed_noise: Option<f64>) -> KernelConfig {
    KernelConfig {
        lengthscales: theta[..n_len].iter().map(|v| v.exp()).collect(),
        signal_variance: theta[n_len].exp(),
        noise_variance: fixed_noise.unwrap_or_else(|| theta[n_len + 1].exp()),
    }
}

/// Projected quasi-Newton ascent from `start`; returns the final point and
/// its log marginal likelihood.
fn ascend(
    z: &[Vec<f64>],
    y: &[f64],
    mean: f64,
    search: &Search,
    start: Vec<f64>,
    n_len: usize,
    opts: &FitOptions,
) -> Option<(Vec<f64>, f64)> {
    let learn_noise = opts.fixed_noise.is_none();
    // work with the negative log likelihood; the line search only needs
    // values, gradients are taken at accepted points
    let factored = |theta: &[f64]| -> Option<(Factored, KernelConfig)> {
        let cfg = config_from(theta, n_len, opts.fixed_noise);
        Factored::new(z, y, mean, &cfg)
            .ok()
            .filter(|f| f.value.is_finite())
            .map(|f| (f, cfg))
    };
    let gradient = |f: &Factored, cfg: &KernelConfig| -> Option<Vec<f64>> {
        let g: Vec<f64> = f.gradient(z, cfg, learn_noise).into_iter().map(|v| -v).collect();
        g.iter().all(|v| v.is_finite()).then_some(g)
    };
    let p = start.len();
    let mut x = start;
    search.clamp(&mut x);
    let (fac, cfg) = factored(&x)?;
    let mut f = -fac.value;
    let mut g = gradient(&fac, &cfg)?;
    drop(fac);
    let mut h = identity(p);
    let mut first = true;

    let free_direction = |x: &[f64], dir: &mut [f64]| {
        for i in 0..p {
            if search.pinned(x, i, dir[i]) {
                dir[i] = 0.0;
            }
        }
    };

    for _ in 0..opts.max_opt_iter {
        let mut dir: Vec<f64> = (0..p)
            .map(|i| -(0..p).map(|j| h[i][j] * g[j]).sum::<f64>())
            .collect();
        free_direction(&x, &mut dir);
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h = identity(p);
            first = true;
            dir = g.iter().map(|v| -v).collect();
            free_direction(&x, &mut dir);
            slope = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                break;
            }
        }
        let biggest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if biggest == 0.0 {
            break;
        }
        // never move more than a factor e^2 in any hyperparameter at once
        let mut step = (2.0 / biggest).min(1.0);
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            search.clamp(&mut cand);
            let moved: f64 = cand.iter().zip(&x).zip(&g).map(|((c, a), gi)| (c - a) * gi).sum();
            if let Some((fac, cfg)) = factored(&cand) {
                if -fac.value <= f + 1e-4 * moved.min(0.0) {
                    accepted = Some((cand, fac, cfg));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fac, cfg)) = accepted else { break };
        let fnew = -fac.value;
        let Some(gn) = gradient(&fac, &cfg) else { break };
        drop(fac);

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            if first {
                let yy: f64 = yv.iter().map(|v| v * v).sum();
                h = identity(p);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = sy / yy;
                }
                first = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
        }
        let improvement = f - fnew;
        x = xn;
        f = fnew;
        g = gn;
        let pg: f64 = (0..p)
            .filter(|&i| !search.pinned(&x, i, -g[i]))
            .map(|i| g[i].abs())
            .fold(0.0, f64::max);
        if improvement <= 1e-9 * (1.0 + f.abs()) || pg < 1e-6 {
            break;
        }
    }
    Some((x, -f))
}

fn identity(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let p = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..p).map(|i| (0..p).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..p {
        for j in 0..p {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Fits hyperparameters by multi-start marginal-likelihood maximization
/// and returns the conditioned model. The prior mean is the output average.
pub fn fit_gp(z: &[Vec<f64>], y: &[f64], opts: &FitOptions) -> Result<GpModel> {
    let r = check_inputs(z, y)?;
    if let Some(noise) = opts.fixed_noise {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::arg("fixed noise must be nonnegative"));
        }
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let n_len = if opts.ard { r } else { 1 };
    let search = Search::new(z, y, opts);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = rng_from_seed(derive_seed(opts.seed, restart as u64));
        let start: Vec<f64> = search
            .init_lo
            .iter()
            .zip(&search.init_hi)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect();
        if let Some((theta, lml)) = ascend(z, y, mean, &search, start, n_len, opts) {
            if best.as_ref().is_none_or(|(_, b)| lml > *b) {
                best = Some((theta, lml));
            }
        }
    }
    let (theta, _) = best.ok_or_else(|| {
        Error::Conditioning("no restart produced a factorizable kernel matrix".into())
    })?;
    let cfg = config_from(&theta, n_len, opts.fixed_noise);
    GpModel::new(z.to_vec(), y.to_vec(), mean, cfg)
}
