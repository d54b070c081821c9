//! Analytic test functions with exact gradients: a four-region piecewise
//! function on `[-1, 1]^50` and a sum of Gaussian ridge bumps on `[0, 1]^d`.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{sample_box, DataSet, Sample};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const PIECEWISE_DIM: usize = 50;

/// 1-based active coordinates of each piecewise region.
pub const PIECEWISE_ACTIVE: [&[usize]; 4] = [&[3, 4, 5], &[6, 7, 8, 9], &[10, 11], &[12, 13]];

/// Number of independent directions the function varies along in each region.
pub const PIECEWISE_RANKS: [usize; 4] = [2, 2, 1, 2];

/// Region (1..=4) selected by the signs of `x_1`, `x_2`; zero counts as nonnegative.
pub fn piecewise_region(x: &[f64]) -> usize {
    match (x[0] >= 0.0, x[1] >= 0.0) {
        (false, false) => 1,
        (false, true) => 2,
        (true, false) => 3,
        (true, true) => 4,
    }
}

/// Value and gradient of the piecewise benchmark.
pub fn eval_piecewise(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != PIECEWISE_DIM {
        return Err(Error::arg(format!(
            "piecewise benchmark takes {PIECEWISE_DIM} inputs, got {}",
            x.len()
        )));
    }
    // 1-based accessor keeps the branches readable.
    let v = |i: usize| x[i - 1];
    let mut g = vec![0.0; PIECEWISE_DIM];
    let y = match piecewise_region(x) {
        1 => {
            let a = 1.0 + v(3) + v(4);
            g[2] = v(5);
            g[3] = v(5);
            g[4] = a;
            a * v(5)
        }
        2 => {
            let a = 1.0 + v(6) + v(7);
            let b = v(8) + v(9);
            g[5] = b;
            g[6] = b;
            g[7] = a;
            g[8] = a;
            a * b
        }
        3 => {
            g[9] = 1.0;
            g[10] = 1.0;
            1.0 + v(10) + v(11)
        }
        _ => {
            g[11] = v(13);
            g[12] = 1.0 + v(12);
            (1.0 + v(12)) * v(13)
        }
    };
    Ok((y, g))
}

/// Parameters of the Gaussian-mixture benchmark
/// `f(x) = sum_j w_j exp(-|B_j^T (x - c_j)|^2 / (2 s_j^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    /// Seed the centers and projections were drawn from, if generated.
    pub seed: Option<u64>,
    pub dim: usize,
    pub intrinsic_dim: usize,
    pub centers: Vec<Vec<f64>>,
    /// Per component, the `intrinsic_dim` columns of `B_j`, each of length `dim`.
    pub projections: Vec<Vec<Vec<f64>>>,
    pub widths: Vec<f64>,
    pub weights: Vec<f64>,
}

const SHIPPED_MIXTURE: &str = include_str!("../fixtures/gaussian_mixture.toml");

/// Seed the shipped mixture fixture was generated from.
pub const SHIPPED_MIXTURE_SEED: u64 = 20_210_601;

impl MixtureParams {
    /// Draws centers uniformly from `[0, 1]^dim` and 0/1 projection columns.
    ///
    /// Columns are drawn in order with Bernoulli(1/2) entries; a column that
    /// overlaps an earlier one (or is all zero) is discarded and redrawn.
    /// Redrawing until no overlap is the same as drawing Bernoulli(1/2)
    /// entries on the coordinates still unused, which is what is sampled.
    pub fn generate(
        seed: u64,
        dim: usize,
        intrinsic_dim: usize,
        widths: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || intrinsic_dim == 0 || intrinsic_dim > dim {
            return Err(Error::arg("need 0 < intrinsic_dim <= dim"));
        }
        let components = weights.len();
        let mut rng = rng_from_seed(seed);
        let mut centers = Vec::with_capacity(components);
        let mut projections = Vec::with_capacity(components);
        for _ in 0..components {
            centers.push((0..dim).map(|_| rng.random::<f64>()).collect());
            let mut used = vec![false; dim];
            let mut cols = Vec::with_capacity(intrinsic_dim);
            for _ in 0..intrinsic_dim {
                if used.iter().all(|&u| u) {
                    return Err(Error::arg("no coordinates left for another orthogonal column"));
                }
                let col = loop {
                    let col: Vec<f64> = used
                        .iter()
                        .map(|&u| if !u && rng.random::<bool>() { 1.0 } else { 0.0 })
                        .collect();
                    if col.iter().any(|&v| v != 0.0) {
                        break col;
                    }
                };
                for (u, &v) in used.iter_mut().zip(&col) {
                    *u |= v != 0.0;
                }
                cols.push(col);
            }
            projections.push(cols);
        }
        let p = MixtureParams {
            seed: Some(seed),
            dim,
            intrinsic_dim,
            centers,
            projections,
            widths,
            weights,
        };
        p.validate()?;
        Ok(p)
    }

    /// The fixture parameters: d=50, l=2, three components, widths 0.2,
    /// weights [0.41, 0.44, 0.26].
    pub fn shipped() -> Self {
        toml::from_str(SHIPPED_MIXTURE).expect("shipped mixture fixture parses")
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 {
            return Err(Error::arg("mixture needs at least one component"));
        }
        if self.centers.len() != m || self.projections.len() != m || self.widths.len() != m {
            return Err(Error::arg("mixture parameter lists differ in length"));
        }
        if self.widths.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::arg("mixture widths must be positive"));
        }
        for (j, (c, b)) in self.centers.iter().zip(&self.projections).enumerate() {
            if c.len() != self.dim {
                return Err(Error::arg(format!("center {j} has wrong length")));
            }
            if b.len() != self.intrinsic_dim || b.iter().any(|col| col.len() != self.dim) {
                return Err(Error::arg(format!("projection {j} has wrong shape")));
            }
            for a in 0..b.len() {
                for bb in a + 1..b.len() {
                    let dot: f64 = b[a].iter().zip(&b[bb]).map(|(u, v)| u * v).sum();
                    if dot.abs() > 1e-12 {
                        return Err(Error::arg(format!(
                            "projection {j}: columns {a} and {bb} are not orthogonal"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: MixtureParams = toml::from_str(&text)
            .map_err(|e| Error::arg(format!("{}: {e}", path.display())))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mixture params serialize")
    }
}

/// Value and gradient of the Gaussian-mixture benchmark.
pub fn eval_gaussian_mixture(x: &[f64], p: &MixtureParams) -> Result<(f64, Vec<f64>)> {
    if x.len() != p.dim {
        return Err(Error::arg(format!(
            "mixture expects {} inputs, got {}",
            p.dim,
            x.len()
        )));
    }
    let mut y = 0.0;
    let mut g = vec![0.0; p.dim];
    let diff: &mut Vec<f64> = &mut vec![0.0; p.dim];
    for j in 0..p.components() {
        for (k, d) in diff.iter_mut().enumerate() {
            *d = x[k] - p.centers[j][k];
        }
        let s: Vec<f64> = p.projections[j]
            .iter()
            .map(|col| col.iter().zip(diff.iter()).map(|(b, d)| b * d).sum())
            .collect();
        let q: f64 = s.iter().map(|v| v * v).sum();
        let var = p.widths[j] * p.widths[j];
        let term = p.weights[j] * (-q / (2.0 * var)).exp();
        y += term;
        // grad = -term / var * B_j s
        for (col, sk) in p.projections[j].iter().zip(&s) {
            let scale = -term / var * sk;
            for (gi, b) in g.iter_mut().zip(col) {
                *gi += scale * b;
            }
        }
    }
    Ok((y, g))
}

/// A benchmark function together with its input box.
#[derive(Debug, Clone, PartialEq)]
pub enum Benchmark {
    Piecewise,
    GaussianMixture(MixtureParams),
}

impl Benchmark {
    pub fn dim(&self) -> usize {
        match self {
            Benchmark::Piecewise => PIECEWISE_DIM,
            Benchmark::GaussianMixture(p) => p.dim,
        }
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        match self {
            Benchmark::Piecewise => (vec![-1.0; d], vec![1.0; d]),
            Benchmark::GaussianMixture(_) => (vec![0.0; d], vec![1.0; d]),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Benchmark::Piecewise => eval_piecewise(x),
            Benchmark::GaussianMixture(p) => eval_gaussian_mixture(x, p),
        }
    }

    /// Samples `n` uniform inputs and evaluates the function (and gradient
    /// when `with_gradients`).
    pub fn dataset(&self, n: usize, seed: u64, with_gradients: bool) -> Result<DataSet> {
        let (lo, hi) = self.bounds();
        let xs = sample_box(n, &lo, &hi, seed)?;
        let samples = xs
            .into_iter()
            .map(|x| {
                let (y, g) = self.eval(&x)?;
                Ok(Sample::new(x, y, with_gradients.then_some(g)))
            })
            .collect::<Result<Vec<_>>>()?;
        DataSet::new(self.dim(), samples)
    }
}
