//! Gradient-moment estimation, eigendecomposition, rank selection and the
//! sliced (SIR / SAVE) baseline direction estimators.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Sample};
use crate::error::{Error, Result};
use crate::linalg::{cols_to_mat, mat_to_cols, orthonormalize_columns, symmetric_eigen};

/// How many leading directions to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankRule {
    /// Exactly this many directions.
    Fixed(usize),
    /// Smallest rank whose eigenvalue mass reaches this fraction of the total.
    Ratio(f64),
}

/// Eigen-structure of a gradient-moment matrix, split into retained (`V1`)
/// and discarded (`V2`) directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubspaceRecord", into = "SubspaceRecord")]
pub struct Subspace {
    eigenvalues: Vec<f64>,
    basis: Mat<f64>,
    rank: usize,
}

#[derive(Serialize, Deserialize)]
struct SubspaceRecord {
    rank: usize,
    eigenvalues: Vec<f64>,
    /// Columns of the full orthonormal eigenvector matrix.
    basis: Vec<Vec<f64>>,
}

impl TryFrom<SubspaceRecord> for Subspace {
    type Error = Error;

    fn try_from(rec: SubspaceRecord) -> Result<Self> {
        let d = rec.eigenvalues.len();
        let basis = cols_to_mat(&rec.basis, d)?;
        Subspace::new(rec.eigenvalues, basis, rec.rank)
    }
}

impl From<Subspace> for SubspaceRecord {
    fn from(s: Subspace) -> Self {
        SubspaceRecord {
            rank: s.rank,
            basis: mat_to_cols(s.basis.as_ref()),
            eigenvalues: s.eigenvalues,
        }
    }
}

impl Subspace {
    pub fn new(eigenvalues: Vec<f64>, basis: Mat<f64>, rank: usize) -> Result<Self> {
        let d = eigenvalues.len();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::arg("basis must be d x d"));
        }
        if rank == 0 || rank > d {
            return Err(Error::arg(format!("rank {rank} outside 1..={d}")));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::arg("eigenvalues must be in descending order"));
        }
        Ok(Subspace {
            eigenvalues,
            basis,
            rank,
        })
    }

    /// Eigendecomposes `c` and keeps directions per `rule`.
    pub fn from_moment(c: MatRef<'_, f64>, rule: RankRule) -> Result<Self> {
        let (eigenvalues, basis) = eigendecompose(c)?;
        let rank = match rule {
            RankRule::Fixed(r) => {
                if eigenvalues.iter().all(|&l| l <= 0.0) {
                    return Err(Error::DegenerateSpectrum("all eigenvalues are zero".into()));
                }
                r
            }
            RankRule::Ratio(rho) => select_rank(&eigenvalues, rho)?,
        };
        Subspace::new(eigenvalues, basis, rank)
    }

    pub fn from_samples(samples: &[Sample], rule: RankRule) -> Result<Self> {
        Subspace::from_moment(gradient_moment(samples)?.as_ref(), rule)
    }

    /// Same eigen-structure with a different split point.
    pub fn with_rank(&self, rank: usize) -> Result<Self> {
        Subspace::new(self.eigenvalues.clone(), self.basis.clone(), rank)
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Full orthonormal eigenvector matrix `[V1 V2]`.
    pub fn basis(&self) -> MatRef<'_, f64> {
        self.basis.as_ref()
    }

    pub fn v1(&self) -> MatRef<'_, f64> {
        self.basis.as_ref().subcols(0, self.rank)
    }

    pub fn v2(&self) -> MatRef<'_, f64> {
        self.basis.as_ref().subcols(self.rank, self.dim() - self.rank)
    }

    /// Sum of the discarded eigenvalues.
    pub fn tail(&self) -> f64 {
        self.eigenvalues[self.rank..].iter().sum()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        project(self.v1(), x)
    }
}

/// Monte Carlo estimate `(1/N) sum g g^T` of the gradient-moment matrix.
pub fn gradient_moment(samples: &[Sample]) -> Result<Mat<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("gradient moment of an empty sample set".into()))?;
    let d = first.x.len();
    let mut c = Mat::<f64>::zeros(d, d);
    for (n, s) in samples.iter().enumerate() {
        let g = s
            .g
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("sample {n} has no gradient")))?;
        if g.len() != d {
            return Err(Error::Contract(format!("sample {n}: gradient length mismatch")));
        }
        for j in 0..d {
            if g[j] == 0.0 {
                continue;
            }
            for i in j..d {
                c[(i, j)] += g[i] * g[j];
            }
        }
    }
    let inv_n = 1.0 / samples.len() as f64;
    for j in 0..d {
        for i in j..d {
            let v = c[(i, j)] * inv_n;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Eigenvalues (descending, tiny negatives clamped to zero) and orthonormal
/// eigenvectors of the symmetrized input.
pub fn eigendecompose(c: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    symmetric_eigen(c)
}

/// Smallest `r` with `sum_{i<=r} lambda_i >= rho * sum_i lambda_i`.
pub fn select_rank(eigenvalues: &[f64], rho: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::arg(format!("ratio {rho} outside [0, 1]")));
    }
    if eigenvalues.is_empty() {
        return Err(Error::arg("empty spectrum"));
    }
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpectrum("all eigenvalues are zero".into()));
    }
    let target = rho * total;
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l.max(0.0);
        // relative slack absorbs summation-order rounding at rho = 1
        if acc >= target * (1.0 - 1e-12) {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// `V1^T x`.
pub fn project(v1: MatRef<'_, f64>, x: &[f64]) -> Result<Vec<f64>> {
    if v1.nrows() != x.len() {
        return Err(Error::arg(format!(
            "cannot project a {}-vector with a {}-row basis",
            x.len(),
            v1.nrows()
        )));
    }
    Ok((0..v1.ncols())
        .map(|j| (0..x.len()).map(|i| v1[(i, j)] * x[i]).sum())
        .collect())
}

/// Directions found by a sliced estimator, with the spectrum of its kernel matrix.
#[derive(Debug, Clone)]
pub struct SlicedDirections {
    /// Eigenvalues of the slice kernel matrix in the standardized scale, descending.
    pub eigenvalues: Vec<f64>,
    /// `d x r` orthonormal basis, leading direction first.
    pub directions: Mat<f64>,
}

pub const DEFAULT_SLICES: usize = 10;

struct Standardized {
    z: Vec<Vec<f64>>,
    inv_sqrt_cov: Mat<f64>,
    slices: Vec<Vec<usize>>,
}

/// Equal-frequency slices on y; tied responses never straddle a boundary.
fn slice_indices(y: &[f64], n_slices: usize) -> Result<Vec<Vec<usize>>> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut bounds = vec![0];
    for h in 1..n_slices {
        let mut b = ((h * n) as f64 / n_slices as f64).round() as usize;
        while b < n && b > 0 && y[order[b]] == y[order[b - 1]] {
            b += 1;
        }
        if b > *bounds.last().unwrap() && b < n {
            bounds.push(b);
        }
    }
    bounds.push(n);
    let slices: Vec<Vec<usize>> = bounds
        .windows(2)
        .map(|w| order[w[0]..w[1]].to_vec())
        .collect();
    if let Some((h, s)) = slices.iter().enumerate().find(|(_, s)| s.len() < 2) {
        return Err(Error::Slicing(format!("slice {h} received {} sample(s)", s.len())));
    }
    Ok(slices)
}

fn standardize(dataset: &DataSet, n_slices: usize) -> Result<Standardized> {
    let n = dataset.len();
    let d = dataset.dim();
    if n_slices == 0 {
        return Err(Error::arg("need at least one slice"));
    }
    if n < n_slices || n < 2 {
        return Err(Error::Slicing(format!(
            "{n} samples cannot fill {n_slices} slices"
        )));
    }
    let xs = dataset.inputs();
    let mean: Vec<f64> = (0..d)
        .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = Mat::<f64>::zeros(d, d);
    for x in &xs {
        for j in 0..d {
            let dj = x[j] - mean[j];
            for i in j..d {
                cov[(i, j)] += (x[i] - mean[i]) * dj;
            }
        }
    }
    for j in 0..d {
        for i in j..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (vals, vecs) = symmetric_eigen(cov.as_ref())?;
    let top = vals[0];
    if !(vals[d - 1] > 1e-12 * top) {
        return Err(Error::arg("input covariance is singular"));
    }
    let mut inv_sqrt_cov = Mat::<f64>::zeros(d, d);
    for k in 0..d {
        let s = 1.0 / vals[k].sqrt();
        for j in 0..d {
            for i in 0..d {
                inv_sqrt_cov[(i, j)] += s * vecs[(i, k)] * vecs[(j, k)];
            }
        }
    }
    let z = xs
        .iter()
        .map(|x| {
            (0..d)
                .map(|i| (0..d).map(|j| inv_sqrt_cov[(i, j)] * (x[j] - mean[j])).sum())
                .collect()
        })
        .collect();
    let slices = slice_indices(&dataset.outputs(), n_slices)?;
    Ok(Standardized {
        z,
        inv_sqrt_cov,
        slices,
    })
}

fn finish(kernel: Mat<f64>, inv_sqrt_cov: &Mat<f64>, r: usize) -> Result<SlicedDirections> {
    let d = kernel.nrows();
    if r == 0 || r > d {
        return Err(Error::arg(format!("rank {r} outside 1..={d}")));
    }
    let (eigenvalues, vecs) = symmetric_eigen(kernel.as_ref())?;
    let raw = inv_sqrt_cov * vecs.as_ref().subcols(0, r);
    let mut directions = orthonormalize_columns(raw.as_ref())?;
    for j in 0..r {
        let mut col: Vec<f64> = (0..d).map(|i| directions[(i, j)]).collect();
        crate::linalg::fix_sign(&mut col);
        for i in 0..d {
            directions[(i, j)] = col[i];
        }
    }
    Ok(SlicedDirections {
        eigenvalues,
        directions,
    })
}

/// Sliced inverse regression: leading eigenvectors of the weighted
/// covariance of slice means of the standardized inputs, mapped back to the
/// original coordinates and orthonormalized.
pub fn sir_directions(dataset: &DataSet, r: usize, n_slices: usize) -> Result<SlicedDirections> {
    let st = standardize(dataset, n_slices)?;
    let d = dataset.dim();
    let n = dataset.len() as f64;
    let mut m = Mat::<f64>::zeros(d, d);
    for slice in &st.slices {
        let w = slice.len() as f64 / n;
        let mean: Vec<f64> = (0..d)
            .map(|j| slice.iter().map(|&i| st.z[i][j]).sum::<f64>() / slice.len() as f64)
            .collect();
        for j in 0..d {
            for i in 0..d {
                m[(i, j)] += w * mean[i] * mean[j];
            }
        }
    }
    finish(m, &st.inv_sqrt_cov, r)
}

/// Sliced average variance estimation: leading eigenvectors of the
/// slice-weighted average of `(I - Cov_h)^2` in standardized coordinates.
pub fn save_directions(dataset: &DataSet, r: usize, n_slices: usize) -> Result<SlicedDirections> {
    let st = standardize(dataset, n_slices)?;
    let d = dataset.dim();
    let n = dataset.len() as f64;
    let mut m = Mat::<f64>::zeros(d, d);
    for slice in &st.slices {
        let nh = slice.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|j| slice.iter().map(|&i| st.z[i][j]).sum::<f64>() / nh)
            .collect();
        let mut a = Mat::<f64>::identity(d, d);
        for &i in slice {
            let z = &st.z[i];
            for q in 0..d {
                let dq = (z[q] - mean[q]) / nh;
                for p in 0..d {
                    a[(p, q)] -= (z[p] - mean[p]) * dq;
                }
            }
        }
        let sq = &a * &a;
        let w = nh / n;
        for q in 0..d {
            for p in 0..d {
                m[(p, q)] += w * sq[(p, q)];
            }
        }
    }
    finish(m, &st.inv_sqrt_cov, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn grad_sample(g: Vec<f64>) -> Sample {
        Sample::new(vec![0.0; g.len()], 0.0, Some(g))
    }

    #[test]
    fn moment_of_single_gradient() {
        let c = gradient_moment(&[grad_sample(vec![1.0, 0.0])]).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 1)], 0.0);
    }

    #[test]
    fn moment_averages() {
        let c = gradient_moment(&[grad_sample(vec![1.0, 0.0]), grad_sample(vec![0.0, 1.0])]).unwrap();
        assert_eq!(c[(0, 0)], 0.5);
        assert_eq!(c[(1, 1)], 0.5);
        assert_eq!(c[(1, 0)], 0.0);
    }

    #[test]
    fn moment_of_linear_function() {
        let a = [0.3, -1.2, 2.0];
        let samples: Vec<Sample> = (0..5).map(|_| grad_sample(a.to_vec())).collect();
        let c = gradient_moment(&samples).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[(i, j)] - a[i] * a[j]).abs() <= 1e-15 * (a[i] * a[j]).abs().max(1.0));
            }
        }
    }

    #[test]
    fn moment_needs_gradients() {
        let s = Sample::new(vec![0.0], 1.0, None);
        assert!(matches!(gradient_moment(&[s]), Err(Error::Contract(_))));
    }

    #[test]
    fn eigen_rank_one() {
        let a = [3.0, 4.0];
        let c = Mat::from_fn(2, 2, |i, j| a[i] * a[j]);
        let (vals, v) = eigendecompose(c.as_ref()).unwrap();
        assert!((vals[0] - 25.0).abs() < 1e-12);
        assert!(vals[1].abs() < 1e-12);
        assert!((v[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((v[(1, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        let raw = [
            0.3, -1.1, 0.7, 2.0, 0.1, 1.4, -0.2, 0.9, 0.5, -0.6, 0.8, 0.05, -1.3, 0.4, 1.7, 0.2,
            -0.9, 0.6, 0.33, -0.45, 1.1, 0.0, 0.25, -0.75, 0.6,
        ];
        let c = Mat::from_fn(5, 5, |i, j| raw[i * 5 + j] + raw[j * 5 + i]);
        let (vals, v) = eigendecompose(c.as_ref()).unwrap();
        let lambda = Mat::from_fn(5, 5, |i, j| if i == j { vals[i] } else { 0.0 });
        let rec = &v * &lambda * v.transpose();
        assert!(max_abs((&rec - &c).as_ref()) <= 1e-8 * max_abs(c.as_ref()));
        let cv = &c * &v;
        let vl = &v * &lambda;
        assert!(max_abs((&cv - &vl).as_ref()) <= 1e-8 * max_abs(c.as_ref()));
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_rejects_nan() {
        let c = Mat::from_fn(2, 2, |i, _| if i == 0 { f64::NAN } else { 1.0 });
        assert!(matches!(eigendecompose(c.as_ref()), Err(Error::Argument(_))));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(select_rank(&[4.0, 3.0, 2.0, 1.0], 0.6).unwrap(), 2);
        assert_eq!(select_rank(&[1.0, 0.0, 0.0], 1.0).unwrap(), 1);
        assert_eq!(select_rank(&[1.0, 0.0, 0.0], 0.3).unwrap(), 1);
        assert_eq!(select_rank(&[0.5, 0.3, 0.2, 0.1], 1.0).unwrap(), 4);
        assert!(matches!(
            select_rank(&[0.0, 0.0], 0.5),
            Err(Error::DegenerateSpectrum(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let e1 = Mat::from_fn(3, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert_eq!(project(e1.as_ref(), &[2.5, 1.0, -1.0]).unwrap(), vec![2.5]);
        assert_eq!(project(e1.as_ref(), &[0.0; 3]).unwrap(), vec![0.0]);
        assert!(project(e1.as_ref(), &[0.0; 2]).is_err());
        let s = 0.5f64.sqrt();
        let v = Mat::from_fn(3, 2, |i, j| match (i, j) {
            (0, 0) | (1, 0) => s,
            (2, 1) => 1.0,
            _ => 0.0,
        });
        let x = [0.7, 0.7, -2.0];
        let z = project(v.as_ref(), &x).unwrap();
        let nz: f64 = z.iter().map(|t| t * t).sum::<f64>().sqrt();
        let nx: f64 = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        assert!((nz - nx).abs() < 1e-12);
    }

    #[test]
    fn slicing_keeps_ties_together() {
        let y = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let s = slice_indices(&y, 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], vec![0, 1, 2, 3]);
        assert!(matches!(slice_indices(&[1.0, 2.0, 3.0], 3), Err(Error::Slicing(_))));
    }

    #[test]
    fn subspace_serde_round_trip() {
        let c = Mat::from_fn(3, 3, |i, j| if i == j { 3.0 - i as f64 } else { 0.1 });
        let s = Subspace::from_moment(c.as_ref(), RankRule::Ratio(0.5)).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Subspace = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
