//! Dense linear-algebra helpers on top of `faer`.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Largest absolute entry.
pub fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].abs());
        }
    }
    best
}

/// Row-major `Vec<Vec<f64>>` rows into an `n x d` matrix.
pub fn rows_to_mat(rows: &[&[f64]], ncols: usize) -> Mat<f64> {
    Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn mat_to_cols(m: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)]).collect())
        .collect()
}

pub fn cols_to_mat(cols: &[Vec<f64>], nrows: usize) -> Result<Mat<f64>> {
    if cols.iter().any(|c| c.len() != nrows) {
        return Err(Error::arg("matrix columns have inconsistent length"));
    }
    Ok(Mat::from_fn(nrows, cols.len(), |i, j| cols[j][i]))
}

/// Serde adapter storing a matrix as a list of columns.
pub mod serde_cols {
    use faer::Mat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::mat_to_cols(m.as_ref()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat<f64>, D::Error> {
        let cols = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = cols.first().map_or(0, |c| c.len());
        super::cols_to_mat(&cols, nrows).map_err(serde::de::Error::custom)
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
///
/// Rows and columns that are identically zero are split off before the
/// dense solve, so their eigenvectors are exact coordinate vectors and the
/// remaining eigenvectors have exact zeros on those coordinates. Each
/// eigenvector is signed so that its largest-magnitude entry is positive.
pub fn symmetric_eigen(c: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let d = c.nrows();
    if c.ncols() != d {
        return Err(Error::arg(format!("matrix is {}x{}, not square", d, c.ncols())));
    }
    for j in 0..d {
        for i in 0..d {
            if !c[(i, j)].is_finite() {
                return Err(Error::arg("matrix has non-finite entries"));
            }
        }
    }
    let sym = Mat::from_fn(d, d, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let scale = max_abs(sym.as_ref());

    let active: Vec<usize> = (0..d)
        .filter(|&i| (0..d).any(|j| sym[(i, j)] != 0.0))
        .collect();
    let k = active.len();

    // (eigenvalue, column) pairs in the full coordinate system
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(d);
    if k > 0 {
        let block = Mat::from_fn(k, k, |a, b| sym[(active[a], active[b])]);
        let evd = block
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        for col in (0..k).rev() {
            let mut v = vec![0.0; d];
            for (a, &i) in active.iter().enumerate() {
                v[i] = u[(a, col)];
            }
            pairs.push((s[col], v));
        }
    }
    for i in (0..d).filter(|i| !active.contains(i)) {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        pairs.push((0.0, v));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let tol = 1e-10 * scale.max(1.0);
    let mut values = Vec::with_capacity(d);
    let mut vectors = Mat::zeros(d, d);
    for (col, (lambda, mut v)) in pairs.into_iter().enumerate() {
        let lambda = if lambda < 0.0 && lambda >= -tol { 0.0 } else { lambda };
        fix_sign(&mut v);
        for (i, vi) in v.iter().enumerate() {
            vectors[(i, col)] = *vi;
        }
        values.push(lambda);
    }
    Ok((values, vectors))
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&b| b < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Modified Gram-Schmidt on the columns of `m`, in order. Columns that are
/// numerically dependent on earlier ones are an error.
pub fn orthonormalize_columns(m: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let (d, r) = (m.nrows(), m.ncols());
    let mut q = m.to_owned();
    for j in 0..r {
        let orig: f64 = (0..d).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt();
        for p in 0..j {
            let dot: f64 = (0..d).map(|i| q[(i, p)] * q[(i, j)]).sum();
            for i in 0..d {
                q[(i, j)] -= dot * q[(i, p)];
            }
        }
        let norm: f64 = (0..d).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>().sqrt();
        if !(norm > 1e-12 * orig.max(f64::MIN_POSITIVE)) || norm == 0.0 {
            return Err(Error::Numerical(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        for i in 0..d {
            q[(i, j)] /= norm;
        }
    }
    Ok(q)
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns and equal column counts.
pub fn max_principal_angle(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::arg("subspaces must have equal shape"));
    }
    // sin of the largest angle = spectral norm of (I - A A^T) B
    let proj = a * (a.transpose() * b);
    let resid = b - &proj;
    let gram = resid.transpose() * &resid;
    let evals = gram
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("{e:?}")))?;
    let top = evals.iter().copied().fold(0.0f64, f64::max);
    Ok(top.max(0.0).sqrt().min(1.0).asin())
}
