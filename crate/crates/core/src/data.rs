//! Training samples, datasets and their CSV representation.
//!
//! A dataset file has the header `x_1,...,x_d,y` optionally followed by
//! `g_1,...,g_d`; one sample per row. Values are written with Rust's
//! shortest round-trip float formatting, so `load(save(ds)) == ds` exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// One evaluation of the target function: input, value and (optionally) gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
    pub g: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64, g: Option<Vec<f64>>) -> Self {
        Sample { x, y, g }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    samples: Vec<Sample>,
    dim: usize,
}

impl DataSet {
    /// Validates dimensions, finiteness and gradient uniformity.
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dataset dimension must be positive"));
        }
        let with_grad = samples.first().map(|s| s.g.is_some()).unwrap_or(false);
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::arg(format!(
                    "sample {i}: input has length {}, expected {dim}",
                    s.x.len()
                )));
            }
            if s.g.is_some() != with_grad {
                return Err(Error::arg(format!(
                    "sample {i}: gradients must be present on all samples or none"
                )));
            }
            if let Some(g) = &s.g {
                if g.len() != dim {
                    return Err(Error::arg(format!(
                        "sample {i}: gradient has length {}, expected {dim}",
                        g.len()
                    )));
                }
            }
            let finite = s.y.is_finite()
                && s.x.iter().all(|v| v.is_finite())
                && s.g.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(Error::arg(format!("sample {i}: non-finite entry")));
            }
        }
        Ok(DataSet { samples, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn has_gradients(&self) -> bool {
        self.samples.first().is_some_and(|s| s.g.is_some())
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }

    pub fn outputs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Gradients of every sample, or a contract error if the set has none.
    pub fn gradients(&self) -> Result<Vec<&[f64]>> {
        if !self.has_gradients() {
            return Err(Error::Contract("dataset carries no gradients".into()));
        }
        Ok(self
            .samples
            .iter()
            .map(|s| s.g.as_deref().expect("uniform gradients"))
            .collect())
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DataSet {
        DataSet {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
        }
    }

    /// The same inputs and outputs with gradients dropped.
    pub fn without_gradients(&self) -> DataSet {
        DataSet {
            samples: self
                .samples
                .iter()
                .map(|s| Sample::new(s.x.clone(), s.y, None))
                .collect(),
            dim: self.dim,
        }
    }
}

/// `n` points drawn uniformly from the cube `[lo, hi]^d`.
pub fn sample_uniform(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_box(n, &vec![lo; d], &vec![hi; d], seed)
}

/// `n` points drawn uniformly from the box with per-coordinate bounds.
pub fn sample_box(n: usize, lo: &[f64], hi: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    if lo.len() != hi.len() {
        return Err(Error::arg("bound vectors differ in length"));
    }
    for (a, b) in lo.iter().zip(hi) {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::arg(format!("invalid bounds [{a}, {b}]")));
        }
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            lo.iter()
                .zip(hi)
                .map(|(&a, &b)| a + (b - a) * rng.random::<f64>())
                .collect()
        })
        .collect())
}

fn header(dim: usize, with_grad: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=dim).map(|i| format!("x_{i}")).collect();
    h.push("y".into());
    if with_grad {
        h.extend((1..=dim).map(|i| format!("g_{i}")));
    }
    h
}

pub fn save_dataset(dataset: &DataSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dataset(dataset, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset<W: Write>(dataset: &DataSet, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", header(dataset.dim, dataset.has_gradients()).join(","))?;
    let mut line = String::new();
    for s in &dataset.samples {
        line.clear();
        for v in &s.x {
            line.push_str(&format!("{v:?},"));
        }
        line.push_str(&format!("{:?}", s.y));
        for v in s.g.iter().flatten() {
            line.push_str(&format!(",{v:?}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DataSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, path)
}

/// Parses dataset CSV from any reader; `path` is only used in error messages.
pub fn read_dataset<R: std::io::Read>(reader: R, path: &Path) -> Result<DataSet> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let head = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file, missing header".into())),
    };
    let names: Vec<&str> = head.iter().collect();
    let dim = names.iter().take_while(|n| n.starts_with("x_")).count();
    if dim == 0 {
        return Err(parse_err(1, "header has no x_ columns".into()));
    }
    let with_grad = match names.len() {
        w if w == dim + 1 => false,
        w if w == 2 * dim + 1 => true,
        w => {
            return Err(parse_err(
                1,
                format!("header has {w} columns; expected {} or {}", dim + 1, 2 * dim + 1),
            ))
        }
    };
    let expected = header(dim, with_grad);
    if names.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(parse_err(
            1,
            format!("unexpected header, expected `{}`", expected.join(",")),
        ));
    }

    let width = expected.len();
    let mut samples = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(parse_err(
                line,
                format!("row has {} columns, expected {width}", rec.len()),
            ));
        }
        let mut vals = Vec::with_capacity(width);
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(line, format!("column {}: `{cell}` is not a number", col + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", col + 1)));
            }
            vals.push(v);
        }
        let g = with_grad.then(|| vals[dim + 1..].to_vec());
        samples.push(Sample::new(vals[..dim].to_vec(), vals[dim], g));
    }
    DataSet::new(dim, samples)
}

/// Seeded random split into `ceil(fraction * n)` training samples and the
/// remainder. Both parts keep the original sample order.
pub fn split(dataset: &DataSet, fraction: f64, seed: u64) -> Result<(DataSet, DataSet)> {
    if dataset.is_empty() {
        return Err(Error::arg("cannot split an empty dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = dataset.len();
    let n_train = ((fraction * n as f64).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((dataset.subset(&train_idx), dataset.subset(&test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, d: usize, grad: bool) -> DataSet {
        let samples = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..d).map(|j| (i * d + j) as f64 / 7.0 - 0.3).collect();
                let g = grad.then(|| x.iter().map(|v| 2.0 * v + 1e-17).collect());
                Sample::new(x, i as f64 * 0.1 + 1.0 / 3.0, g)
            })
            .collect();
        DataSet::new(d, samples).unwrap()
    }

    #[test]
    fn sample_uniform_empty_and_bounds() {
        assert!(sample_uniform(0, 3, -1.0, 1.0, 1).unwrap().is_empty());
        let pts = sample_uniform(1000, 50, -1.0, 1.0, 3).unwrap();
        let all: Vec<f64> = pts.iter().flatten().copied().collect();
        assert!(all.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        assert_eq!(pts.len(), 1000);
    }

    #[test]
    fn sample_uniform_is_deterministic() {
        let a = sample_uniform(3, 2, -1.0, 1.0, 7).unwrap();
        let b = sample_uniform(3, 2, -1.0, 1.0, 7).unwrap();
        let bits = |p: &Vec<Vec<f64>>| p.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn sample_uniform_rejects_bad_bounds() {
        assert!(matches!(
            sample_uniform(3, 2, 1.0, 1.0, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn csv_round_trip_with_gradients() {
        let ds = toy(10, 3, true);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, ds);
        assert!(back.has_gradients());
    }

    #[test]
    fn csv_without_gradients() {
        let ds = toy(4, 2, false);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,y\n"));
        let back = read_dataset(buf.as_slice(), Path::new("mem")).unwrap();
        assert!(!back.has_gradients());
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_wrong_width_reports_line() {
        let text = "x_1,x_2,y\n1,2,3\n4,5\n";
        match read_dataset(text.as_bytes(), Path::new("bad.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_numeric_reports_line() {
        let text = "x_1,y\n1,2\n3,abc\n";
        match read_dataset(text.as_bytes(), Path::new("bad.csv")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = toy(10, 2, false);
        let (a, b) = split(&ds, 0.5, 11).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut ys: Vec<f64> = a.outputs().into_iter().chain(b.outputs()).collect();
        ys.sort_by(f64::total_cmp);
        let mut orig = ds.outputs();
        orig.sort_by(f64::total_cmp);
        assert_eq!(ys, orig);
        let (a2, b2) = split(&ds, 0.5, 11).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn split_rounds_up() {
        let ds = toy(7, 1, false);
        let (a, b) = split(&ds, 0.3, 0).unwrap();
        assert_eq!((a.len(), b.len()), (3, 4));
    }

    #[test]
    fn split_rejects_empty() {
        let ds = DataSet::new(2, vec![]).unwrap();
        assert!(split(&ds, 0.5, 0).is_err());
        assert!(split(&toy(3, 1, false), 1.0, 0).is_err());
    }

    #[test]
    fn mixed_gradients_rejected() {
        let s1 = Sample::new(vec![0.0], 0.0, Some(vec![1.0]));
        let s2 = Sample::new(vec![0.0], 0.0, None);
        assert!(DataSet::new(1, vec![s1, s2]).is_err());
    }
}
