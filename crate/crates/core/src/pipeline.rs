//! Clustered active-subspace emulation end to end: decomposition into
//! clusters with local subspaces, local GP fitting with classifier routing,
//! the global baselines, the error metric, cross-validation of the cluster
//! count, emulator bundles and the Monte Carlo projection oracle.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_svm, Classifier, NearestCentroid, Router, SvmConfig};
use crate::clustering::{training_dendrogram, Dendrogram, Partition};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitOptions, GpModel};
use crate::linalg::{max_abs, symmetric_eigen};
use crate::rng::{derive_seed, rng_from_seed};
use crate::subspace::{
    project, save_directions, select_rank, sir_directions, RankRule, Subspace, DEFAULT_SLICES,
};

/// Smallest cluster a local GP is fitted on.
pub const MIN_CLUSTER_SIZE: usize = 2;

/// Default relative tolerance of the cross-validation plateau rule.
pub const DEFAULT_PLATEAU: f64 = 0.02;

/// Seed stream used for the cross-validation fold assignment.
const FOLD_STREAM: u64 = 0xF01D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Svm,
    NearestCentroid,
}

/// Settings of a clustered emulator; the global baselines read `rank`, `gp`
/// and `seed` from the same structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasConfig {
    pub clusters: usize,
    pub rank: RankRule,
    /// Weight of the input-distance term in the clustering metric.
    pub eta: f64,
    pub router: RouterKind,
    pub svm: SvmConfig,
    /// GP options; the seed inside is replaced by one derived per cluster.
    pub gp: FitOptions,
    pub seed: u64,
    /// Per-coordinate lengthscales for the plain GP baseline. Off by default:
    /// the baseline is a single-lengthscale GP on the full input.
    #[serde(default)]
    pub plain_gp_ard: bool,
}

impl Default for CasConfig {
    fn default() -> Self {
        CasConfig {
            clusters: 4,
            rank: RankRule::Fixed(2),
            eta: 1.0,
            router: RouterKind::Svm,
            svm: SvmConfig::default(),
            gp: FitOptions::default(),
            seed: 0,
            plain_gp_ard: false,
        }
    }
}

impl CasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::arg("cluster count must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::arg("eta must lie in [0, 1]"));
        }
        match self.rank {
            RankRule::Fixed(0) => return Err(Error::arg("rank must be at least 1")),
            RankRule::Ratio(rho) if !(rho > 0.0 && rho <= 1.0) => {
                return Err(Error::arg("rho must lie in (0, 1]"))
            }
            _ => {}
        }
        self.svm.validate()
    }

    fn gp_options(&self, cluster: usize) -> FitOptions {
        FitOptions {
            seed: derive_seed(self.seed, cluster as u64),
            ..self.gp.clone()
        }
    }
}

fn subspace_for(dataset: &DataSet, members: &[usize], rule: RankRule, cluster: usize) -> Result<Subspace> {
    let samples: Vec<_> = members.iter().map(|&i| dataset.samples()[i].clone()).collect();
    let sub = Subspace::from_samples(&samples, rule).map_err(|e| match e {
        Error::DegenerateSpectrum(msg) => {
            Error::DegenerateSpectrum(format!("cluster {cluster}: {msg}"))
        }
        other => other,
    })?;
    if sub.rank() > sub.dim() {
        return Err(Error::arg("rank exceeds the input dimension"));
    }
    Ok(sub)
}

fn decompose_partition(
    dataset: &DataSet,
    partition: &Partition,
    rule: RankRule,
) -> Result<Vec<(Vec<usize>, Subspace)>> {
    if let RankRule::Fixed(r) = rule {
        if r > dataset.dim() {
            return Err(Error::arg(format!(
                "rank {r} exceeds the input dimension {}",
                dataset.dim()
            )));
        }
    }
    partition
        .members()
        .into_iter()
        .enumerate()
        .map(|(c, members)| {
            let sub = subspace_for(dataset, &members, rule, c + 1)?;
            Ok((members, sub))
        })
        .collect()
}

fn single_partition(n: usize) -> Partition {
    Partition {
        labels: vec![1; n],
        clusters: 1,
        merge_heights: Vec::new(),
    }
}

fn partition_for(dataset: &DataSet, clusters: usize, eta: f64) -> Result<Partition> {
    if !dataset.has_gradients() {
        return Err(Error::Contract("clustered decomposition needs gradients".into()));
    }
    if dataset.len() < clusters {
        return Err(Error::arg(format!(
            "{} samples cannot form {clusters} clusters",
            dataset.len()
        )));
    }
    if clusters == 1 {
        return Ok(single_partition(dataset.len()));
    }
    training_dendrogram(dataset, eta)?.cut(clusters)
}

/// Clusters the training set and computes one active subspace per cluster.
pub fn cas_decompose(
    dataset: &DataSet,
    clusters: usize,
    rule: RankRule,
    eta: f64,
) -> Result<Vec<(Vec<usize>, Subspace)>> {
    let partition = partition_for(dataset, clusters, eta)?;
    decompose_partition(dataset, &partition, rule)
}

/// One cluster of a fitted emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    /// Training indices belonging to this cluster.
    pub members: Vec<usize>,
    pub subspace: Subspace,
    /// GP over the cluster's reduced coordinates.
    pub gp: GpModel,
}

/// Local GPs on per-cluster active subspaces, with a router choosing the
/// cluster of a new input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasEmulator {
    pub config: CasConfig,
    pub dim: usize,
    pub locals: Vec<LocalModel>,
    pub router: Router,
}

/// Fits the clustered emulator: cluster, reduce per cluster, train the
/// router and one GP per cluster.
pub fn fit_emulator(dataset: &DataSet, config: &CasConfig) -> Result<CasEmulator> {
    config.validate()?;
    let partition = partition_for(dataset, config.clusters, config.eta)?;
    fit_with_partition(dataset, &partition, config)
}

/// As [`fit_emulator`] with a precomputed partition of the training set.
pub fn fit_with_partition(
    dataset: &DataSet,
    partition: &Partition,
    config: &CasConfig,
) -> Result<CasEmulator> {
    config.validate()?;
    if partition.labels.len() != dataset.len() {
        return Err(Error::arg("partition does not cover the training set"));
    }
    let members = partition.members();
    for (c, m) in members.iter().enumerate() {
        if m.len() < MIN_CLUSTER_SIZE {
            return Err(Error::UnderPopulatedCluster {
                cluster: c + 1,
                size: m.len(),
                required: MIN_CLUSTER_SIZE,
            });
        }
    }
    let parts = decompose_partition(dataset, partition, config.rank)?;

    let inputs = dataset.inputs();
    let router = if parts.len() == 1 {
        Router::Single { dim: dataset.dim() }
    } else {
        match config.router {
            RouterKind::Svm => Router::Svm(train_svm(&inputs, &partition.labels, &config.svm)?),
            RouterKind::NearestCentroid => {
                Router::NearestCentroid(NearestCentroid::train(&inputs, &partition.labels)?)
            }
        }
    };

    let locals = parts
        .into_iter()
        .enumerate()
        .map(|(c, (members, subspace))| {
            let z = members
                .iter()
                .map(|&i| project(subspace.v1(), inputs[i]))
                .collect::<Result<Vec<_>>>()?;
            let y: Vec<f64> = members.iter().map(|&i| dataset.samples()[i].y).collect();
            log::debug!("fitting GP for cluster {} on {} points", c + 1, members.len());
            let gp = fit_gp(&z, &y, &config.gp_options(c))?;
            Ok(LocalModel {
                members,
                subspace,
                gp,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CasEmulator {
        config: config.clone(),
        dim: dataset.dim(),
        locals,
        router,
    })
}

/// A prediction with the cluster (1-based) that produced it.
pub type Prediction = (f64, f64, usize);

impl CasEmulator {
    pub fn clusters(&self) -> usize {
        self.locals.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "input has dimension {}, emulator expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn local(&self, label: usize) -> Result<&LocalModel> {
        self.locals
            .get(label.wrapping_sub(1))
            .ok_or_else(|| Error::Numerical(format!("router returned unknown cluster {label}")))
    }

    pub fn emulate(&self, x: &[f64]) -> Result<Prediction> {
        self.check_dim(x)?;
        let label = self.router.classify(x)?;
        let local = self.local(label)?;
        let (mean, var) = local.gp.predict(&local.subspace.project(x)?)?;
        Ok((mean, var, label))
    }

    /// Batched [`CasEmulator::emulate`]; results are identical.
    pub fn emulate_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let mut labels = Vec::with_capacity(xs.len());
        for x in xs {
            self.check_dim(x)?;
            labels.push(self.router.classify(x)?);
        }
        let mut out = vec![(0.0, 0.0, 0); xs.len()];
        for (c, local) in self.locals.iter().enumerate() {
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| labels[i] == c + 1).collect();
            if idx.is_empty() {
                continue;
            }
            let z = idx
                .iter()
                .map(|&i| local.subspace.project(&xs[i]))
                .collect::<Result<Vec<_>>>()?;
            for (&i, (m, v)) in idx.iter().zip(local.gp.predict_many(&z)?) {
                out[i] = (m, v, c + 1);
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > self.locals.len()) {
            return Err(Error::Numerical(format!("router returned unknown cluster {bad}")));
        }
        Ok(out)
    }
}

pub fn emulate(emulator: &CasEmulator, x: &[f64]) -> Result<Prediction> {
    emulator.emulate(x)
}

/// Emulation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Clustered active subspaces with local GPs.
    Cas,
    /// One global active subspace.
    As,
    /// Sliced inverse regression directions.
    Sir,
    /// Sliced average variance estimation directions.
    Save,
    /// GP on the full input.
    PlainGp,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Cas, Method::As, Method::Sir, Method::Save, Method::PlainGp];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cas => "cas",
            Method::As => "as",
            Method::Sir => "sir",
            Method::Save => "save",
            Method::PlainGp => "plain-gp",
        }
    }

    /// Whether fitting needs gradient observations.
    pub fn needs_gradients(&self) -> bool {
        matches!(self, Method::Cas | Method::As)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::arg(format!("unknown method `{s}` (expected cas, as, sir, save or plain-gp)"))
            })
    }
}

/// A single GP on globally reduced (or raw) inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalEmulator {
    pub method: Method,
    pub dim: usize,
    /// `d x r` reduction matrix; absent for the plain GP.
    #[serde(with = "crate::linalg::serde_cols")]
    pub directions: Mat<f64>,
    pub gp: GpModel,
}

/// Reduction matrix for the global baselines.
fn global_directions(dataset: &DataSet, method: Method, rule: RankRule) -> Result<Mat<f64>> {
    let d = dataset.dim();
    let sliced = |f: fn(&DataSet, usize, usize) -> Result<crate::subspace::SlicedDirections>| {
        let r = match rule {
            RankRule::Fixed(r) => r,
            RankRule::Ratio(rho) => {
                let all = f(dataset, d, DEFAULT_SLICES)?;
                select_rank(&all.eigenvalues, rho)?
            }
        };
        if r == 0 || r > d {
            return Err(Error::arg(format!("rank {r} outside 1..={d}")));
        }
        Ok(f(dataset, r, DEFAULT_SLICES)?.directions)
    };
    match method {
        Method::As => {
            let all: Vec<usize> = (0..dataset.len()).collect();
            if let RankRule::Fixed(r) = rule {
                if r > d {
                    return Err(Error::arg(format!("rank {r} outside 1..={d}")));
                }
            }
            Ok(subspace_for(dataset, &all, rule, 1)?.v1().to_owned())
        }
        Method::Sir => sliced(sir_directions),
        Method::Save => sliced(save_directions),
        Method::PlainGp => Ok(Mat::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 })),
        Method::Cas => Err(Error::arg("the clustered method is not a global reducer")),
    }
}

/// Fits one of the global baselines.
pub fn fit_global(dataset: &DataSet, method: Method, config: &CasConfig) -> Result<GlobalEmulator> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    let directions = global_directions(dataset, method, config.rank)?;
    let inputs = dataset.inputs();
    let z: Vec<Vec<f64>> = if method == Method::PlainGp {
        inputs.iter().map(|x| x.to_vec()).collect()
    } else {
        inputs
            .iter()
            .map(|x| project(directions.as_ref(), x))
            .collect::<Result<_>>()?
    };
    // cluster 0's seed, so a one-cluster clustered fit reproduces the AS fit
    let mut opts = config.gp_options(0);
    if method == Method::PlainGp {
        opts.ard = config.plain_gp_ard;
    }
    let gp = fit_gp(&z, &dataset.outputs(), &opts)?;
    Ok(GlobalEmulator {
        method,
        dim: dataset.dim(),
        directions,
        gp,
    })
}

impl GlobalEmulator {
    fn reduce(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "input has dimension {}, emulator expects {}",
                x.len(),
                self.dim
            )));
        }
        if self.method == Method::PlainGp {
            Ok(x.to_vec())
        } else {
            project(self.directions.as_ref(), x)
        }
    }

    pub fn emulate(&self, x: &[f64]) -> Result<Prediction> {
        let (m, v) = self.gp.predict(&self.reduce(x)?)?;
        Ok((m, v, 1))
    }

    pub fn emulate_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let z = xs.iter().map(|x| self.reduce(x)).collect::<Result<Vec<_>>>()?;
        Ok(self.gp.predict_many(&z)?.into_iter().map(|(m, v)| (m, v, 1)).collect())
    }
}

/// Any fitted emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Emulator {
    Clustered(CasEmulator),
    Global(GlobalEmulator),
}

impl Emulator {
    pub fn method(&self) -> Method {
        match self {
            Emulator::Clustered(_) => Method::Cas,
            Emulator::Global(g) => g.method,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Emulator::Clustered(e) => e.dim,
            Emulator::Global(e) => e.dim,
        }
    }

    pub fn emulate(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            Emulator::Clustered(e) => e.emulate(x),
            Emulator::Global(e) => e.emulate(x),
        }
    }

    pub fn emulate_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        match self {
            Emulator::Clustered(e) => e.emulate_many(xs),
            Emulator::Global(e) => e.emulate_many(xs),
        }
    }
}

/// Fits the emulator for `method`.
pub fn fit(dataset: &DataSet, method: Method, config: &CasConfig) -> Result<Emulator> {
    match method {
        Method::Cas => fit_emulator(dataset, config).map(Emulator::Clustered),
        _ => fit_global(dataset, method, config).map(Emulator::Global),
    }
}

/// `sum (f - f_hat)^2 / sum f^2`.
pub fn nmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() || truths.is_empty() {
        return Err(Error::arg("predictions and truths need equal, nonzero lengths"));
    }
    let den: f64 = truths.iter().map(|t| t * t).sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateMetric("sum of squared truths is zero".into()));
    }
    let num: f64 = predictions.iter().zip(truths).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(num / den)
}

/// NMSE of an emulator's mean predictions on a test set.
pub fn test_nmse(emulator: &Emulator, test: &DataSet) -> Result<f64> {
    let xs: Vec<Vec<f64>> = test.inputs().iter().map(|x| x.to_vec()).collect();
    let preds: Vec<f64> = emulator.emulate_many(&xs)?.into_iter().map(|p| p.0).collect();
    nmse(&preds, &test.outputs())
}

/// Cross-validation errors per candidate cluster count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    /// Mean held-out NMSE for `J = 1..=J_max`; `None` where every fold failed.
    pub mean_nmse: Vec<Option<f64>>,
    /// Number of folds that contributed to each mean.
    pub folds_used: Vec<usize>,
    pub delta: f64,
    /// Selected cluster count.
    pub chosen: usize,
}

/// Smallest `J` whose error is within `(1 + delta)` of the best one.
pub fn select_clusters(mean_nmse: &[Option<f64>], delta: f64) -> Result<usize> {
    if !(delta >= 0.0) {
        return Err(Error::arg("plateau tolerance must be nonnegative"));
    }
    let best = mean_nmse
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::arg("no candidate cluster count has a cross-validation error"));
    }
    Ok(mean_nmse
        .iter()
        .position(|v| v.is_some_and(|v| v <= (1.0 + delta) * best))
        .map(|i| i + 1)
        .expect("the minimum satisfies the rule"))
}

fn fold_errors(
    train: &DataSet,
    test: &DataSet,
    dendrogram: &Dendrogram,
    j_max: usize,
    config: &CasConfig,
) -> Vec<Result<f64>> {
    (1..=j_max)
        .map(|j| {
            let cfg = CasConfig {
                clusters: j,
                ..config.clone()
            };
            let partition = if j == 1 {
                single_partition(train.len())
            } else {
                dendrogram.cut(j)?
            };
            let em = Emulator::Clustered(fit_with_partition(train, &partition, &cfg)?);
            test_nmse(&em, test)
        })
        .collect()
}

/// k-fold cross-validation of the cluster count. Each fold builds one
/// dendrogram and cuts it at every candidate `J`.
pub fn cross_validate_clusters(
    dataset: &DataSet,
    j_max: usize,
    folds: usize,
    config: &CasConfig,
    delta: f64,
) -> Result<CvReport> {
    config.validate()?;
    if folds < 2 {
        return Err(Error::arg("cross-validation needs at least two folds"));
    }
    if j_max == 0 {
        return Err(Error::arg("J_max must be at least 1"));
    }
    if dataset.len() < folds * j_max {
        return Err(Error::arg(format!(
            "{} samples are too few for {folds} folds and up to {j_max} clusters",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(config.seed, FOLD_STREAM)));

    let mut sums = vec![0.0; j_max];
    let mut used = vec![0usize; j_max];
    for fold in 0..folds {
        let mut held: Vec<usize> = order.iter().skip(fold).step_by(folds).copied().collect();
        held.sort_unstable();
        let mut keep: Vec<usize> = (0..dataset.len()).filter(|i| held.binary_search(i).is_err()).collect();
        keep.sort_unstable();
        let train = dataset.subset(&keep);
        let test = dataset.subset(&held);
        let cfg = CasConfig {
            seed: derive_seed(config.seed, fold as u64),
            ..config.clone()
        };
        let errors = match training_dendrogram(&train, cfg.eta) {
            Ok(dendro) => fold_errors(&train, &test, &dendro, j_max, &cfg),
            Err(e) => {
                log::warn!("fold {} skipped: {e}", fold + 1);
                continue;
            }
        };
        for (j, err) in errors.into_iter().enumerate() {
            match err {
                Ok(v) => {
                    sums[j] += v;
                    used[j] += 1;
                }
                Err(e) => log::warn!("fold {} with J={} skipped: {e}", fold + 1, j + 1),
            }
        }
    }
    let mean_nmse: Vec<Option<f64>> = sums
        .iter()
        .zip(&used)
        .map(|(s, &u)| (u > 0).then(|| s / u as f64))
        .collect();
    let chosen = select_clusters(&mean_nmse, delta)?;
    Ok(CvReport {
        folds,
        mean_nmse,
        folds_used: used,
        delta,
        chosen,
    })
}

pub const BUNDLE_FORMAT: &str = "casgp-emulator";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    version: u32,
    emulator: Emulator,
}

/// Serializes an emulator as a versioned JSON bundle. GP factorizations
/// are not stored; they are recomputed on load.
pub fn write_emulator<W: Write>(emulator: &Emulator, out: W) -> Result<()> {
    let bundle = Bundle {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        emulator: emulator.clone(),
    };
    serde_json::to_writer(out, &bundle).map_err(|e| Error::Bundle(e.to_string()))
}

pub fn read_emulator<R: Read>(input: R) -> Result<Emulator> {
    let value: serde_json::Value =
        serde_json::from_reader(input).map_err(|e| Error::Bundle(e.to_string()))?;
    let format = value.get("format").and_then(|v| v.as_str());
    if format != Some(BUNDLE_FORMAT) {
        return Err(Error::Bundle(format!(
            "not an emulator bundle (format {format:?})"
        )));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(BUNDLE_VERSION as u64) {
        return Err(Error::Bundle(format!(
            "unsupported bundle version {version:?}, expected {BUNDLE_VERSION}"
        )));
    }
    let bundle: Bundle = serde_json::from_value(value).map_err(|e| Error::Bundle(e.to_string()))?;
    Ok(bundle.emulator)
}

pub fn save_emulator(emulator: &Emulator, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_emulator(emulator, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_emulator(path: impl AsRef<Path>) -> Result<Emulator> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_emulator(std::io::BufReader::new(file))
}

/// Input distribution for the projection oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum InputDistribution {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

/// Lowest tolerated acceptance rate of the slice sampler.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

/// Rows of `V1` at or below this magnitude are treated as exactly zero.
const SUPPORT_TOL: f64 = 1e-12;

/// Monte Carlo estimate of `E[f(x) | V1^T x = z1]` for `x` uniform on a box.
///
/// Coordinates on which `V1` vanishes do not enter the constraint and are
/// drawn freely; the remaining ones are sampled uniformly on the slice by
/// rejection from a bounding box of the slice. `V2` only fixes the
/// complement and is checked for orthogonality.
pub fn mc_projection<F>(
    mut f: F,
    v1: MatRef<'_, f64>,
    v2: MatRef<'_, f64>,
    z1: &[f64],
    n_mc: usize,
    seed: u64,
    domain: &InputDistribution,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let (lo, hi) = match domain {
        InputDistribution::UniformBox { lo, hi } => (lo, hi),
        InputDistribution::Gaussian { .. } => {
            return Err(Error::UnsupportedDistribution(
                "conditional sampling is implemented for uniform boxes only".into(),
            ))
        }
    };
    let d = v1.nrows();
    let r = v1.ncols();
    if lo.len() != d || hi.len() != d || lo.iter().zip(hi.iter()).any(|(a, b)| !(a < b)) {
        return Err(Error::arg("box bounds must match the dimension with lo < hi"));
    }
    if v2.nrows() != d || r + v2.ncols() != d || z1.len() != r || r == 0 {
        return Err(Error::arg("V1, V2 and z1 have inconsistent shapes"));
    }
    if n_mc == 0 {
        return Err(Error::arg("n_mc must be positive"));
    }
    let q = Mat::from_fn(d, d, |i, j| if j < r { v1[(i, j)] } else { v2[(i, j - r)] });
    let mut gram = q.transpose() * &q;
    for i in 0..d {
        gram[(i, i)] -= 1.0;
    }
    if max_abs(gram.as_ref()) > 1e-8 {
        return Err(Error::arg("[V1 V2] is not orthogonal"));
    }

    let support: Vec<usize> = (0..d)
        .filter(|&i| (0..r).any(|j| v1[(i, j)].abs() > SUPPORT_TOL))
        .collect();
    let s = support.len();
    let v1s = Mat::from_fn(s, r, |a, j| v1[(support[a], j)]);
    // orthonormal basis of the slice directions inside the support
    let mut proj = Mat::from_fn(s, s, |a, b| if a == b { 1.0 } else { 0.0 });
    proj -= &v1s * v1s.transpose();
    let (_, vecs) = symmetric_eigen(proj.as_ref())?;
    let k = s - r;
    let center: Vec<f64> = (0..s)
        .map(|a| (0..r).map(|j| v1s[(a, j)] * z1[j]).sum())
        .collect();
    let bounds: Vec<(f64, f64)> = (0..k)
        .map(|c| {
            (0..s).fold((0.0, 0.0), |(l, u), a| {
                let i = support[a];
                let p = vecs[(a, c)] * (lo[i] - center[a]);
                let q = vecs[(a, c)] * (hi[i] - center[a]);
                (l + p.min(q), u + p.max(q))
            })
        })
        .collect();

    let mut rng = rng_from_seed(seed);
    let mut x = vec![0.0; d];
    let in_support: Vec<bool> = (0..d).map(|i| support.binary_search(&i).is_ok()).collect();
    let (mut trials, mut accepted, mut sum) = (0usize, 0usize, 0.0);
    while accepted < n_mc {
        trials += 1;
        let w: Vec<f64> = bounds
            .iter()
            .map(|&(l, u)| if u > l { rng.random_range(l..u) } else { l })
            .collect();
        let mut inside = true;
        for (a, &i) in support.iter().enumerate() {
            let v = center[a] + (0..k).map(|c| vecs[(a, c)] * w[c]).sum::<f64>();
            if v < lo[i] || v > hi[i] {
                inside = false;
                break;
            }
            x[i] = v;
        }
        if inside {
            for i in (0..d).filter(|&i| !in_support[i]) {
                x[i] = rng.random_range(lo[i]..hi[i]);
            }
            sum += f(&x)?;
            accepted += 1;
        } else if trials >= 10_000 && (accepted as f64) < MIN_ACCEPTANCE * trials as f64 {
            return Err(Error::SamplingFailure(format!(
                "slice acceptance rate {accepted}/{trials} below {MIN_ACCEPTANCE}"
            )));
        }
    }
    Ok(sum / n_mc as f64)
}
