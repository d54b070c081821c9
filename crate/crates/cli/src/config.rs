//! Run configuration: a flat TOML file whose keys mirror the command-line
//! flags. Flags override file values.

use std::path::{Path, PathBuf};

use casgp::benchmarks::{Benchmark, MixtureParams};
use casgp::classifier::{SvmConfig, SvmKernel};
use casgp::data::{load_dataset, DataSet};
use casgp::gp::FitOptions;
use casgp::pipeline::{CasConfig, Method, RouterKind};
use casgp::rng::derive_seed;
use casgp::subspace::RankRule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Seed streams for generated datasets.
pub const TRAIN_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;

/// Rank used when neither `rank` nor `rho` is given.
pub const DEFAULT_RANK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkKind {
    Piecewise,
    GaussianMixture,
    /// Datasets read from `train_csv` / `test_csv`.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RouterChoice {
    Svm,
    NearestCentroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkKind,
    /// Mixture parameter file; the shipped fixture when absent.
    pub mixture_params: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    /// Expected input dimension, checked against the data when set.
    pub dim: Option<usize>,
    pub seed: u64,

    pub method: Method,
    pub clusters: usize,
    pub rank: Option<usize>,
    pub rho: Option<f64>,
    pub eta: f64,
    pub folds: usize,
    pub j_max: usize,
    pub cv_delta: f64,

    pub gp_restarts: usize,
    pub gp_max_iter: usize,
    pub gp_noise: Option<f64>,
    pub gp_ard: bool,
    pub plain_gp_ard: bool,

    pub router: RouterChoice,
    pub svm_kernel: KernelKind,
    pub svm_c: f64,
    pub svm_gamma: Option<f64>,
    pub svm_max_iter: Option<usize>,
    pub svm_tol: f64,

    pub compare_methods: Vec<Method>,
    pub compare_ranks: Vec<usize>,
    pub compare_clusters: Vec<usize>,

    pub out: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub dump_directions: Option<PathBuf>,
    pub dump_partition: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gp = FitOptions::default();
        let svm = SvmConfig::default();
        RunConfig {
            benchmark: BenchmarkKind::Piecewise,
            mixture_params: None,
            train_csv: None,
            test_csv: None,
            n_train: 1000,
            n_test: 5000,
            dim: None,
            seed: 1,
            method: Method::Cas,
            clusters: 4,
            rank: None,
            rho: None,
            eta: 1.0,
            folds: 10,
            j_max: 5,
            cv_delta: casgp::pipeline::DEFAULT_PLATEAU,
            gp_restarts: gp.restarts,
            gp_max_iter: gp.max_opt_iter,
            gp_noise: gp.fixed_noise,
            gp_ard: gp.ard,
            plain_gp_ard: false,
            router: RouterChoice::Svm,
            svm_kernel: KernelKind::Linear,
            svm_c: svm.c,
            svm_gamma: None,
            svm_max_iter: svm.max_iter,
            svm_tol: svm.tol,
            compare_methods: Method::ALL.to_vec(),
            compare_ranks: vec![1, 2, 3, 4],
            compare_clusters: vec![2, 3, 4],
            out: None,
            bundle: None,
            input: None,
            predictions: None,
            dump_directions: None,
            dump_partition: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Parses file contents; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.message().replace('\n', " "),
        })
    }

    /// The resolved configuration as TOML, for embedding in reports.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn rank_rule(&self) -> Result<RankRule> {
        match (self.rank, self.rho) {
            (Some(_), Some(_)) => Err(CliError::Usage("set either rank or rho, not both".into())),
            (Some(r), None) => Ok(RankRule::Fixed(r)),
            (None, Some(rho)) => Ok(RankRule::Ratio(rho)),
            (None, None) => Ok(RankRule::Fixed(DEFAULT_RANK)),
        }
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.cas_config()?.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(CliError::Usage("n_train and n_test must be positive".into()));
        }
        if !(self.cv_delta >= 0.0) {
            return Err(CliError::Usage("cv_delta must be nonnegative".into()));
        }
        if self.benchmark != BenchmarkKind::Csv {
            let d = self.benchmark()?.dim();
            if let Some(dim) = self.dim.filter(|&dim| dim != d) {
                return Err(CliError::Usage(format!(
                    "dim = {dim} but the {} benchmark has dimension {d}",
                    self.benchmark_name()
                )));
            }
        }
        Ok(())
    }

    pub fn cas_config(&self) -> Result<CasConfig> {
        let kernel = match (self.svm_kernel, self.svm_gamma) {
            (KernelKind::Linear, _) => SvmKernel::Linear,
            (KernelKind::Rbf, Some(gamma)) => SvmKernel::Rbf { gamma },
            (KernelKind::Rbf, None) => {
                return Err(CliError::Usage("the rbf kernel needs svm_gamma".into()))
            }
        };
        Ok(CasConfig {
            clusters: self.clusters,
            rank: self.rank_rule()?,
            eta: self.eta,
            router: match self.router {
                RouterChoice::Svm => RouterKind::Svm,
                RouterChoice::NearestCentroid => RouterKind::NearestCentroid,
            },
            svm: SvmConfig {
                kernel,
                c: self.svm_c,
                max_iter: self.svm_max_iter,
                tol: self.svm_tol,
            },
            gp: FitOptions {
                restarts: self.gp_restarts,
                max_opt_iter: self.gp_max_iter,
                fixed_noise: self.gp_noise,
                ard: self.gp_ard,
                seed: 0,
            },
            seed: self.seed,
            plain_gp_ard: self.plain_gp_ard,
        })
    }

    fn benchmark_name(&self) -> &'static str {
        match self.benchmark {
            BenchmarkKind::Piecewise => "piecewise",
            BenchmarkKind::GaussianMixture => "gaussian-mixture",
            BenchmarkKind::Csv => "csv",
        }
    }

    /// The analytic benchmark; an error for CSV input.
    pub fn benchmark(&self) -> Result<Benchmark> {
        match self.benchmark {
            BenchmarkKind::Piecewise => Ok(Benchmark::Piecewise),
            BenchmarkKind::GaussianMixture => Ok(Benchmark::GaussianMixture(match &self.mixture_params {
                Some(p) => MixtureParams::load(p)?,
                None => MixtureParams::shipped(),
            })),
            BenchmarkKind::Csv => Err(CliError::Usage(
                "benchmark = csv has no generator; use piecewise or gaussian-mixture".into(),
            )),
        }
    }

    fn check_dim(&self, ds: &DataSet, path: &Path) -> Result<()> {
        match self.dim {
            Some(d) if d != ds.dim() => Err(CliError::Usage(format!(
                "{}: data has dimension {}, config says {d}",
                path.display(),
                ds.dim()
            ))),
            _ => Ok(()),
        }
    }

    fn external(&self, path: Option<&PathBuf>, key: &str) -> Result<DataSet> {
        let path = path.ok_or_else(|| CliError::Usage(format!("benchmark = csv needs {key}")))?;
        let ds = load_dataset(path)?;
        self.check_dim(&ds, path)?;
        Ok(ds)
    }

    /// Training data, generated with gradients or read from `train_csv`.
    pub fn training_set(&self) -> Result<DataSet> {
        match self.benchmark {
            BenchmarkKind::Csv => self.external(self.train_csv.as_ref(), "train_csv"),
            _ => Ok(self
                .benchmark()?
                .dataset(self.n_train, derive_seed(self.seed, TRAIN_STREAM), true)?),
        }
    }

    /// Test data, generated without gradients or read from `test_csv`.
    pub fn test_set(&self) -> Result<DataSet> {
        match self.benchmark {
            BenchmarkKind::Csv => self.external(self.test_csv.as_ref(), "test_csv"),
            _ => Ok(self
                .benchmark()?
                .dataset(self.n_test, derive_seed(self.seed, TEST_STREAM), false)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig {
            rho: Some(0.99),
            gp_noise: Some(1e-8),
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&cfg.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("clusterz = 3", Path::new("run.toml")).unwrap_err();
        assert!(err.to_string().contains("run.toml"));
    }

    #[test]
    fn rank_and_rho_are_exclusive() {
        let cfg = RunConfig::parse("rank = 2\nrho = 0.9", Path::new("x.toml")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dimension_mismatch_is_caught_early() {
        let cfg = RunConfig::parse("dim = 10", Path::new("x.toml")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn kebab_case_values() {
        let cfg = RunConfig::parse(
            "benchmark = \"gaussian-mixture\"\nmethod = \"plain-gp\"\nrouter = \"nearest-centroid\"",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(cfg.benchmark, BenchmarkKind::GaussianMixture);
        assert_eq!(cfg.method, Method::PlainGp);
        cfg.validate().unwrap();
    }
}
