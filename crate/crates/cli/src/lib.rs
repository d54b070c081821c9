//! Command-line front end for `casgp`: generate benchmark data, fit and
//! evaluate emulators, cross-validate the cluster count and run comparison
//! tables. Every flag has a config-file key of the same name (dashes become
//! underscores); flags win over the file.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use casgp::pipeline::Method;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

use config::{BenchmarkKind, KernelKind, RouterChoice};

#[derive(Debug, Parser)]
#[command(name = "casgp", version, about = "Clustered active-subspace GP emulators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write train.csv and test.csv for a benchmark into --out (a directory).
    Gen,
    /// Fit an emulator and save it to --out (default emulator.json).
    Fit,
    /// Predict at the inputs in --input with the emulator in --bundle.
    Predict,
    /// Test NMSE of --bundle on --test-csv (or a generated test set).
    Eval,
    /// Cross-validate the number of clusters.
    Cv,
    /// Compare methods over ranks and cluster counts; writes compare.md and
    /// compare.csv into --out.
    Compare,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub benchmark: Option<BenchmarkKind>,
    #[arg(long, global = true)]
    pub mixture_params: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_csv: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_csv: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n_train: Option<usize>,
    #[arg(long, global = true)]
    pub n_test: Option<usize>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,

    #[arg(long, global = true)]
    pub method: Option<Method>,
    #[arg(long, global = true)]
    pub clusters: Option<usize>,
    #[arg(long, global = true, conflicts_with = "rho")]
    pub rank: Option<usize>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub j_max: Option<usize>,
    #[arg(long, global = true)]
    pub cv_delta: Option<f64>,

    #[arg(long, global = true)]
    pub gp_restarts: Option<usize>,
    #[arg(long, global = true)]
    pub gp_max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub gp_noise: Option<f64>,
    #[arg(long, global = true)]
    pub gp_ard: Option<bool>,
    #[arg(long, global = true)]
    pub plain_gp_ard: Option<bool>,

    #[arg(long, global = true, value_enum)]
    pub router: Option<RouterChoice>,
    #[arg(long, global = true, value_enum)]
    pub svm_kernel: Option<KernelKind>,
    #[arg(long, global = true)]
    pub svm_c: Option<f64>,
    #[arg(long, global = true)]
    pub svm_gamma: Option<f64>,
    #[arg(long, global = true)]
    pub svm_max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub svm_tol: Option<f64>,

    #[arg(long, global = true, value_delimiter = ',')]
    pub compare_methods: Option<Vec<Method>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub compare_ranks: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub compare_clusters: Option<Vec<usize>>,

    /// Saved emulator bundle (predict, eval).
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
    /// CSV with x_1..x_d columns to predict at.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Per-point prediction CSV written by eval.
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    /// CSV of retained directions written by fit.
    #[arg(long, global = true)]
    pub dump_directions: Option<PathBuf>,
    /// CSV of training-sample cluster labels written by fit.
    #[arg(long, global = true)]
    pub dump_partition: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $flags:ident; $($field:ident),* ; $($opt:ident),*) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = v; })*
        $(if let Some(v) = $flags.$opt.clone() { $cfg.$opt = Some(v); })*
    };
}

impl Flags {
    /// The file configuration (or defaults) with these flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        apply!(cfg, self;
            seed, benchmark, n_train, n_test, method, clusters, eta, folds, j_max, cv_delta,
            gp_restarts, gp_max_iter, gp_ard, plain_gp_ard, router, svm_kernel, svm_c, svm_tol,
            compare_methods, compare_ranks, compare_clusters;
            out, mixture_params, train_csv, test_csv, dim, gp_noise, svm_gamma, svm_max_iter,
            bundle, input, predictions, dump_directions, dump_partition);
        // a rank flag replaces a rho from the file and vice versa
        if let Some(r) = self.rank {
            cfg.rank = Some(r);
            cfg.rho = None;
        }
        if let Some(rho) = self.rho {
            cfg.rho = Some(rho);
            cfg.rank = None;
        }
        Ok(cfg)
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen => commands::gen(cfg, out),
        Command::Fit => commands::fit_cmd(cfg, out),
        Command::Predict => commands::predict(cfg, out),
        Command::Eval => commands::eval(cfg, out),
        Command::Cv => commands::cv(cfg, out),
        Command::Compare => commands::compare(cfg, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("casgp").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "clusters = 3\nrho = 0.95\nseed = 7\n").unwrap();
        let cli = parse(&["fit", "--config", path.to_str().unwrap(), "--rank", "2", "--seed", "9"]);
        let cfg = cli.flags.resolve().unwrap();
        assert_eq!((cfg.clusters, cfg.rank, cfg.rho, cfg.seed), (3, Some(2), None, 9));
    }

    #[test]
    fn list_flags_split_on_commas() {
        let cli = parse(&["compare", "--compare-methods", "cas,plain-gp", "--compare-ranks", "1,2"]);
        let cfg = cli.flags.resolve().unwrap();
        assert_eq!(cfg.compare_methods, vec![Method::Cas, Method::PlainGp]);
        assert_eq!(cfg.compare_ranks, vec![1, 2]);
    }

    #[test]
    fn rank_and_rho_flags_conflict() {
        let args = ["casgp", "fit", "--rank", "2", "--rho", "0.9"];
        assert!(Cli::try_parse_from(args).is_err());
    }
}
