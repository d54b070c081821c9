//! Acceptance criteria 1-9. Each test prints one `ACCEPTANCE <n>: PASS|FAIL`
//! line straight to stderr (visible without `--nocapture`) before asserting.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use casgp::benchmarks::{eval_piecewise, piecewise_region, PIECEWISE_RANKS};
use casgp::clustering::{adjusted_rand_index, cluster_training_set};
use casgp::data::{sample_box, DataSet, Sample};
use casgp::gp::{
    fit_gp, log_marginal_likelihood, log_marginal_likelihood_gradient, FitOptions, GpModel,
    KernelConfig,
};
use casgp::linalg::max_principal_angle;
use casgp::pipeline::{
    cas_decompose, cross_validate_clusters, fit, mc_projection, select_clusters, CasConfig,
    Emulator, InputDistribution, Method,
};
use casgp::subspace::{RankRule, Subspace};
use casgp_cli::commands::compare_cells;
use casgp_cli::config::{BenchmarkKind, RunConfig};
use casgp_cli::report::Cell;
use faer::Mat;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn report(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("ACCEPTANCE {criterion}: {verdict} | {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// NMSE of one comparison cell; NaN when the cell failed, so every
/// comparison involving it is false.
fn cell(cells: &[Cell], method: Method, clusters: Option<usize>) -> f64 {
    cells
        .iter()
        .find(|c| c.method == method && c.clusters == clusters)
        .and_then(|c| c.nmse.clone().ok())
        .unwrap_or(f64::NAN)
}

fn table_run(benchmark: BenchmarkKind, seed: u64, methods: Vec<Method>, clusters: Vec<usize>) -> (Vec<Cell>, Duration) {
    let cfg = RunConfig {
        benchmark,
        seed,
        compare_methods: methods,
        compare_ranks: vec![2],
        compare_clusters: clusters,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let cells = compare_cells(&cfg).unwrap();
    (cells, start.elapsed())
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

#[test]
fn criterion_1_piecewise_table() {
    let (mut cas4, mut gp, mut as_) = (vec![], vec![], vec![]);
    let mut ordered = 0;
    let mut slowest = Duration::ZERO;
    let mut lines = vec![];
    for seed in SEEDS {
        let (cells, took) = table_run(BenchmarkKind::Piecewise, seed, Method::ALL.to_vec(), vec![2, 3, 4]);
        slowest = slowest.max(took);
        let c = |j| cell(&cells, Method::Cas, Some(j));
        let g = |m| cell(&cells, m, None);
        let baselines = [g(Method::As), g(Method::Sir), g(Method::Save), g(Method::PlainGp)];
        let ok = c(4) < c(3) && c(3) < c(2) && baselines.iter().all(|&b| c(4) < b);
        ordered += ok as usize;
        lines.push(format!(
            "seed {seed}: CAS4 {} CAS3 {} CAS2 {} AS {} SIR {} SAVE {} GP {} ({:.0}s)",
            pct(c(4)), pct(c(3)), pct(c(2)), pct(baselines[0]), pct(baselines[1]),
            pct(baselines[2]), pct(baselines[3]), took.as_secs_f64()
        ));
        cas4.push(c(4));
        as_.push(baselines[0]);
        gp.push(baselines[3]);
    }
    for l in &lines {
        let _ = writeln!(std::io::stderr(), "  {l}");
    }
    let (m_cas, m_gp, m_as) = (mean(&cas4), mean(&gp), mean(&as_));
    let pass = within(m_cas, 0.12, 0.30)
        && within(m_gp, 0.55, 0.80)
        && within(m_as, 0.75, 0.95)
        && ordered == SEEDS.len()
        && slowest <= Duration::from_secs(600);
    report(
        1,
        pass,
        &format!(
            "piecewise means CAS4 {} GP {} AS {}; ordering held in {ordered}/5 seeds; slowest seed {:.0}s",
            pct(m_cas), pct(m_gp), pct(m_as), slowest.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_mixture_table() {
    let (mut cas3, mut gp, mut as_) = (vec![], vec![], vec![]);
    let mut ordered = 0;
    let mut lines = vec![];
    for seed in SEEDS {
        let methods = vec![Method::Cas, Method::As, Method::PlainGp];
        let (cells, took) = table_run(BenchmarkKind::GaussianMixture, seed, methods, vec![2, 3]);
        let c = |j| cell(&cells, Method::Cas, Some(j));
        let (a, g) = (cell(&cells, Method::As, None), cell(&cells, Method::PlainGp, None));
        ordered += (c(3) <= c(2) && c(2) < a && a < g) as usize;
        lines.push(format!(
            "seed {seed}: CAS3 {} CAS2 {} AS {} GP {} ({:.0}s)",
            pct(c(3)), pct(c(2)), pct(a), pct(g), took.as_secs_f64()
        ));
        cas3.push(c(3));
        as_.push(a);
        gp.push(g);
    }
    for l in &lines {
        let _ = writeln!(std::io::stderr(), "  {l}");
    }
    let (m_cas, m_as, m_gp) = (mean(&cas3), mean(&as_), mean(&gp));
    let pass = within(m_cas, 0.15, 0.35) && within(m_as, 0.28, 0.50) && m_gp >= 0.85 && ordered == SEEDS.len();
    report(
        2,
        pass,
        &format!(
            "mixture means CAS3 {} AS {} GP {}; ordering held in {ordered}/5 seeds",
            pct(m_cas), pct(m_as), pct(m_gp)
        ),
    );
}

fn piecewise_train(seed: u64) -> DataSet {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
    .training_set()
    .unwrap()
}

fn regions(ds: &DataSet) -> Vec<usize> {
    ds.inputs().iter().map(|x| piecewise_region(x)).collect()
}

/// Orthonormal basis of the span of the exact gradients in each region.
fn analytic_subspace(region: usize) -> Mat<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // (1-based coordinate, weight) lists, one per basis vector
    let cols: Vec<Vec<(usize, f64)>> = match region {
        1 => vec![vec![(3, s), (4, s)], vec![(5, 1.0)]],
        2 => vec![vec![(6, s), (7, s)], vec![(8, s), (9, s)]],
        3 => vec![vec![(10, s), (11, s)]],
        _ => vec![vec![(12, 1.0)], vec![(13, 1.0)]],
    };
    let mut m = Mat::zeros(50, cols.len());
    for (k, col) in cols.iter().enumerate() {
        for &(i, w) in col {
            m[(i - 1, k)] = w;
        }
    }
    m
}

#[test]
fn criterion_3_subspace_recovery() {
    let mut worst = 0.0f64;
    let mut failures = vec![];
    for seed in SEEDS {
        let ds = piecewise_train(seed);
        let truth = regions(&ds);
        let parts = cas_decompose(&ds, 4, RankRule::Ratio(0.99), 1.0).unwrap();
        let mut seen = [false; 4];
        for (members, sub) in &parts {
            let mut votes = [0usize; 4];
            for &i in members {
                votes[truth[i] - 1] += 1;
            }
            let region = (0..4).max_by_key(|&r| votes[r]).unwrap() + 1;
            seen[region - 1] = true;
            if sub.rank() != PIECEWISE_RANKS[region - 1] {
                failures.push(format!("seed {seed} region {region}: rank {}", sub.rank()));
                continue;
            }
            let angle = max_principal_angle(sub.v1(), analytic_subspace(region).as_ref()).unwrap();
            worst = worst.max(angle);
            if angle > 0.05 {
                failures.push(format!("seed {seed} region {region}: angle {angle:.3}"));
            }
        }
        if seen.iter().any(|s| !s) {
            failures.push(format!("seed {seed}: not every region has a cluster"));
        }
    }
    report(
        3,
        failures.is_empty(),
        &format!("largest principal angle {worst:.2e} rad over 5 seeds; problems: {failures:?}"),
    );
}

#[test]
fn criterion_4_cluster_recovery() {
    let aris: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let ds = piecewise_train(seed);
            let part = cluster_training_set(&ds, 4, 1.0).unwrap();
            adjusted_rand_index(&part.labels, &regions(&ds))
        })
        .collect();
    let good = aris.iter().filter(|&&a| a >= 0.95).count();
    report(4, good >= 4, &format!("ARI >= 0.95 in {good}/5 seeds: {aris:.3?}"));
}

#[test]
fn criterion_5_reduction_identity() {
    let ds = piecewise_train(1);
    let cfg = CasConfig {
        clusters: 1,
        ..CasConfig::default()
    };
    let cas = fit(&ds, Method::Cas, &cfg).unwrap();
    let global = fit(&ds, Method::As, &cfg).unwrap();
    let queries = RunConfig::default().test_set().unwrap();
    let xs: Vec<Vec<f64>> = queries.inputs().iter().take(1000).map(|x| x.to_vec()).collect();
    let a = cas.emulate_many(&xs).unwrap();
    let b = global.emulate_many(&xs).unwrap();
    let same = a.iter().zip(&b).filter(|(p, q)| p.0.to_bits() == q.0.to_bits() && p.1.to_bits() == q.1.to_bits()).count();
    report(5, xs.len() == 1000 && same == 1000, &format!("{same}/1000 predictions bitwise identical"));
}

fn gp_suite() -> Vec<String> {
    let mut problems = vec![];

    // noise-free interpolation of a smooth 1-D function
    let z: Vec<Vec<f64>> = (0..25).map(|i| vec![i as f64 / 24.0 * 4.0 - 2.0]).collect();
    let y: Vec<f64> = z.iter().map(|v| (1.3 * v[0]).sin() + 0.2 * v[0]).collect();
    let opts = FitOptions {
        fixed_noise: Some(0.0),
        ..FitOptions::default()
    };
    let gp = fit_gp(&z, &y, &opts).unwrap();
    for (zi, yi) in z.iter().zip(&y) {
        let (m, v) = gp.predict(zi).unwrap();
        if (m - yi).abs() > 1e-6 || v > 1e-6 {
            problems.push(format!("interpolation at {zi:?}: mean error {:.1e}, variance {v:.1e}", m - yi));
        }
    }

    // nonnegative variance on a noisy fit, everywhere we look
    let z2: Vec<Vec<f64>> = sample_box(60, &[-1.0, -1.0], &[1.0, 1.0], 4).unwrap();
    let y2: Vec<f64> = z2.iter().map(|v| v[0] * v[1] + 0.3 * v[0]).collect();
    let noisy = fit_gp(&z2, &y2, &FitOptions::default()).unwrap();
    let queries = sample_box(2000, &[-3.0, -3.0], &[3.0, 3.0], 5).unwrap();
    let negative = noisy.predict_many(&queries).unwrap().iter().filter(|p| !(p.1 >= 0.0)).count();
    if negative > 0 {
        problems.push(format!("{negative} negative variances"));
    }

    // marginal-likelihood gradient against central differences in log space
    let cfg = KernelConfig::new(1.5, vec![0.7, 1.3], 1e-3).unwrap();
    let (_, grad) = log_marginal_likelihood_gradient(&z2, &y2, 0.1, &cfg, true).unwrap();
    let mut logs: Vec<f64> = cfg.lengthscales.iter().map(|l| l.ln()).collect();
    logs.push(cfg.signal_variance.ln());
    logs.push(cfg.noise_variance.ln());
    let lml = |p: &[f64]| {
        let c = KernelConfig::new(p[2].exp(), vec![p[0].exp(), p[1].exp()], p[3].exp()).unwrap();
        log_marginal_likelihood(&z2, &y2, 0.1, &c).unwrap()
    };
    let h = 1e-5;
    for k in 0..logs.len() {
        let mut up = logs.clone();
        let mut down = logs.clone();
        up[k] += h;
        down[k] -= h;
        let fd = (lml(&up) - lml(&down)) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-6);
        if rel > 1e-4 {
            problems.push(format!("gradient {k}: analytic {} vs difference {fd} (rel {rel:.1e})", grad[k]));
        }
    }

    // n = 1 closed forms
    let unit = KernelConfig::new(1.0, vec![1.0], 0.0).unwrap();
    let lml0 = log_marginal_likelihood(&[vec![0.0]], &[0.0], 0.0, &unit).unwrap();
    let lml1 = log_marginal_likelihood(&[vec![0.0]], &[1.0], 0.0, &unit).unwrap();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    if (lml0 + half_ln_2pi).abs() > 1e-8 || (lml1 + 0.5 + half_ln_2pi).abs() > 1e-8 {
        problems.push(format!("n=1 marginal likelihoods {lml0}, {lml1}"));
    }
    let (z0, y0, mu) = (0.4, 2.0, 0.5);
    let one = GpModel::new(vec![vec![z0]], vec![y0], mu, unit).unwrap();
    let (m, v) = one.predict(&[z0 + 1.0]).unwrap();
    let e = (-0.5f64).exp();
    if (m - (mu + (y0 - mu) * e)).abs() > 1e-10 || (v - (1.0 - (-1.0f64).exp())).abs() > 1e-10 {
        problems.push(format!("n=1 posterior ({m}, {v})"));
    }
    problems
}

#[test]
fn criterion_6_gp_exactness() {
    let problems = gp_suite();
    report(
        6,
        problems.is_empty(),
        &format!("interpolation, variance sign, likelihood gradient, n=1 forms; problems: {problems:?}"),
    );
}

#[test]
fn criterion_7_cv_plateau() {
    let table = [0.364, 0.328, 0.313, 0.303, 0.302].map(Some);
    let synthetic = select_clusters(&table, 0.02).unwrap();

    let mut chosen = vec![];
    for seed in 1..=10u64 {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let ds = cfg.training_set().unwrap();
        let start = Instant::now();
        let rep = cross_validate_clusters(&ds, 5, 10, &cfg.cas_config().unwrap(), cfg.cv_delta).unwrap();
        let _ = writeln!(
            std::io::stderr(),
            "  seed {seed}: J* = {} from {:?} ({:.0}s)",
            rep.chosen,
            rep.mean_nmse.iter().map(|v| v.map(pct)).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        );
        chosen.push(rep.chosen);
    }
    let fours = chosen.iter().filter(|&&j| j == 4).count();
    report(
        7,
        synthetic == 4 && fours >= 8,
        &format!("synthetic table gives J*={synthetic}; live 10-fold CV chose J=4 in {fours}/10 seeds {chosen:?}"),
    );
}

/// Sub-box of `[-1, 1]^50` covering one piecewise region.
fn region_box(region: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut lo, mut hi) = (vec![-1.0; 50], vec![1.0; 50]);
    let (x1_pos, x2_pos) = match region {
        1 => (false, false),
        2 => (false, true),
        3 => (true, false),
        _ => (true, true),
    };
    for (i, pos) in [(0, x1_pos), (1, x2_pos)] {
        if pos {
            lo[i] = 0.0;
        } else {
            hi[i] = -1e-12;
        }
    }
    (lo, hi)
}

fn projection_examples() -> Vec<String> {
    let mut problems = vec![];
    let unit_box = |d: usize| InputDistribution::UniformBox {
        lo: vec![-1.0; d],
        hi: vec![1.0; d],
    };
    let split = |q: &Mat<f64>, r: usize| {
        let d = q.nrows();
        (q.as_ref().subcols(0, r).to_owned(), q.as_ref().subcols(r, d - r).to_owned())
    };

    // ridge function: exact for any sample size
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let q = Mat::from_fn(3, 3, |i, j| match (i, j) {
        (0, 0) | (1, 0) | (0, 1) => s,
        (1, 1) => -s,
        (2, 2) => 1.0,
        _ => 0.0,
    });
    let (v1, v2) = split(&q, 1);
    for n_mc in [1, 10, 1000] {
        let g = mc_projection(|x| Ok(((x[0] + x[1]) * s).sin()), v1.as_ref(), v2.as_ref(), &[0.3], n_mc, 1, &unit_box(3)).unwrap();
        if (g - 0.3f64.sin()).abs() > 1e-12 {
            problems.push(format!("ridge, n_mc={n_mc}: {g}"));
        }
    }

    // linear function: the orthogonal part averages out
    let a = [1.0, 2.0, -2.0];
    let q = Mat::from_fn(3, 3, |i, j| match j {
        0 => a[i] / 3.0,
        1 => [2.0, 1.0, 2.0][i] / 3.0,
        _ => [2.0, -2.0, -1.0][i] / 3.0,
    });
    let (v1, v2) = split(&q, 1);
    let lin = |x: &[f64]| Ok(a.iter().zip(x).map(|(p, q)| p * q).sum());
    let g = mc_projection(lin, v1.as_ref(), v2.as_ref(), &[0.4], 10_000, 2, &unit_box(3)).unwrap();
    if (g - 1.2).abs() > 1e-9 {
        problems.push(format!("linear: {g} vs 1.2"));
    }

    // x1^2 + x2^2 on [-1, 1]^2 along e1: z^2 + 1/3
    let (v1, v2) = split(&Mat::<f64>::identity(2, 2), 1);
    let n = 10_000;
    let z = 0.5;
    let g = mc_projection(|x| Ok(x[0] * x[0] + x[1] * x[1]), v1.as_ref(), v2.as_ref(), &[z], n, 3, &unit_box(2)).unwrap();
    let se = (4.0f64 / 45.0 / n as f64).sqrt();
    if (g - (z * z + 1.0 / 3.0)).abs() > 3.0 * se {
        problems.push(format!("quadratic: {g} vs {}", z * z + 1.0 / 3.0));
    }
    problems
}

#[test]
fn criterion_8_projection_oracle() {
    let mut problems = projection_examples();
    let mut summary = vec![];
    let f = |x: &[f64]| eval_piecewise(x).map(|p| p.0);
    for region in 1..=4 {
        let (lo, hi) = region_box(region);
        let domain = InputDistribution::UniformBox { lo: lo.clone(), hi: hi.clone() };
        let samples: Vec<Sample> = sample_box(500, &lo, &hi, 10 + region as u64)
            .unwrap()
            .into_iter()
            .map(|x| {
                let (y, g) = eval_piecewise(&x).unwrap();
                Sample::new(x, y, Some(g))
            })
            .collect();
        let full = Subspace::from_samples(&samples, RankRule::Fixed(4)).unwrap();
        let total: f64 = full.eigenvalues().iter().sum();
        let tests = sample_box(200, &lo, &hi, 20 + region as u64).unwrap();
        let scale = mean(&tests.iter().map(|x| f(x).unwrap().powi(2)).collect::<Vec<_>>());

        let mut prev: Option<(f64, f64)> = None;
        let mut mses = vec![];
        for r in 1..=4 {
            let sub = full.with_rank(r).unwrap();
            let errs: Vec<f64> = tests
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let z1 = sub.project(x).unwrap();
                    let g = mc_projection(f, sub.v1(), sub.v2(), &z1, 30, i as u64, &domain).unwrap();
                    (f(x).unwrap() - g).powi(2)
                })
                .collect();
            let mse = mean(&errs);
            let var = errs.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
            let se = (var / errs.len() as f64).sqrt();
            if let Some((pm, pse)) = prev {
                if mse > pm + 2.0 * (se * se + pse * pse).sqrt() {
                    problems.push(format!("region {region}: MSE rose from {pm:.3e} to {mse:.3e} at r={r}"));
                }
            }
            if sub.tail() <= 1e-12 * total && mse > 1e-12 * scale {
                problems.push(format!("region {region}, r={r}: zero tail but MSE {mse:.3e}"));
            }
            prev = Some((mse, se));
            mses.push(format!("{mse:.1e}"));
        }
        summary.push(format!("region {region} MSE by r {mses:?}"));
    }
    report(
        8,
        problems.is_empty(),
        &format!("three projection examples; {}; problems: {problems:?}", summary.join(", ")),
    );
}

fn casgp(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_casgp"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Every output of every command, in a fixed order.
fn run_all_commands(dir: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::write(
        dir.join("run.toml"),
        "seed = 3\nn_train = 200\nn_test = 300\ngp_restarts = 2\ngp_max_iter = 40\n\
         folds = 3\nj_max = 3\ncompare_ranks = [1, 2]\ncompare_clusters = [2]\n",
    )
    .unwrap();
    let with = |args: &[&'static str]| [&["--config", "run.toml"][..], args].concat();
    let mut outputs = vec![
        ("gen".to_string(), casgp(dir, &with(&["gen", "--out", "data"]))),
        ("fit".to_string(), casgp(dir, &with(&["fit", "--out", "em.json", "--dump-directions", "dirs.csv", "--dump-partition", "part.csv"]))),
        ("predict".to_string(), casgp(dir, &with(&["predict", "--bundle", "em.json", "--input", "data/test.csv"]))),
        ("eval".to_string(), casgp(dir, &with(&["eval", "--bundle", "em.json", "--test-csv", "data/test.csv", "--predictions", "pred.csv"]))),
        ("cv".to_string(), casgp(dir, &with(&["cv", "--out", "cv.csv"]))),
        ("compare".to_string(), casgp(dir, &with(&["compare", "--out", "report"]))),
    ];
    for f in [
        "data/train.csv", "data/test.csv", "em.json", "dirs.csv", "part.csv", "pred.csv",
        "cv.csv", "report/compare.md", "report/compare.csv",
    ] {
        outputs.push((f.to_string(), std::fs::read(dir.join(f)).unwrap()));
    }
    outputs
}

#[test]
fn criterion_9_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_all_commands(a.path());
    let second = run_all_commands(b.path());
    let differing: Vec<&String> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| &x.0)
        .collect();
    report(
        9,
        differing.is_empty(),
        &format!("{} outputs of gen/fit/predict/eval/cv/compare compared bytewise; differing: {differing:?}", first.len()),
    );
}

#[test]
fn clustered_emulator_is_used_for_the_cas_rows() {
    // guards criterion 1 and 2 against silently comparing global fits
    let cfg = RunConfig {
        n_train: 120,
        clusters: 2,
        gp_restarts: 1,
        gp_max_iter: 20,
        ..RunConfig::default()
    };
    let em = fit(&cfg.training_set().unwrap(), Method::Cas, &cfg.cas_config().unwrap()).unwrap();
    assert!(matches!(em, Emulator::Clustered(ref e) if e.clusters() == 2));
}
