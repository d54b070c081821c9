//! Command implementations. Each is a thin layer over `casgp::pipeline`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use casgp::data::save_dataset;
use casgp::pipeline::{
    cross_validate_clusters, fit, load_emulator, nmse, save_emulator, Emulator, Method,
};
use casgp::subspace::RankRule;
use casgp::pipeline::CasConfig;
use faer::MatRef;

use crate::config::{BenchmarkKind, RunConfig};
use crate::error::{CliError, Result};
use crate::report::{self, Cell};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing {key} (flag --{})", key.replace('_', "-"))))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| CliError::io("<stdout>", e))
}

/// Writes `train.csv` (with gradients) and `test.csv` into the output directory.
pub fn gen(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    if cfg.benchmark == BenchmarkKind::Csv {
        return Err(CliError::Usage("gen needs benchmark = piecewise or gaussian-mixture".into()));
    }
    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (name, ds) in [("train.csv", cfg.training_set()?), ("test.csv", cfg.test_set()?)] {
        let path = dir.join(name);
        save_dataset(&ds, &path)?;
        say(out, format_args!("wrote {} ({} samples)", path.display(), ds.len()))?;
    }
    Ok(())
}

/// Fits `cfg.method` on the training data and saves the bundle.
pub fn fit_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let train = cfg.training_set()?;
    let em = fit(&train, cfg.method, &cfg.cas_config()?)?;
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("emulator.json"));
    save_emulator(&em, &path)?;
    if let Some(p) = &cfg.dump_directions {
        write_csv(p, &direction_rows(&em))?;
    }
    if let Some(p) = &cfg.dump_partition {
        write_csv(p, &partition_rows(&em, train.len()))?;
    }
    let clusters = match &em {
        Emulator::Clustered(e) => e.clusters(),
        Emulator::Global(_) => 1,
    };
    say(
        out,
        format_args!(
            "fitted {} on {} samples ({clusters} cluster(s)), saved {}",
            cfg.method,
            train.len(),
            path.display()
        ),
    )
}

fn push_columns(rows: &mut Vec<Vec<String>>, cluster: usize, m: MatRef<'_, f64>) {
    for k in 0..m.ncols() {
        let mut row = vec![cluster.to_string(), (k + 1).to_string()];
        row.extend((0..m.nrows()).map(|i| format!("{:?}", m[(i, k)])));
        rows.push(row);
    }
}

/// One row per retained direction: `cluster,direction,x_1..x_d`.
fn direction_rows(em: &Emulator) -> Vec<Vec<String>> {
    let mut header = vec!["cluster".to_string(), "direction".to_string()];
    header.extend((1..=em.dim()).map(|i| format!("x_{i}")));
    let mut rows = vec![header];
    match em {
        Emulator::Clustered(e) => {
            for (c, local) in e.locals.iter().enumerate() {
                push_columns(&mut rows, c + 1, local.subspace.v1());
            }
        }
        Emulator::Global(g) => push_columns(&mut rows, 1, g.directions.as_ref()),
    }
    rows
}

/// `index,label` for every training sample (0-based index, 1-based label).
fn partition_rows(em: &Emulator, n: usize) -> Vec<Vec<String>> {
    let mut labels = vec![1usize; n];
    if let Emulator::Clustered(e) = em {
        for (c, local) in e.locals.iter().enumerate() {
            for &i in &local.members {
                labels[i] = c + 1;
            }
        }
    }
    let mut rows = vec![vec!["index".to_string(), "label".to_string()]];
    rows.extend(labels.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]));
    rows
}

/// Reads the `x_*` columns of a CSV; any other columns are ignored.
fn read_inputs(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let parse = |line: u64, message: String| {
        CliError::from(casgp::Error::Parse {
            path: path.to_path_buf(),
            line: line as usize,
            message,
        })
    };
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let head = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let cols: Vec<usize> = (1..=dim)
        .map(|i| {
            let name = format!("x_{i}");
            head.iter()
                .position(|h| h == name)
                .ok_or_else(|| parse(1, format!("missing column {name}; emulator expects {dim} inputs")))
        })
        .collect::<Result<_>>()?;
    let extra = head.iter().filter(|h| h.starts_with("x_")).count();
    if extra != dim {
        return Err(parse(1, format!("{extra} input columns, emulator expects {dim}")));
    }
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let x = cols
            .iter()
            .map(|&c| {
                let cell = rec.get(c).unwrap_or("");
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse(line, format!("column {}: `{cell}` is not a finite number", c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        xs.push(x);
    }
    Ok(xs)
}

/// Predictions for the inputs in `cfg.input`: `mean,variance,cluster`.
pub fn predict(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let em = load_emulator(required(&cfg.bundle, "bundle")?)?;
    let input = required(&cfg.input, "input")?;
    let xs = read_inputs(input, em.dim())?;
    let mut rows = vec![vec!["mean".to_string(), "variance".to_string(), "cluster".to_string()]];
    for (m, v, c) in em.emulate_many(&xs)? {
        rows.push(vec![format!("{m:?}"), format!("{v:?}"), c.to_string()]);
    }
    match &cfg.out {
        Some(p) => {
            write_csv(p, &rows)?;
            say(out, format_args!("wrote {} predictions to {}", xs.len(), p.display()))
        }
        None => {
            for r in &rows {
                say(out, format_args!("{}", r.join(",")))?;
            }
            Ok(())
        }
    }
}

/// Test NMSE of a saved emulator; optionally writes per-point predictions.
pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let em = load_emulator(required(&cfg.bundle, "bundle")?)?;
    let test = match &cfg.test_csv {
        Some(p) => casgp::data::load_dataset(p)?,
        None => cfg.test_set()?,
    };
    let xs: Vec<Vec<f64>> = test.inputs().iter().map(|x| x.to_vec()).collect();
    let preds = em.emulate_many(&xs)?;
    let truths = test.outputs();
    let means: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let value = nmse(&means, &truths)?;
    if let Some(p) = &cfg.predictions {
        let mut rows = vec![["y", "mean", "variance", "cluster"].map(String::from).to_vec()];
        for ((m, v, c), y) in preds.iter().zip(&truths) {
            rows.push(vec![format!("{y:?}"), format!("{m:?}"), format!("{v:?}"), c.to_string()]);
        }
        write_csv(p, &rows)?;
    }
    say(out, format_args!("nmse {value:?}"))
}

/// k-fold cross-validation of the cluster count.
pub fn cv(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    cfg.validate()?;
    let train = cfg.training_set()?;
    let report = cross_validate_clusters(&train, cfg.j_max, cfg.folds, &cfg.cas_config()?, cfg.cv_delta)?;
    if let Some(p) = &cfg.out {
        write_csv(p, &report::cv_csv(&report))?;
    }
    say(out, format_args!("{}", report::cv_markdown(&report).trim_end()))
}

fn score(train: &casgp::data::DataSet, test: &casgp::data::DataSet, method: Method, cfg: &CasConfig) -> Result<f64, String> {
    let em = fit(train, method, cfg).map_err(|e| e.to_string())?;
    casgp::pipeline::test_nmse(&em, test).map_err(|e| e.to_string())
}

/// Every (method, rank, J) cell of the configured grid, in table order.
pub fn compare_cells(cfg: &RunConfig) -> Result<Vec<Cell>> {
    cfg.validate()?;
    if cfg.compare_ranks.contains(&0) || cfg.compare_clusters.contains(&0) {
        return Err(CliError::Usage("compare ranks and cluster counts must be positive".into()));
    }
    let train = cfg.training_set()?;
    let test = cfg.test_set()?;
    let base = cfg.cas_config()?;

    let mut plan: Vec<(Method, Option<usize>, Option<usize>)> = Vec::new();
    for &r in &cfg.compare_ranks {
        for &m in &cfg.compare_methods {
            match m {
                Method::Cas => plan.extend(cfg.compare_clusters.iter().map(|&j| (m, Some(j), Some(r)))),
                Method::PlainGp => {}
                _ => plan.push((m, None, Some(r))),
            }
        }
    }
    if cfg.compare_methods.contains(&Method::PlainGp) {
        plan.push((Method::PlainGp, None, None));
    }

    let mut cells = Vec::with_capacity(plan.len());
    for (method, clusters, rank) in plan {
        let cell_cfg = CasConfig {
            clusters: clusters.unwrap_or(1),
            rank: RankRule::Fixed(rank.unwrap_or(1)),
            ..base.clone()
        };
        let start = Instant::now();
        let nmse = score(&train, &test, method, &cell_cfg);
        log::info!(
            "{method} J={} r={}: {:?} in {:.1?}",
            opt(clusters),
            opt(rank),
            nmse,
            start.elapsed()
        );
        cells.push(Cell {
            method,
            clusters,
            rank,
            nmse,
        });
    }
    Ok(cells)
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

/// Runs the comparison grid and writes `compare.md` and `compare.csv`.
pub fn compare(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let cells = compare_cells(cfg)?;
    let md = report::compare_markdown(&cells, &cfg.to_toml());
    let dir = out_dir(cfg);
    write_text(&dir.join("compare.md"), &md)?;
    write_csv(&dir.join("compare.csv"), &report::compare_csv(&cells))?;
    say(out, format_args!("{}", md.trim_end()))
}
