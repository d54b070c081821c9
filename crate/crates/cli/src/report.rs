//! Markdown and CSV renderings of cross-validation and comparison results.

use std::fmt::Write as _;

use casgp::pipeline::{CvReport, Method};

/// One fitted-and-scored emulator in a comparison run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: Method,
    /// Cluster count, for the clustered method.
    pub clusters: Option<usize>,
    /// Reduced dimension; the plain GP has none.
    pub rank: Option<usize>,
    pub nmse: Result<f64, String>,
}

impl Cell {
    fn column(&self) -> String {
        match (self.method, self.clusters) {
            (Method::Cas, Some(j)) => format!("CAS J={j}"),
            (Method::PlainGp, _) => "GP".into(),
            (m, _) => m.name().to_uppercase(),
        }
    }
}

fn percent(v: &Result<f64, String>) -> String {
    match v {
        Ok(v) => format!("{:.2}%", 100.0 * v),
        Err(_) => "failed".into(),
    }
}

fn opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len(), 3]).max().unwrap())
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:>w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|&w| format!("{}:", "-".repeat(w - 1))).collect();
    out.push_str(&format!("| {} |\n", rule.join(" | ")));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Methods as columns, ranks as rows; the plain GP fills the first row only.
pub fn compare_markdown(cells: &[Cell], config_toml: &str) -> String {
    let mut columns: Vec<String> = Vec::new();
    for c in cells {
        let name = c.column();
        if !columns.contains(&name) {
            columns.push(name);
        }
    }
    let mut ranks: Vec<usize> = cells.iter().filter_map(|c| c.rank).collect();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.is_empty() {
        ranks.push(0);
    }

    let mut header = vec!["r".to_string()];
    header.extend(columns.iter().cloned());
    let rows: Vec<Vec<String>> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut row = vec![if r == 0 { String::new() } else { r.to_string() }];
            for col in &columns {
                let hit = cells.iter().find(|c| {
                    c.column() == *col && (c.rank == Some(r) || (c.rank.is_none() && i == 0))
                });
                row.push(hit.map(|c| percent(&c.nmse)).unwrap_or_default());
            }
            row
        })
        .collect();

    let mut out = String::from("# NMSE comparison\n\n");
    out.push_str(&markdown_table(&header, &rows));
    let failures: Vec<&Cell> = cells.iter().filter(|c| c.nmse.is_err()).collect();
    if !failures.is_empty() {
        out.push_str("\nFailed cells:\n\n");
        for c in failures {
            let msg = c.nmse.as_ref().unwrap_err();
            let _ = writeln!(out, "- {}, r={}: {msg}", c.column(), opt(c.rank));
        }
    }
    let _ = write!(out, "\n## Configuration\n\n```toml\n{config_toml}```\n");
    out
}

pub fn compare_csv(cells: &[Cell]) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["method", "clusters", "rank", "nmse", "error"]
        .into_iter()
        .map(String::from)
        .collect()];
    for c in cells {
        let (v, e) = match &c.nmse {
            Ok(v) => (format!("{v:?}"), String::new()),
            Err(e) => (String::new(), e.clone()),
        };
        rows.push(vec![c.method.name().into(), opt(c.clusters), opt(c.rank), v, e]);
    }
    rows
}

pub fn cv_markdown(report: &CvReport) -> String {
    let header: Vec<String> = ["J", "mean NMSE", "folds used"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .mean_nmse
        .iter()
        .zip(&report.folds_used)
        .enumerate()
        .map(|(j, (v, &used))| {
            let mark = if j + 1 == report.chosen { " *" } else { "" };
            vec![
                format!("{}{mark}", j + 1),
                v.map(|v| format!("{:.2}%", 100.0 * v)).unwrap_or_else(|| "failed".into()),
                used.to_string(),
            ]
        })
        .collect();
    let mut out = format!("# {}-fold cross-validation\n\n", report.folds);
    out.push_str(&markdown_table(&header, &rows));
    let _ = writeln!(
        out,
        "\nSelected J = {} (plateau tolerance {})",
        report.chosen, report.delta
    );
    out
}

pub fn cv_csv(report: &CvReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["clusters", "mean_nmse", "folds_used", "chosen"]
        .into_iter()
        .map(String::from)
        .collect()];
    for (j, (v, used)) in report.mean_nmse.iter().zip(&report.folds_used).enumerate() {
        rows.push(vec![
            (j + 1).to_string(),
            v.map(|v| format!("{v:?}")).unwrap_or_default(),
            used.to_string(),
            (j + 1 == report.chosen).to_string(),
        ]);
    }
    rows
}
