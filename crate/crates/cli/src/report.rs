use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oraclelab::study::{read_results, ResultRow, RESULT_COLUMNS};

pub const COLUMNS: [&str; 17] = [
    "experiment",
    "subject",
    "defense",
    "reaction",
    "cover_ratio",
    "cover_source",
    "leaked_fraction",
    "delta",
    "runs",
    "mean_queries",
    "mean_p",
    "max_p",
    "mean_phi_final",
    "flagged_runs",
    "mean_psnr",
    "removal_rate",
    "mean_leaves",
];

/// All `results.csv` files below `dir` in path order.
pub fn find_results(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        let entries = fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.file_name().is_some_and(|n| n == "results.csv") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

fn is_row_file(path: &Path) -> Result<bool> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.headers()?.iter().eq(RESULT_COLUMNS))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn key(r: &ResultRow) -> [String; 8] {
    let f = r.fields();
    [
        f[0].clone(),
        f[1].clone(),
        f[3].clone(),
        f[4].clone(),
        f[5].clone(),
        f[6].clone(),
        f[7].clone(),
        f[8].clone(),
    ]
}

/// Groups rows by configuration, keeping first-seen order.
pub fn aggregate(rows: &[ResultRow]) -> Vec<[String; 17]> {
    let mut order: Vec<[String; 8]> = Vec::new();
    let mut groups: HashMap<[String; 8], Vec<&ResultRow>> = HashMap::new();
    for r in rows {
        let k = key(r);
        groups
            .entry(k.clone())
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = &groups[&k];
            let p = || g.iter().filter_map(|r| r.p);
            let removed: Vec<bool> = g.iter().filter_map(|r| r.removed).collect();
            let [experiment, subject, defense, reaction, ratio, source, fraction, delta] = k;
            [
                experiment,
                subject,
                defense,
                reaction,
                ratio,
                source,
                fraction,
                delta,
                g.len().to_string(),
                cell(mean(g.iter().filter_map(|r| r.queries.map(|q| q as f64)))),
                cell(mean(p())),
                cell(p().reduce(f64::max)),
                cell(mean(g.iter().filter_map(|r| r.phi_final))),
                g.iter()
                    .filter(|r| r.flagged_at.is_some())
                    .count()
                    .to_string(),
                cell(mean(
                    g.iter().filter_map(|r| r.psnr).filter(|v| v.is_finite()),
                )),
                cell(mean(removed.iter().map(|&b| f64::from(u8::from(b))))),
                cell(mean(g.iter().filter_map(|r| r.leaves.map(|l| l as f64)))),
            ]
        })
        .collect()
}

/// Reads every per-run results file below `dir`. Files with another
/// layout (such as guard sweeps) are listed separately.
pub fn collect(dir: &Path) -> Result<(Vec<ResultRow>, Vec<PathBuf>)> {
    let mut rows = Vec::new();
    let mut other = Vec::new();
    for path in find_results(dir)? {
        if is_row_file(&path)? {
            rows.extend(
                read_results(&path).with_context(|| format!("reading {}", path.display()))?,
            );
        } else {
            other.push(path);
        }
    }
    Ok((rows, other))
}

pub fn write(path: &Path, table: &[[String; 17]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    for row in table {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
