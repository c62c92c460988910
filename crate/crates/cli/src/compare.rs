//! Merges the aggregate tables of several runs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::eval::mean_std;
use crate::report::{f6, AGGREGATE_HEADER, NA};

/// Columns of the aggregate table that are merged, by metric name.
const METRICS: [(&str, usize); 4] = [("dsc", 3), ("auc", 5), ("hd95", 8), ("nsd", 10)];

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub seed: Option<u64>,
    /// Test-set occlusion opacity, the x axis of the plots.
    pub difficulty: Option<f64>,
    /// `(task, method, metric) -> value`, in file order.
    pub values: Vec<((String, String, String), Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub task: String,
    pub method: String,
    pub metric: String,
    pub per_run: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub labels: Vec<String>,
    pub rows: Vec<CompareRow>,
}

pub fn read_run(dir: &Path) -> Result<RunSummary, CliError> {
    let path = dir.join("aggregate.csv");
    if !path.exists() {
        return Err(CliError::Missing { path });
    }
    let mut r = csv::Reader::from_path(&path)?;
    if r.headers()?.iter().ne(AGGREGATE_HEADER) {
        return Err(CliError::Schema(format!(
            "{}: header differs from the aggregate schema",
            path.display()
        )));
    }
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != AGGREGATE_HEADER.len() {
            return Err(CliError::Schema(format!("{}: short row", path.display())));
        }
        for (metric, col) in METRICS {
            let cell = &rec[col];
            let v = if cell == NA {
                None
            } else {
                Some(cell.parse().map_err(|_| {
                    CliError::Schema(format!("{}: bad number {cell:?}", path.display()))
                })?)
            };
            values.push(((rec[0].to_string(), rec[1].to_string(), metric.to_string()), v));
        }
    }
    let cfg_path = dir.join("config.resolved.toml");
    let cfg = if cfg_path.exists() {
        Some(RunConfig::load(&cfg_path)?)
    } else {
        None
    };
    Ok(RunSummary {
        label: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        seed: cfg.as_ref().map(|c| c.seed),
        difficulty: cfg.as_ref().map(|c| c.data.test.occlusion),
        values,
    })
}

pub fn merge(runs: &[RunSummary]) -> Result<CompareTable, CliError> {
    let first = runs
        .first()
        .ok_or_else(|| CliError::Other("compare needs at least one run".into()))?;
    let keys: Vec<_> = first.values.iter().map(|(k, _)| k.clone()).collect();
    for r in &runs[1..] {
        let other: Vec<_> = r.values.iter().map(|(k, _)| k.clone()).collect();
        if other != keys {
            return Err(CliError::Schema(format!(
                "run {} has different rows than run {}",
                r.label, first.label
            )));
        }
    }
    let seeds: BTreeSet<_> = runs.iter().filter_map(|r| r.seed).collect();
    let by_seed = seeds.len() == runs.len();
    let labels: Vec<String> = runs
        .iter()
        .map(|r| match (by_seed, r.seed) {
            (true, Some(s)) => format!("seed_{s}"),
            _ => r.label.clone(),
        })
        .collect();
    let rows = keys
        .iter()
        .enumerate()
        .map(|(i, (task, method, metric))| {
            let per_run: Vec<Option<f64>> = runs.iter().map(|r| r.values[i].1).collect();
            let present: Vec<f64> = per_run.iter().flatten().copied().collect();
            let (mean, std) = match mean_std(&present) {
                Some((m, s)) => (Some(m), s),
                None => (None, None),
            };
            CompareRow {
                task: task.clone(),
                method: method.clone(),
                metric: metric.clone(),
                per_run,
                mean,
                std,
            }
        })
        .collect();
    Ok(CompareTable { labels, rows })
}

pub fn write_table(path: &Path, t: &CompareTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["task".to_string(), "method".into(), "metric".into()];
    header.extend(t.labels.iter().cloned());
    header.extend(["mean".to_string(), "std".to_string()]);
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(f6).unwrap_or_else(|| NA.to_string());
    for r in &t.rows {
        let mut rec = vec![r.task.clone(), r.method.clone(), r.metric.clone()];
        rec.extend(r.per_run.iter().map(|v| cell(*v)));
        rec.push(cell(r.mean));
        rec.push(cell(r.std));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Line chart of one metric against test difficulty, one line per method.
pub fn svg_plot(title: &str, xs: &[f64], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let ys: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().flatten().copied()).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}">{x0:.2}</text>"#, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.2}</text>"#, w - m, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.2}</text>"#, m - 4.0, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.2}</text>"#, m - 4.0, m + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">test occlusion</text>"#, w / 2.0, h - 8.0);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    for (k, (name, v)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = order
            .iter()
            .filter_map(|&i| v[i].map(|y| format!("{:.2},{:.2}", px(xs[i]), py(y))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - m + 4.0,
            m + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `compare.csv` and, when `plot` is set, `plots/<task>_<metric>.svg`.
pub fn compare_report(
    run_dirs: &[PathBuf],
    out: &Path,
    plot: bool,
) -> Result<CompareTable, CliError> {
    let runs = run_dirs
        .iter()
        .map(|d| read_run(d))
        .collect::<Result<Vec<_>, _>>()?;
    let table = merge(&runs)?;
    crate::artifacts::ensure_dir(out)?;
    write_table(&out.join("compare.csv"), &table)?;
    if plot {
        let dir = out.join("plots");
        crate::artifacts::ensure_dir(&dir)?;
        let xs: Vec<f64> = runs
            .iter()
            .enumerate()
            .map(|(i, r)| r.difficulty.unwrap_or(i as f64))
            .collect();
        let mut groups: Vec<(String, String)> = Vec::new();
        for r in &table.rows {
            let key = (r.task.clone(), r.metric.clone());
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
        for (task, metric) in groups {
            let series: Vec<(String, Vec<Option<f64>>)> = table
                .rows
                .iter()
                .filter(|r| r.task == task && r.metric == metric)
                .map(|r| (r.method.clone(), r.per_run.clone()))
                .collect();
            if series.iter().all(|(_, v)| v.iter().all(Option::is_none)) {
                continue;
            }
            let path = dir.join(format!("{task}_{metric}.svg"));
            std::fs::write(&path, svg_plot(&format!("{task} {metric}"), &xs, &series))
                .map_err(|e| CliError::io(&path, e))?;
        }
    }
    Ok(table)
}
