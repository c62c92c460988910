//! CSV outputs and the timestamped run log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::Method;
use crate::error::CliError;
use crate::eval::{mean_std, ImageResult, MethodScores};

pub const NA: &str = "NA";

pub fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt6(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_else(|| NA.to_string())
}

pub const PER_IMAGE_HEADER: [&str; 10] = [
    "image_id", "occluded", "method", "seg_dsc", "seg_auc", "seg_hd95", "err_dsc", "err_auc",
    "err_nsd", "flags",
];

pub const AGGREGATE_HEADER: [&str; 12] = [
    "task",
    "method",
    "n",
    "dsc_mean",
    "dsc_std",
    "auc_mean",
    "auc_std",
    "auc_excluded",
    "hd95_mean",
    "hd95_std",
    "nsd_mean",
    "nsd_std",
];

pub const TASKS: [&str; 2] = ["segmentation", "error_estimation"];

pub fn write_per_image(path: &Path, results: &[ImageResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PER_IMAGE_HEADER)?;
    for r in results {
        for s in &r.scores {
            w.write_record([
                r.id.to_string(),
                (r.occluded as u8).to_string(),
                s.method.name().to_string(),
                f6(s.seg_dsc),
                opt6(s.seg_auc),
                f6(s.seg_hd95),
                f6(s.err_dsc),
                opt6(s.err_auc),
                f6(s.err_nsd),
                s.flags.join(";"),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One summary row of the aggregate table.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub task: &'static str,
    pub method: Method,
    pub n: usize,
    pub dsc: Option<(f64, Option<f64>)>,
    pub auc: Option<(f64, Option<f64>)>,
    pub auc_excluded: usize,
    pub hd95: Option<(f64, Option<f64>)>,
    pub nsd: Option<(f64, Option<f64>)>,
}

impl AggregateRow {
    pub fn dsc_mean(&self) -> f64 {
        self.dsc.map_or(f64::NAN, |d| d.0)
    }

    pub fn auc_mean(&self) -> f64 {
        self.auc.map_or(f64::NAN, |d| d.0)
    }
}

/// Segmentation rows for every method, then error-estimation rows, over the
/// images selected by `keep`.
pub fn aggregate(
    results: &[ImageResult],
    methods: &[Method],
    keep: impl Fn(&ImageResult) -> bool,
) -> Vec<AggregateRow> {
    let rows_for = |m: Method| -> Vec<&MethodScores> {
        results
            .iter()
            .filter(|r| keep(r))
            .flat_map(|r| r.scores.iter().filter(move |s| s.method == m))
            .collect()
    };
    let mut out = Vec::new();
    for task in TASKS {
        for &m in methods {
            let rows = rows_for(m);
            let col = |f: &dyn Fn(&MethodScores) -> f64| -> Vec<f64> { rows.iter().map(|s| f(s)).collect() };
            let seg = task == TASKS[0];
            let aucs: Vec<f64> = rows
                .iter()
                .filter_map(|s| if seg { s.seg_auc } else { s.err_auc })
                .collect();
            out.push(AggregateRow {
                task,
                method: m,
                n: rows.len(),
                dsc: mean_std(&col(&|s| if seg { s.seg_dsc } else { s.err_dsc })),
                auc: mean_std(&aucs),
                auc_excluded: rows.len() - aucs.len(),
                hd95: if seg { mean_std(&col(&|s| s.seg_hd95)) } else { None },
                nsd: if seg { None } else { mean_std(&col(&|s| s.err_nsd)) },
            });
        }
    }
    out
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<(), CliError> {
    let ms = |v: Option<(f64, Option<f64>)>| -> [String; 2] {
        match v {
            Some((m, s)) => [f6(m), opt6(s)],
            None => [NA.to_string(), NA.to_string()],
        }
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        let [dm, ds] = ms(r.dsc);
        let [am, as_] = ms(r.auc);
        let [hm, hs] = ms(r.hd95);
        let [nm, ns] = ms(r.nsd);
        w.write_record([
            r.task.to_string(),
            r.method.name().to_string(),
            r.n.to_string(),
            dm,
            ds,
            am,
            as_,
            r.auc_excluded.to_string(),
            hm,
            hs,
            nm,
            ns,
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_augmentations(path: &Path, results: &[ImageResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "image_id",
        "augmentation",
        "lambda_r",
        "spade_fraction",
        "mse_to_original",
        "null_loss",
        "null_iterations",
    ])?;
    for r in results {
        let (Some(set), Some(fit)) = (&r.augmentations, &r.null_fit) else {
            continue;
        };
        for (i, a) in set.augmented.iter().enumerate() {
            w.write_record([
                r.id.to_string(),
                i.to_string(),
                f6(a.lambda_r),
                f6(a.mask.spade_fraction()),
                f6(a.image.mse(&set.original)?),
                f6(fit.loss),
                fit.iterations.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_null_trace(path: &Path, results: &[ImageResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "iteration", "loss"])?;
    for r in results {
        if let Some(fit) = &r.null_fit {
            for (it, loss) in &fit.trace {
                w.write_record([r.id.to_string(), it.to_string(), f6(*loss)])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Append-only log; every line starts with unix seconds.
pub struct RunLog {
    file: Mutex<File>,
}

impl RunLog {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn line(&self, msg: impl AsRef<str>) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let mut f = self.file.lock().expect("log mutex poisoned");
        // logging failures must not abort a run
        let _ = writeln!(f, "{ts:.3} {}", msg.as_ref());
    }
}
