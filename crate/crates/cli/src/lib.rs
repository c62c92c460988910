//! Experiment runner: trains the toy models, generates data, runs the
//! baseline, geometric TTA and TTGA, and writes CSV reports.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod error;
pub mod eval;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::artifacts::{
    build_denoiser, build_segmenter, ensure_dir, load_denoiser, load_segmenter, save_dataset,
    save_denoiser, save_segmenter, test_scenes, train_scenes, DenoiserArtifact,
};
use crate::config::{Method, Overrides, RunConfig};
use crate::eval::{Evaluator, ImageResult};
use crate::report::RunLog;

pub use crate::config::RunConfig as Config;
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ttga", version, about = "Test-time generative augmentation on toy segmentation scenes")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Write PGM images of inputs, augmentations and maps.
    #[arg(long, global = true)]
    pub dump_images: bool,
    /// Comma-separated subset of baseline,tta,ttga.
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// bernoulli, attention or hybrid.
    #[arg(long, global = true)]
    pub mask_scheme: Option<String>,
    #[arg(long, global = true)]
    pub resample_masks_per_step: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit or train the diffusion denoiser on the training scenes.
    TrainDenoiser,
    /// Train the toy segmenter on the training scenes.
    TrainSegmenter,
    /// Write the test scenes with a manifest.
    MakeData,
    /// Generate TTGA augmentations for the test scenes.
    Augment,
    /// Score the selected methods with existing models.
    Evaluate,
    /// Train, generate data and evaluate in one run.
    FullPipeline,
    /// Merge the aggregate tables of several runs.
    Compare {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Also write SVG plots of each metric against test difficulty.
        #[arg(long)]
        plot: bool,
    },
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            dump_images: self.dump_images,
            methods: self.methods.clone(),
            mask_scheme: self.mask_scheme.clone(),
            resample_masks_per_step: self.resample_masks_per_step,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            CliError::Other(String::new())
        }
        _ => CliError::config("arguments", e.to_string()),
    })?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(p) = &cli.config {
        if !p.exists() {
            return Err(CliError::Missing { path: p.clone() });
        }
    }
    if let Command::Compare { run_dirs, plot } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("compare"));
        compare::compare_report(run_dirs, &out, *plot)?;
        return Ok(());
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides())?;
    let runner = Runner::new(cfg)?;
    match cli.command {
        Command::TrainDenoiser => runner.train_denoiser(),
        Command::TrainSegmenter => runner.train_segmenter(),
        Command::MakeData => runner.make_data(),
        Command::Augment => runner.augment(),
        Command::Evaluate => runner.evaluate(),
        Command::FullPipeline => runner.full_pipeline(),
        Command::Compare { .. } => unreachable!("handled above"),
    }
}

pub struct Runner {
    pub cfg: RunConfig,
    pub schedule: ttga_core::NoiseSchedule,
    log: RunLog,
}

impl Runner {
    /// Creates the output directory and writes the resolved configuration.
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        ensure_dir(&cfg.out)?;
        let resolved = cfg.out.join("config.resolved.toml");
        std::fs::write(&resolved, cfg.to_toml()).map_err(|e| CliError::io(&resolved, e))?;
        let log = RunLog::open(&cfg.out.join("run.log"))?;
        let schedule = cfg.schedule()?;
        log.line(format!("seed {} out {}", cfg.seed, cfg.out.display()));
        Ok(Self { cfg, schedule, log })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    pub fn train_denoiser(&self) -> Result<(), CliError> {
        let train = train_scenes(&self.cfg);
        let art = build_denoiser(&self.cfg, &train, &self.schedule)?;
        let path = self.out("denoiser.ckpt");
        save_denoiser(&path, &art)?;
        self.log.line(format!("denoiser written to {}", path.display()));
        Ok(())
    }

    pub fn train_segmenter(&self) -> Result<(), CliError> {
        let train = train_scenes(&self.cfg);
        let seg = build_segmenter(&self.cfg, &train)?;
        let path = self.out("segmenter.txt");
        save_segmenter(&path, &seg)?;
        self.log.line(format!("segmenter written to {}", path.display()));
        Ok(())
    }

    pub fn make_data(&self) -> Result<(), CliError> {
        let scenes = artifacts::generate_test_scenes(&self.cfg);
        save_dataset(&self.cfg.out, &scenes)?;
        self.log.line(format!("{} scenes written", scenes.len()));
        Ok(())
    }

    fn required(&self, p: &Option<PathBuf>, field: &str) -> Result<PathBuf, CliError> {
        p.clone()
            .ok_or_else(|| CliError::config(field, "required by this command"))
    }

    fn ttga_config(&self) -> Result<ttga_core::TtgaConfig, CliError> {
        let t = self.cfg.ttga_config()?;
        t.validate(&self.schedule)?;
        Ok(t)
    }

    pub fn augment(&self) -> Result<(), CliError> {
        let den = load_denoiser(&self.required(&self.cfg.paths.denoiser, "paths.denoiser")?)?;
        let scenes = test_scenes(&self.cfg)?;
        let ev = Evaluator {
            segmenter: None,
            denoiser: Some(&den),
            schedule: &self.schedule,
            ttga: self.ttga_config()?,
            run_seed: self.cfg.seed,
            tta_views: self.cfg.tta.views,
            methods: vec![Method::Ttga],
            keep_maps: false,
        };
        let results = ev.run_all(&scenes, self.cfg.workers, Evaluator::augment_image)?;
        self.write_augmentation_outputs(&results)?;
        self.log.line(format!("augmented {} scenes", results.len()));
        Ok(())
    }

    pub fn evaluate(&self) -> Result<(), CliError> {
        let seg = load_segmenter(&self.required(&self.cfg.paths.segmenter, "paths.segmenter")?)?;
        let den = if self.cfg.methods.contains(&Method::Ttga) {
            Some(load_denoiser(&self.required(&self.cfg.paths.denoiser, "paths.denoiser")?)?)
        } else {
            None
        };
        let scenes = test_scenes(&self.cfg)?;
        self.evaluate_with(&seg, den.as_ref(), &scenes).map(|_| ())
    }

    pub fn full_pipeline(&self) -> Result<(), CliError> {
        let train = train_scenes(&self.cfg);
        let models = self.out("models");
        ensure_dir(&models)?;
        let seg = build_segmenter(&self.cfg, &train)?;
        save_segmenter(&models.join("segmenter.txt"), &seg)?;
        let den = if self.cfg.methods.contains(&Method::Ttga) {
            let d = build_denoiser(&self.cfg, &train, &self.schedule)?;
            save_denoiser(&models.join("denoiser.ckpt"), &d)?;
            Some(d)
        } else {
            None
        };
        self.log.line("models trained");
        let scenes = test_scenes(&self.cfg)?;
        if self.cfg.paths.data.is_none() {
            save_dataset(&self.out("data"), &scenes)?;
        }
        self.evaluate_with(&seg, den.as_ref(), &scenes).map(|_| ())
    }

    pub fn evaluate_with(
        &self,
        seg: &ttga_bench::SegmenterModel,
        den: Option<&DenoiserArtifact>,
        scenes: &[ttga_bench::ToyScene],
    ) -> Result<Vec<ImageResult>, CliError> {
        let ev = Evaluator {
            segmenter: Some(seg),
            denoiser: den,
            schedule: &self.schedule,
            ttga: self.ttga_config()?,
            run_seed: self.cfg.seed,
            tta_views: self.cfg.tta.views,
            methods: self.cfg.methods.clone(),
            keep_maps: self.cfg.dump_images,
        };
        let start = std::time::Instant::now();
        let results = ev.run_all(scenes, self.cfg.workers, Evaluator::evaluate_image)?;
        self.log.line(format!(
            "evaluated {} scenes in {:.1} s",
            results.len(),
            start.elapsed().as_secs_f64()
        ));
        for r in &results {
            for s in &r.scores {
                if !s.flags.is_empty() {
                    self.log
                        .line(format!("image {} {}: {}", r.id, s.method.name(), s.flags.join(", ")));
                }
            }
        }
        report::write_per_image(&self.out("per_image.csv"), &results)?;
        let all = report::aggregate(&results, &self.cfg.methods, |_| true);
        report::write_aggregate(&self.out("aggregate.csv"), &all)?;
        let occ = report::aggregate(&results, &self.cfg.methods, |r| r.occluded);
        report::write_aggregate(&self.out("aggregate_occluded.csv"), &occ)?;
        if self.cfg.methods.contains(&Method::Ttga) {
            self.write_augmentation_outputs(&results)?;
        }
        if self.cfg.dump_images {
            self.dump_maps(scenes, &results)?;
        }
        Ok(results)
    }

    fn write_augmentation_outputs(&self, results: &[ImageResult]) -> Result<(), CliError> {
        report::write_augmentations(&self.out("augment.csv"), results)?;
        if self.cfg.nulltext.trace {
            report::write_null_trace(&self.out("nulltext_trace.csv"), results)?;
        }
        if self.cfg.dump_images {
            let dir = self.out("images");
            ensure_dir(&dir)?;
            for r in results {
                if let Some(set) = &r.augmentations {
                    for (k, a) in set.augmented.iter().enumerate() {
                        a.image
                            .save_pgm(dir.join(format!("scene_{:04}_aug_{k:02}.pgm", r.id)))?;
                    }
                }
            }
        }
        Ok(())
    }

    fn dump_maps(
        &self,
        scenes: &[ttga_bench::ToyScene],
        results: &[ImageResult],
    ) -> Result<(), CliError> {
        let dir = self.out("images");
        ensure_dir(&dir)?;
        for (s, r) in scenes.iter().zip(results) {
            let stem = dir.join(format!("scene_{:04}", r.id));
            let with = |suffix: &str| -> PathBuf {
                let mut p = stem.clone().into_os_string();
                p.push(suffix);
                p.into()
            };
            s.image.save_pgm(with("_input.pgm"))?;
            s.gt_mask.save_pgm(with("_gt.pgm"))?;
            for (m, e) in &r.maps {
                e.mean_probability
                    .foreground()
                    .save_pgm(with(&format!("_{}_prob.pgm", m.name())))?;
                ttga_core::error_estimate_map(e).save_pgm(with(&format!("_{}_error.pgm", m.name())))?;
            }
        }
        Ok(())
    }
}

/// Runs `full-pipeline` for `cfg` without going through the argument parser.
pub fn full_pipeline(cfg: RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    Runner::new(cfg)?.full_pipeline()
}

/// Reads a CSV file written by this crate into header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    if !path.exists() {
        return Err(CliError::Missing {
            path: path.to_path_buf(),
        });
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}
