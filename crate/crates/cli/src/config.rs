//! Run configuration. Values resolve as: command-line flags, then the config
//! file, then the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ttga_bench::prior::PriorConfig;
use ttga_bench::{Difficulty, SegmenterTrainConfig};
use ttga_core::engine::{ClubInput, InversionEmbedding, TtgaConfig};
use ttga_core::{GuidanceConfig, MaskPolicy, MaskScheme, NoiseSchedule, NullTextConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads, 0 for one per core.
    pub workers: usize,
    pub dump_images: bool,
    pub methods: Vec<Method>,
    pub schedule: ScheduleSection,
    pub ttga: TtgaSection,
    pub masks: MaskSection,
    pub nulltext: NullTextSection,
    pub data: DataSection,
    pub denoiser: DenoiserSection,
    pub segmenter: SegmenterSection,
    pub tta: TtaSection,
    pub paths: PathSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            workers: 0,
            dump_images: false,
            methods: vec![Method::Baseline, Method::Tta, Method::Ttga],
            schedule: ScheduleSection::default(),
            ttga: TtgaSection::default(),
            masks: MaskSection::default(),
            nulltext: NullTextSection::default(),
            data: DataSection::default(),
            denoiser: DenoiserSection::default(),
            segmenter: SegmenterSection::default(),
            tta: TtaSection::default(),
            paths: PathSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Tta,
    Ttga,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Tta => "tta",
            Method::Ttga => "ttga",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.trim() {
            "baseline" => Ok(Method::Baseline),
            "tta" => Ok(Method::Tta),
            "ttga" => Ok(Method::Ttga),
            other => Err(CliError::config(
                "methods",
                format!("unknown method {other:?} (baseline, tta, ttga)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            total_steps: ttga_core::schedule::DEFAULT_STEPS,
            beta_start: ttga_core::schedule::DEFAULT_BETA_START,
            beta_end: ttga_core::schedule::DEFAULT_BETA_END,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionChoice {
    Semantic,
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClubChoice {
    Blended,
    Unblended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtgaSection {
    pub tau: usize,
    pub inversion_interval: usize,
    pub n_augment: usize,
    pub omega: f64,
    pub lambda_c: f64,
    pub lambda_r_low: f64,
    pub lambda_r_high: f64,
    pub club_step: usize,
    pub inversion_embedding: InversionChoice,
    pub club_input: ClubChoice,
}

impl Default for TtgaSection {
    fn default() -> Self {
        let t = TtgaConfig::default();
        Self {
            tau: t.tau,
            inversion_interval: t.inversion_interval,
            n_augment: t.n_augment,
            omega: t.guidance.omega,
            lambda_c: t.guidance.lambda_c,
            lambda_r_low: t.lambda_r_low,
            lambda_r_high: t.lambda_r_high,
            club_step: t.club_step,
            inversion_embedding: InversionChoice::Semantic,
            club_input: ClubChoice::Blended,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Bernoulli,
    Attention,
    Hybrid,
}

impl From<SchemeChoice> for MaskScheme {
    fn from(s: SchemeChoice) -> Self {
        match s {
            SchemeChoice::Bernoulli => MaskScheme::Bernoulli,
            SchemeChoice::Attention => MaskScheme::Attention,
            SchemeChoice::Hybrid => MaskScheme::Hybrid,
        }
    }
}

impl SchemeChoice {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "bernoulli" => Ok(SchemeChoice::Bernoulli),
            "attention" => Ok(SchemeChoice::Attention),
            "hybrid" => Ok(SchemeChoice::Hybrid),
            other => Err(CliError::config(
                "mask_scheme",
                format!("unknown scheme {other:?} (bernoulli, attention, hybrid)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub scheme: SchemeChoice,
    pub p_m: f64,
    pub relevance_quantile: f64,
    pub resample_per_step: bool,
}

impl Default for MaskSection {
    fn default() -> Self {
        let p = MaskPolicy::default();
        Self {
            scheme: SchemeChoice::Hybrid,
            p_m: p.p_m,
            relevance_quantile: p.relevance_quantile,
            resample_per_step: p.resample_per_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NullTextSection {
    pub lr: f64,
    pub max_steps: usize,
    pub early_stop: f64,
    /// Write per-iteration losses to `nulltext_trace.csv`.
    pub trace: bool,
}

impl Default for NullTextSection {
    fn default() -> Self {
        let n = NullTextConfig::default();
        Self {
            lr: n.lr,
            max_steps: n.max_steps,
            early_stop: n.early_stop,
            trace: n.trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DifficultySection {
    pub occlusion: f64,
    pub blur: f64,
    pub noise: f64,
    pub contrast: f64,
    pub occluded_fraction: f64,
}

impl DifficultySection {
    pub fn to_difficulty(&self) -> Difficulty {
        Difficulty {
            occlusion: self.occlusion,
            blur: self.blur,
            noise: self.noise,
            contrast: self.contrast,
            occluded_fraction: self.occluded_fraction,
        }
    }

    fn train() -> Self {
        Self {
            occlusion: 0.0,
            blur: 0.5,
            noise: 0.05,
            contrast: 1.0,
            occluded_fraction: 1.0,
        }
    }

    fn test() -> Self {
        Self {
            occlusion: 0.6,
            blur: 1.0,
            noise: 0.05,
            contrast: 0.7,
            occluded_fraction: 0.75,
        }
    }
}

impl Default for DifficultySection {
    fn default() -> Self {
        Self::test()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub train: DifficultySection,
    pub test: DifficultySection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            size: ttga_bench::scene::DEFAULT_SIZE,
            train_count: 200,
            test_count: 200,
            train: DifficultySection::train(),
            test: DifficultySection::test(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserChoice {
    Analytic,
    Net,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub kind: DenoiserChoice,
    /// Gain of the analytic prior's embedding projection.
    pub projection_scale: f64,
    /// Overrides the fitted data standard deviation of the analytic prior.
    pub data_std: Option<f64>,
    /// Standard deviation of the semantic embedding entries.
    pub semantic_scale: f64,
    pub net_embedding_dim: usize,
    pub net_hidden: usize,
    pub net_layers: usize,
    pub net_epochs: usize,
    pub net_batch_size: usize,
    pub net_lr: f64,
    pub drop_prob: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let t = ttga_core::denoiser::TrainConfig::default();
        Self {
            kind: DenoiserChoice::Analytic,
            projection_scale: PriorConfig::default().projection_scale,
            data_std: None,
            semantic_scale: 0.05,
            net_embedding_dim: t.net.embedding_dim,
            net_hidden: t.net.hidden,
            net_layers: t.net.layers,
            net_epochs: t.epochs,
            net_batch_size: t.batch_size,
            net_lr: t.lr,
            drop_prob: t.drop_prob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmenterChoice {
    Threshold,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterSection {
    pub kind: SegmenterChoice,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub threshold: f64,
    pub temperature: f64,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        let t = SegmenterTrainConfig::default();
        Self {
            kind: SegmenterChoice::Trained,
            epochs: t.epochs,
            lr: t.lr,
            l2: t.l2,
            threshold: 0.0,
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaSection {
    pub views: usize,
}

impl Default for TtaSection {
    fn default() -> Self {
        Self { views: 10 }
    }
}

/// Existing artifacts to reuse instead of regenerating them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub denoiser: Option<PathBuf>,
    pub segmenter: Option<PathBuf>,
    /// Directory written by `make-data`.
    pub data: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub dump_images: bool,
    pub methods: Option<String>,
    pub mask_scheme: Option<String>,
    pub resample_masks_per_step: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            CliError::Config {
                field,
                reason: e.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Defaults, then `file` if given, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if o.dump_images {
            self.dump_images = true;
        }
        if let Some(list) = &o.methods {
            self.methods = list
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(Method::parse)
                .collect::<Result<_, _>>()?;
        }
        if let Some(s) = &o.mask_scheme {
            self.masks.scheme = SchemeChoice::parse(s)?;
        }
        if o.resample_masks_per_step {
            self.masks.resample_per_step = true;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        let s = &self.schedule;
        Ok(NoiseSchedule::linear(s.total_steps, s.beta_start, s.beta_end)?)
    }

    pub fn ttga_config(&self) -> Result<TtgaConfig, CliError> {
        let t = &self.ttga;
        Ok(TtgaConfig {
            tau: t.tau,
            inversion_interval: t.inversion_interval,
            n_augment: t.n_augment,
            guidance: GuidanceConfig::new(t.omega, t.lambda_c, 1.0)?,
            lambda_r_low: t.lambda_r_low,
            lambda_r_high: t.lambda_r_high,
            mask_policy: MaskPolicy {
                scheme: self.masks.scheme.into(),
                p_m: self.masks.p_m,
                relevance_quantile: self.masks.relevance_quantile,
                resample_per_step: self.masks.resample_per_step,
            },
            seed: self.seed,
            club_step: t.club_step,
            inversion_embedding: match t.inversion_embedding {
                InversionChoice::Semantic => InversionEmbedding::Semantic,
                InversionChoice::Null => InversionEmbedding::Null,
            },
            club_input: match t.club_input {
                ClubChoice::Blended => ClubInput::Blended,
                ClubChoice::Unblended => ClubInput::Unblended,
            },
            null_text: NullTextConfig {
                lr: self.nulltext.lr,
                max_steps: self.nulltext.max_steps,
                early_stop: self.nulltext.early_stop,
                trace: self.nulltext.trace,
            },
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = self.schedule()?;
        self.ttga_config()?.validate(&s)?;
        if self.methods.is_empty() {
            return Err(CliError::config("methods", "at least one method is required"));
        }
        if self.data.size < 4 {
            return Err(CliError::config("data.size", "must be at least 4"));
        }
        if self.data.train_count == 0 {
            return Err(CliError::config("data.train_count", "must be positive"));
        }
        if self.data.test_count == 0 {
            return Err(CliError::config("data.test_count", "must be positive"));
        }
        for (name, d) in [("data.train", &self.data.train), ("data.test", &self.data.test)] {
            if !(0.0..=1.0).contains(&d.occlusion) {
                return Err(CliError::config(&format!("{name}.occlusion"), "must lie in [0, 1]"));
            }
            if !(0.0..=1.0).contains(&d.occluded_fraction) {
                return Err(CliError::config(
                    &format!("{name}.occluded_fraction"),
                    "must lie in [0, 1]",
                ));
            }
            if d.blur < 0.0 || d.noise < 0.0 || d.contrast <= 0.0 {
                return Err(CliError::config(
                    name,
                    "blur and noise must be >= 0 and contrast > 0",
                ));
            }
        }
        if self.tta.views == 0 {
            return Err(CliError::config("tta.views", "must be positive"));
        }
        if self.segmenter.temperature <= 0.0 {
            return Err(CliError::config("segmenter.temperature", "must be positive"));
        }
        if self.denoiser.projection_scale <= 0.0 {
            return Err(CliError::config("denoiser.projection_scale", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\n[ttga]\ntau = 120\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.ttga.tau, 120);
        assert_eq!(cfg.ttga.n_augment, 10);
        assert_eq!(cfg.masks.p_m, 0.75);
    }

    #[test]
    fn unknown_keys_name_the_field() {
        match RunConfig::from_toml("[ttga]\ntua = 3\n") {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "tua"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.ttga.tau = 5000;
        match cfg.validate() {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "tau"),
            other => panic!("{other:?}"),
        }
        let mut cfg = RunConfig::default();
        cfg.masks.p_m = 2.0;
        assert!(matches!(cfg.validate(), Err(CliError::Config { field, .. }) if field == "p_m"));
    }

    #[test]
    fn flag_parsing() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            methods: Some("ttga,baseline".into()),
            mask_scheme: Some("bernoulli".into()),
            resample_masks_per_step: true,
            ..Overrides::default()
        };
        cfg.apply(&o).unwrap();
        assert_eq!(cfg.methods, vec![Method::Ttga, Method::Baseline]);
        assert_eq!(cfg.masks.scheme, SchemeChoice::Bernoulli);
        assert!(cfg.masks.resample_per_step);
        let bad = Overrides {
            methods: Some("mc-dropout".into()),
            ..Overrides::default()
        };
        assert!(matches!(cfg.apply(&bad), Err(CliError::Config { .. })));
    }
}
