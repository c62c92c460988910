//! Datasets, models and their files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ttga_bench::prior::{fit_prior, semantic_embedding, PriorConfig};
use ttga_bench::scene::{Occluder, SceneParams};
use ttga_bench::{make_dataset, train_segmenter, SegmenterModel, SegmenterTrainConfig, ToyScene};
use ttga_core::denoiser::{
    train_toy_denoiser, ConditionEmbedding, DenoiserModel, NetConfig, TrainConfig,
};
use ttga_core::{BinaryMask, LatentGrid, NoiseSchedule, SeededRng};

use crate::config::{DenoiserChoice, RunConfig, SegmenterChoice};
use crate::error::CliError;

/// Stream tags for seeds derived from the run seed.
const TAG_TRAIN_DATA: u64 = 1;
const TAG_TEST_DATA: u64 = 2;
const TAG_SEGMENTER: u64 = 3;
const TAG_DENOISER: u64 = 4;
const TAG_SEMANTIC: u64 = 5;
const TAG_IMAGE_BASE: u64 = 1 << 32;

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut r = SeededRng::new(seed, tag);
    let hi = (r.uniform() * 4294967296.0) as u64;
    let lo = (r.uniform() * 4294967296.0) as u64;
    (hi << 32) | lo
}

/// Seed for everything random about test image `id`.
pub fn image_seed(seed: u64, id: usize) -> u64 {
    derive_seed(seed, TAG_IMAGE_BASE + id as u64)
}

pub fn train_scenes(cfg: &RunConfig) -> Vec<ToyScene> {
    let d = &cfg.data;
    make_dataset(
        d.train_count,
        d.size,
        &d.train.to_difficulty(),
        derive_seed(cfg.seed, TAG_TRAIN_DATA),
    )
}

pub fn generate_test_scenes(cfg: &RunConfig) -> Vec<ToyScene> {
    let d = &cfg.data;
    make_dataset(
        d.test_count,
        d.size,
        &d.test.to_difficulty(),
        derive_seed(cfg.seed, TAG_TEST_DATA),
    )
}

/// Test scenes from `paths.data` when set, generated otherwise.
pub fn test_scenes(cfg: &RunConfig) -> Result<Vec<ToyScene>, CliError> {
    match &cfg.paths.data {
        Some(dir) => load_dataset(dir),
        None => Ok(generate_test_scenes(cfg)),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

const MANIFEST_HEADER: [&str; 17] = [
    "id",
    "size",
    "cy",
    "cx",
    "radius",
    "occluded",
    "occluder_cy",
    "occluder_cx",
    "occluder_angle",
    "occluder_half_width",
    "occluder_half_length",
    "occluder_opacity",
    "blur",
    "noise",
    "contrast",
    "image",
    "mask",
];

/// Writes `manifest.csv`, `images/scene_NNNN.{raw,pgm}` and
/// `masks/scene_NNNN.{raw,pgm}` under `dir`.
pub fn save_dataset(dir: &Path, scenes: &[ToyScene]) -> Result<(), CliError> {
    ensure_dir(&dir.join("images"))?;
    ensure_dir(&dir.join("masks"))?;
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    w.write_record(MANIFEST_HEADER)?;
    for s in scenes {
        let stem = format!("scene_{:04}", s.id);
        let img = format!("images/{stem}.raw");
        let mask = format!("masks/{stem}.raw");
        s.image.save_raw(dir.join(&img))?;
        s.image.save_pgm(dir.join(format!("images/{stem}.pgm")))?;
        s.gt_mask.to_grid().save_raw(dir.join(&mask))?;
        s.gt_mask.save_pgm(dir.join(format!("masks/{stem}.pgm")))?;
        let p = &s.params;
        let o = p.occluder;
        let oc = |f: fn(&Occluder) -> f64| o.as_ref().map(|o| f6(f(o))).unwrap_or_default();
        w.write_record([
            s.id.to_string(),
            p.size.to_string(),
            f6(p.cy),
            f6(p.cx),
            f6(p.radius),
            (o.is_some() as u8).to_string(),
            oc(|o| o.cy),
            oc(|o| o.cx),
            oc(|o| o.angle),
            oc(|o| o.half_width),
            oc(|o| o.half_length),
            oc(|o| o.opacity),
            f6(p.blur),
            f6(p.noise),
            f6(p.contrast),
            img,
            mask,
        ])?;
    }
    w.flush().map_err(|e| CliError::Other(e.to_string()))?;
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, path: &Path) -> Result<&'a str, CliError> {
    rec.get(i).ok_or_else(|| {
        CliError::Schema(format!("{}: row has no column {}", path.display(), MANIFEST_HEADER[i]))
    })
}

fn num(s: &str, what: &str, path: &Path) -> Result<f64, CliError> {
    s.parse()
        .map_err(|_| CliError::Schema(format!("{}: bad {what} value {s:?}", path.display())))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<ToyScene>, CliError> {
    let path = dir.join("manifest.csv");
    if !path.exists() {
        return Err(CliError::Missing { path });
    }
    let mut r = csv::Reader::from_path(&path)?;
    if r.headers()?.iter().ne(MANIFEST_HEADER) {
        return Err(CliError::Schema(format!(
            "{}: unexpected manifest header",
            path.display()
        )));
    }
    let mut scenes = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let g = |i: usize| field(&rec, i, &path);
        let n = |i: usize| -> Result<f64, CliError> { num(g(i)?, MANIFEST_HEADER[i], &path) };
        let id: usize = g(0)?
            .parse()
            .map_err(|_| CliError::Schema(format!("{}: bad id", path.display())))?;
        let occluder = if g(5)? == "1" {
            Some(Occluder {
                cy: n(6)?,
                cx: n(7)?,
                angle: n(8)?,
                half_width: n(9)?,
                half_length: n(10)?,
                opacity: n(11)?,
            })
        } else {
            None
        };
        let image = load_grid(&dir.join(g(15)?))?;
        let mask_grid = load_grid(&dir.join(g(16)?))?;
        let gt_mask = BinaryMask::threshold(&mask_grid, 0.5);
        let size = n(1)? as usize;
        if image.height() != size || gt_mask.height() != size {
            return Err(CliError::Schema(format!(
                "{}: scene {id} does not match its size column",
                path.display()
            )));
        }
        scenes.push(ToyScene {
            id,
            image,
            gt_mask,
            params: SceneParams {
                size,
                cy: n(2)?,
                cx: n(3)?,
                radius: n(4)?,
                occluder,
                blur: n(12)?,
                noise: n(13)?,
                contrast: n(14)?,
            },
        });
    }
    scenes.sort_by_key(|s| s.id);
    Ok(scenes)
}

fn load_grid(path: &Path) -> Result<LatentGrid, CliError> {
    if !path.exists() {
        return Err(CliError::Missing {
            path: path.to_path_buf(),
        });
    }
    Ok(LatentGrid::load_raw(path)?)
}

/// Trained denoiser with the semantic embedding it is conditioned on.
pub struct DenoiserArtifact {
    pub model: DenoiserModel,
    pub semantic: ConditionEmbedding,
}

pub fn build_denoiser(
    cfg: &RunConfig,
    train: &[ToyScene],
    schedule: &NoiseSchedule,
) -> Result<DenoiserArtifact, CliError> {
    let d = &cfg.denoiser;
    let mut rng = SeededRng::new(derive_seed(cfg.seed, TAG_DENOISER), 0);
    let mut sem_rng = SeededRng::new(derive_seed(cfg.seed, TAG_SEMANTIC), 0);
    match d.kind {
        DenoiserChoice::Analytic => {
            let pc = PriorConfig {
                projection_scale: d.projection_scale,
                data_std: d.data_std,
            };
            let prior = fit_prior(train, schedule, &pc, &mut rng)?;
            let dim = cfg.data.size * cfg.data.size;
            Ok(DenoiserArtifact {
                model: prior.into(),
                semantic: semantic_embedding(dim, d.semantic_scale, &mut sem_rng),
            })
        }
        DenoiserChoice::Net => {
            let semantic = semantic_embedding(d.net_embedding_dim, d.semantic_scale, &mut sem_rng);
            let data: Vec<_> = train
                .iter()
                .map(|s| (s.image.clone(), semantic.clone()))
                .collect();
            let tc = TrainConfig {
                net: NetConfig {
                    embedding_dim: d.net_embedding_dim,
                    hidden: d.net_hidden,
                    layers: d.net_layers,
                    ..NetConfig::default()
                },
                epochs: d.net_epochs,
                batch_size: d.net_batch_size,
                drop_prob: d.drop_prob,
                lr: d.net_lr,
            };
            let (net, _) = train_toy_denoiser(&data, schedule, &mut rng, &tc)?;
            Ok(DenoiserArtifact {
                model: net.into(),
                semantic,
            })
        }
    }
}

/// The semantic embedding is stored beside the checkpoint with this suffix.
fn embedding_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".embedding");
    PathBuf::from(s)
}

fn write_values(path: &Path, header: &str, values: &[f64]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut text = format!("{header}\n");
    for v in values {
        // shortest round-trip representation
        text.push_str(&format!("{v:?}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn read_values(path: &Path) -> Result<(String, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| CliError::Schema(format!("{}: bad value {l:?}", path.display())))
        })
        .collect::<Result<_, _>>()?;
    Ok((header, values))
}

pub fn save_denoiser(path: &Path, art: &DenoiserArtifact) -> Result<(), CliError> {
    art.model.save(path)?;
    write_values(&embedding_path(path), "semantic", art.semantic.values())
}

pub fn load_denoiser(path: &Path) -> Result<DenoiserArtifact, CliError> {
    let emb = embedding_path(path);
    for p in [path, emb.as_path()] {
        if !p.exists() {
            return Err(CliError::Missing { path: p.to_path_buf() });
        }
    }
    let model = DenoiserModel::load(path)?;
    let (_, values) = read_values(&emb)?;
    Ok(DenoiserArtifact {
        model,
        semantic: ConditionEmbedding::semantic(values),
    })
}

pub fn build_segmenter(cfg: &RunConfig, train: &[ToyScene]) -> Result<SegmenterModel, CliError> {
    let s = &cfg.segmenter;
    match s.kind {
        SegmenterChoice::Threshold => Ok(SegmenterModel::threshold(s.threshold, s.temperature)),
        SegmenterChoice::Trained => {
            let tc = SegmenterTrainConfig {
                epochs: s.epochs,
                lr: s.lr,
                l2: s.l2,
            };
            let mut rng = SeededRng::new(derive_seed(cfg.seed, TAG_SEGMENTER), 0);
            Ok(train_segmenter(train, &tc, &mut rng)?)
        }
    }
}

pub fn save_segmenter(path: &Path, seg: &SegmenterModel) -> Result<(), CliError> {
    write_values(path, seg.kind(), &seg.params())
}

pub fn load_segmenter(path: &Path) -> Result<SegmenterModel, CliError> {
    let (kind, values) = read_values(path)?;
    SegmenterModel::from_params(&kind, &values)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}
