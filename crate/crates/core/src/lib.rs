//! Diffusion sampling, inversion and test-time generative augmentation on
//! toy-scale denoisers.

pub mod adam;
pub mod autodiff;
pub mod denoiser;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod guidance;
pub mod masks;
pub mod nulltext;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result, Shape};
pub use grid::{BinaryMask, LatentGrid};
pub use rng::{gaussian_grid, SeededRng};
pub use schedule::NoiseSchedule;
pub use guidance::{cfg_multi, cfg_single, GuidanceConfig};
pub use nulltext::{one_step_reconstruct, optimize_null_text, NullTextConfig, OptimizedNull};
pub use masks::{MaskPair, MaskPolicy, MaskScheme};
pub use engine::{generate_set, AugmentationSet, TtgaConfig};
pub use ensemble::{ensemble, error_estimate_map, EnsembleResult, ProbabilityGrid};
