//! Synthetic radiograph generation, preprocessing, and Gaussian-filter bias
//! injection.

mod bias;
mod config;
mod filter;
mod generate;
pub mod preprocess;

pub use bias::{inject_filter_bias, FilterBiasSpec, FilterPreset};
pub use config::{AttributeSignal, GeneratorConfig, TargetSignal};
pub use filter::{gaussian_filter, gaussian_kernel};
pub use generate::{
    generate, GroundTruth, ImageTruth, PixelBox, AUX_TASKS, SOURCE_TASK, TARGET_TASK,
};
pub use preprocess::{preprocess, Mode, PreprocessParams};
