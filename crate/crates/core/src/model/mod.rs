//! Small convolutional encoder with linear heads, block-granular freezing,
//! checkpoints, and GradCAM.

mod checkpoint;
mod gradcam;
pub mod layers;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcam::{gradcam, min_max_normalize, upscale};
pub use network::{
    sigmoid, BlockGrad, ConvBlock, ForwardCache, Gradients, Head, ModelSpec, ModelState, Pass,
    StageRecord, TrainableMask,
};

/// Stacks equally sized images into an `(N, d, d)` batch.
pub fn stack_images<'a>(
    images: impl IntoIterator<Item = &'a ndarray::Array2<f64>>,
) -> ndarray::Array3<f64> {
    let views: Vec<_> = images.into_iter().map(|a| a.view()).collect();
    ndarray::stack(ndarray::Axis(0), &views).expect("images share one shape")
}
