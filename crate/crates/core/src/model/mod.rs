//! Generator and discriminator networks plus their on-disk form.
//!
//! The generator is a residual U-Net used on its own as the local enhancer:
//! it sees only the coarse image. Discriminators see the coarse image and a
//! candidate stacked as two channels, at four pyramid scales by default.

mod checkpoint;
mod discriminator;
mod generator;
mod layers;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use discriminator::{
    discriminator_forward, DiscriminatorBank, DiscriminatorConfig, PatchDiscriminator, ScaleOutput, ScaleValues,
};
pub use generator::{generator_forward, image_to_tensor, GeneratorConfig, GeneratorNet};
