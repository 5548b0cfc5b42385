//! Scene ingestion, codecs, patch sampling and synthetic scenes.

pub mod manifest;
pub mod patches;
pub mod rgbe;
pub mod scene;
pub mod synthetic;

pub use manifest::{epoch_order, worker_rng, Manifest};
pub use patches::{
    array3_to_tensor, array4_to_tensor, crop_patch, sample_patch, sample_patches, tensor_to_array3,
    Dihedral, Patch, PatchBatch, PatchMeta,
};
pub use rgbe::{read_hdr, write_hdr};
pub use scene::{
    exposure_times, gamma_companion, load_scene, read_ldr, write_png_preview, ExposureStack,
    GAMMA, REFERENCE,
};
pub use synthetic::{generate_synthetic, smooth_latent, translate, LatentStyle, SyntheticScene};
