//! Image files, preprocessing, augmentation, manifests, splitting, sampling
//! and the synthetic dataset generator.

mod clean;
mod dataset;
mod image;
mod manifest;
mod ppm;
mod sampler;
mod split;
mod synth;

pub use clean::{clean_manifest, RejectReason, Rejection};
pub use dataset::{augment_dataset, load_inputs, preprocess, stack};
pub use image::{augment, normalize, resize_bilinear, to_raw, AugmentOp};
pub use manifest::{
    relative_path, Eye, ImageRecord, Manifest, Provenance, Quality, Split, MANIFEST_HEADER,
};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm, RawImage};
pub use sampler::{WeightedSampler, DEFAULT_WEIGHT_HIGH, DEFAULT_WEIGHT_LOW};
pub use split::split;
pub use synth::{synth_generate, SynthConfig};
