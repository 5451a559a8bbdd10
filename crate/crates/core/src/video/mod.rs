//! Clips, temporal sub-sampling, normalization, the synthetic dataset and
//! the PNG-directory clip store.

mod clip;
mod store;
mod synth;

pub use clip::{denormalize, normalize, temporal_subsample, NormalizationSpec, VideoClip, CHANNELS};
pub use store::{
    list_frames, load_clip_dir, load_split, write_clip_dir, write_dataset, LabeledClip, Manifest,
    ManifestEntry, Split, Splits, MANIFEST,
};
pub use synth::{
    generate_synthetic_dataset, split_counts, ClassSpec, Motion, Shape, SynthClip, SynthDataset,
    SynthDatasetConfig,
};
