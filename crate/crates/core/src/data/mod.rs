//! Dataset ingestion in the flat MedMNIST NPY layout, normalization and
//! per-sample augmentation.

mod augment;
mod dataset;
mod npy;
mod synth;

pub use augment::{augment_batch, crop_shift, flip_horizontal, AugmentationPolicy};
pub use dataset::{load_dataset, normalize, write_dataset, Dataset, DatasetMeta, Split, IMAGE_LEN, IMAGE_SIZE};
pub use npy::{parse_npy, read_npy, write_npy, NpyArray, NpyData};
pub use synth::{generate_synthetic, render_pattern, SynthReport, SYNTH_CLASSES};
