//! File formats, intensity normalization, resampling, synthetic scenes and
//! pseudo-label construction.

mod dataset;
mod labels;
mod normalize;
mod pgm;
mod pseudo;
mod synth;
mod tensorfile;

pub use dataset::{list_stems, load_dataset, save_dataset, Dataset};
pub use labels::LabelMask;
pub use normalize::{normalize_percentile, percentile, rescale_image, rescale_labels, resize_labels, PERCENTILE_HIGH, PERCENTILE_LOW};
pub use pgm::{image_to_pgm, labels_to_pgm, pgm_to_image, read_pgm, write_pgm, Pgm};
pub use pseudo::{build_pseudo_dataset, sample_annotations, PseudoDataset, SparseAnnotations, KNOWN_BACKGROUND_RADIUS};
pub use synth::{generate_dataset, synth_generate, texture_value, PlacedObject, SceneSpec, SynthScene, MAX_PLACEMENT_ATTEMPTS};
pub use tensorfile::{
    decode_archive, encode_archive, read_archive, read_labels, read_tensor, write_archive, write_labels, write_tensor, ArrayData, TensorFile, ARCHIVE_MAGIC,
    FORMAT_VERSION, TENSOR_MAGIC,
};
