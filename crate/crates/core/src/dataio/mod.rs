//! Synthetic phantoms, slice/codebook files, dataset manifests and checkpoint directories.

mod checkpoint;
mod dataset;
mod formats;
mod manifest;
mod phantom;

pub use checkpoint::{
    config_hash, sha256_hex, Checkpoint, CheckpointManifest, CHECKPOINT_VERSION, MANIFEST_FILE,
};
pub use dataset::{build_dataset, build_sample, epoch_order, max_abs_diff, PyramidConfig, Sample};
pub use formats::{
    codebook_from_bytes, codebook_to_bytes, read_single_slice, read_slice, slice_from_bytes,
    slice_to_bytes, write_slice,
};
pub use manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_VERSION};
pub use phantom::{gen_phantom, Contrast, PhantomSpec};
