//! Synthetic scenes, clip manifests, training-pair sampling and frame augmentation.

mod dataset;
mod image;
mod manifest;
mod sampling;
mod synth;

pub use dataset::{clip_id, write_synthetic_dataset, SynthConfig, MANIFEST_FILE, SCENES_FILE};
pub use image::{write_gray_png, Image, Jitter};
pub use manifest::{frame_file_name, ClipData, ClipRecord, Manifest, Split};
pub use sampling::{
    augment_train, augment_with, default_stft, draw_start, example_at, sample_training_pair, segment_frames, segment_planes,
    segment_samples, standard_frame, AugmentParams, SampleConfig, TrainingExample, CROP_HEIGHT, CROP_WIDTH,
    MAX_COL_OFFSET, MAX_ROW_OFFSET, SEGMENT_S,
};
pub use synth::{blob_frame, pan_gains, BACKGROUND, BLOB, BLOB_SIZE, MAX_ITD_S, Motion, Partial, SceneSpec, Source, SourceKind, SyntheticClip, FRAME_HEIGHT, FRAME_WIDTH};
