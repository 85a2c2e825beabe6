//! Dataset ingestion, synthetic scenes, augmentation and scoring.

pub mod augment;
pub mod cdnet;
pub mod eval;
pub mod imageio;
pub mod sample;
pub mod synth;

pub use augment::{paste_objects, Placement, Sprite};
pub use cdnet::{load_sequence, map_gt_labels, split_dataset, write_sequence, DatasetSplit, LabelMode};
pub use eval::{f_measure, EvalReport, Grouping};
pub use sample::{FrameSample, Normalization};
pub use synth::{synth_sequence, SyntheticSceneSpec};
