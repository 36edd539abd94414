//! File formats at the frozen-model boundary and the synthetic world.

mod captions;
mod classes;
mod degrade;
mod features;
mod pnm;
mod synth;

pub use captions::{
    captions_to_jsonl, check_image_ids, parse_captions, read_captions, write_captions,
    CaptionRecord,
};
pub use classes::{check_templates, fill_template, ClassSet, DEFAULT_TEMPLATES};
pub use degrade::{degrade_captions, EMPTY_CAPTION};
pub use features::{FeatureRecord, FeatureStore, FEATURE_MAGIC, FEATURE_VERSION};
pub use pnm::{GrayImage, Mask, RgbImage, IGNORE_INDEX};
pub use synth::{
    generate_synthetic_world, Prototypes, SplitData, SyntheticWorld, SyntheticWorldSpec,
    WORLD_CONCEPTS,
};
