//! File formats and the synthetic data generator.

pub mod ciem;
pub mod model;
pub mod synth;
pub mod tables;

pub use ciem::{read_embeddings, write_embedding_set, write_embeddings};
pub use model::{from_json, load_model, save_model, to_json, ModelDocument};
pub use synth::{generate_synthetic, GroundTruth, SyntheticData, SyntheticSpec};
pub use tables::{read_attributes, read_likes, write_likes, AttributeMap, ImageAttributes};
