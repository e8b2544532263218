//! Networks and feature maps that produce transformation parameters.

pub mod feature;
pub mod made;
pub mod mlp;

pub use feature::FeatureShiftMap;
pub use made::{build_masks, Made, MaskSet};
pub use mlp::{glorot, Dense, Mlp};
