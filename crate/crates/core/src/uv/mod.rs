//! UV atlas: layouts, rasterized position maps, resampling and loss weights.

mod layout;
mod map;
mod mask;
mod raster;
mod resample;
mod study;

pub use layout::{signed_area, UvLayout, MIN_UV_AREA};
pub use map::{PngRange, PositionMap, UVPM_MAGIC, UVPM_VERSION};
pub use mask::{
    build_weight_mask, joint_uvs, WeightMask, WeightMaskConfig, DEFAULT_JOINT_GAIN,
    DEFAULT_JOINT_RADIUS_AT_256,
};
pub use raster::{render_position_map, texel_center, Coverage, TexelHit, MIN_RESOLUTION};
pub use resample::{resample_vertices, Resampled, Resampler};
pub use study::{
    random_samples, resolution_study, StudyReport, StudyRow, STUDY_MAX_ANGLE, STUDY_SHAPE_BOUND,
};
