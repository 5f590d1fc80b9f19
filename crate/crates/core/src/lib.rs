//! Pose estimation field toolkit: ground-truth encoding of heatmaps, part
//! affinity fields and block-inside offsets; training losses; bottom-up
//! decoding; COCO-style keypoint evaluation; and synthetic scene generation.

pub mod decoder;
pub mod encoder;
pub mod evalkit;
pub mod fields;
pub mod losses;
pub mod skeleton;
pub mod synth;
