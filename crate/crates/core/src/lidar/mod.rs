//! LiDAR geometry: beam tables, the log-range codec, point clouds and range
//! images.

pub mod beam;
pub mod cloud;
pub mod codec;
pub mod image;
pub mod synth;

pub use beam::{azimuth_column, column_center_azimuth, BeamTable};
pub use cloud::{Point, PointCloud};
pub use codec::{decode_log, encode_log, LogCodec, DEFAULT_X_MAX};
pub use image::{RangeImage, RAYDROP, RAYDROP_EPS};
pub use synth::{render, scene_batch, SceneBox, SceneConfig};
