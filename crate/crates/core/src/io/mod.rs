//! Persistence: binary scene files, PPM images, camera/dataset directories
//! and JSON configuration.

pub mod config;
pub mod dataset;
pub mod ppm;
pub mod scene_file;

pub use config::{read_config, PipelineConfig};
pub use dataset::{load_dataset, read_camera_file, save_dataset, CameraFile, FrameEntry};
pub use ppm::{read_image, write_image};
pub use scene_file::{load_scene, save_scene, size_breakdown, SizeReport};
