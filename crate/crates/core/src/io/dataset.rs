//! JSON camera files and on-disk datasets (`cameras.json` plus PPM frames).

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{LgsError, Result};
use crate::io::ppm::{read_image, write_image};
use crate::scene::{Camera, Frame, SceneDataset};

pub const CAMERA_FILE: &str = "cameras.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub time: f64,
    /// Path relative to the camera file's directory.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4×4.
    pub world_to_camera: [f64; 16],
    #[serde(default)]
    pub frames: Vec<FrameEntry>,
}

impl CameraFile {
    pub fn from_camera(cam: &Camera) -> Self {
        let mut m = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                m[4 * r + c] = cam.world_to_camera[(r, c)];
            }
        }
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            world_to_camera: m,
            frames: Vec::new(),
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            world_to_camera: Matrix4::from_row_slice(&self.world_to_camera),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera()?;
        for f in &self.frames {
            if !(0.0..=1.0).contains(&f.time) {
                return Err(LgsError::invalid_argument(format!("frame time {} outside [0, 1]", f.time)));
            }
        }
        Ok(())
    }
}

pub fn read_camera_file(path: impl AsRef<Path>) -> Result<CameraFile> {
    let file: CameraFile = serde_json::from_slice(&std::fs::read(path)?)?;
    file.validate()?;
    Ok(file)
}

/// Loads `dir/cameras.json` and every frame image it lists.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SceneDataset> {
    let dir = dir.as_ref();
    let file = read_camera_file(dir.join(CAMERA_FILE))?;
    let camera = file.camera()?;
    let frames = file
        .frames
        .iter()
        .map(|entry| {
            Ok(Frame {
                image: read_image(dir.join(&entry.image))?,
                time: entry.time,
                camera: camera.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SceneDataset::new(frames)
}

/// Writes `dir/cameras.json` and `frame_XXX.ppm` per frame. All frames must
/// share one camera.
pub fn save_dataset(dataset: &SceneDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let Some(first) = dataset.frames.first() else {
        return Err(LgsError::invalid_argument("cannot save an empty dataset"));
    };
    if dataset.frames.iter().any(|f| f.camera != first.camera) {
        return Err(LgsError::invalid_argument("dataset frames use different cameras"));
    }
    std::fs::create_dir_all(dir)?;
    let mut file = CameraFile::from_camera(&first.camera);
    for (i, frame) in dataset.frames.iter().enumerate() {
        let name = format!("frame_{i:03}.ppm");
        write_image(&frame.image, dir.join(&name))?;
        file.frames.push(FrameEntry {
            time: frame.time,
            image: name,
        });
    }
    std::fs::write(dir.join(CAMERA_FILE), serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_rejected() {
        let text = r#"{"fx": 1, "fy": 1, "cx": 0, "cy": 0, "width": 4, "height": 4}"#;
        assert!(serde_json::from_str::<CameraFile>(text).is_err());
    }

    #[test]
    fn time_out_of_range_is_rejected() {
        let mut file = CameraFile::from_camera(&Camera {
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
            world_to_camera: Matrix4::identity(),
        });
        file.frames.push(FrameEntry {
            time: 1.5,
            image: "x.ppm".into(),
        });
        assert!(matches!(file.validate(), Err(LgsError::InvalidArgument(_))));
    }
}
