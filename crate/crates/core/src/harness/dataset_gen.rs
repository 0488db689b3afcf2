//! Procedural datasets from a per-type count spec.

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::kinematics::RobotModel;
use crate::motion::ClipEncoding;
use crate::motion::{synthesize_clip, Dataset, GaitSpec, MotionError, MotionType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipGroup {
    pub motion_type: MotionType,
    pub count: usize,
    /// Gait scale factors of the first and last clip; the rest are evenly spaced.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Overrides the dataset-wide duration.
    pub duration: Option<f64>,
}

impl Default for ClipGroup {
    fn default() -> Self {
        Self {
            motion_type: MotionType::Stand,
            count: 1,
            scale_min: 1.0,
            scale_max: 1.0,
            duration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub duration: f64,
    pub fps: f64,
    pub binary: bool,
    pub groups: Vec<ClipGroup>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            duration: 10.0,
            fps: 60.0,
            binary: false,
            groups: Vec::new(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| {
            Err(ConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        if !(self.duration > 0.0 && self.fps > 0.0) {
            return invalid("duration", "duration and fps must be > 0");
        }
        if self.groups.iter().all(|g| g.count == 0) {
            return invalid("groups", "at least one clip is required");
        }
        for g in &self.groups {
            if !(g.scale_min > 0.0 && g.scale_max > 0.0) || g.duration.is_some_and(|d| !(d > 0.0)) {
                return invalid("groups", "scales and durations must be > 0");
            }
        }
        Ok(())
    }

    pub fn encoding(&self) -> ClipEncoding {
        if self.binary {
            ClipEncoding::Binary
        } else {
            ClipEncoding::Text
        }
    }
}

/// Clip ids are `<type>_<index>` with the index counted per type.
pub fn generate_dataset(spec: &DatasetSpec, model: &RobotModel) -> Result<Dataset, MotionError> {
    let mut dataset = Dataset::new();
    let mut next_index = std::collections::BTreeMap::<MotionType, usize>::new();
    for g in &spec.groups {
        for i in 0..g.count {
            let t = if g.count > 1 { i as f64 / (g.count - 1) as f64 } else { 0.0 };
            let mut gait = GaitSpec::new(g.motion_type).scaled(g.scale_min + t * (g.scale_max - g.scale_min));
            gait.duration = g.duration.unwrap_or(spec.duration);
            gait.fps = spec.fps;
            let index = next_index.entry(g.motion_type).or_insert(0);
            let id = format!("{}_{:03}", g.motion_type, index);
            *index += 1;
            gait.name = id.clone();
            dataset.insert(id, synthesize_clip(&gait, model)?)?;
        }
    }
    Ok(dataset)
}
