//! Reference motion clips.
//!
//! A [`MotionClip`] is a fixed-rate sequence of [`ReferenceFrame`]s. Frames are
//! played back at arbitrary times through [`MotionClip::sample_frame`], which
//! interpolates joints and CoM linearly and the base rotation along the
//! shortest geodesic.

mod io;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kinematics::NUM_JOINTS;
use crate::spatial::{self, Mat3, Vec3};

pub use io::{
    load_dataset, read_clip, read_clip_binary, read_clip_text, write_clip_binary, write_clip_text,
    write_dataset, ClipEncoding, MANIFEST_FILE,
};
pub use synth::{synthesize_clip, GaitSpec};

/// Number of values in a flattened frame: 12 joints, 9 rotation entries, 3 CoM.
pub const FRAME_DIM: usize = 24;

/// Window offsets (s) around the query time; the current frame is excluded.
pub const WINDOW_OFFSETS: [f64; 8] = [-1.0, -0.5, -0.2, -0.02, 0.02, 0.2, 0.5, 1.0];

/// Rotation matrices must be orthonormal to this Frobenius tolerance.
pub const ROTATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFrame {
    pub joints: [f64; NUM_JOINTS],
    pub rotation: Mat3,
    pub com: Vec3,
}

impl ReferenceFrame {
    pub fn new(joints: [f64; NUM_JOINTS], rotation: Mat3, com: Vec3) -> Self {
        Self { joints, rotation, com }
    }

    /// `(q[0..12], R row-major [0..9], x[0..3])`.
    pub fn to_array(&self) -> [f64; FRAME_DIM] {
        let mut out = [0.0; FRAME_DIM];
        out[..12].copy_from_slice(&self.joints);
        out[12..21].copy_from_slice(&spatial::mat_to_row_major(&self.rotation));
        out[21..].copy_from_slice(self.com.as_slice());
        out
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, FrameViolation> {
        if values.len() != FRAME_DIM {
            return Err(FrameViolation::Length(values.len()));
        }
        let mut joints = [0.0; NUM_JOINTS];
        joints.copy_from_slice(&values[..12]);
        Ok(Self {
            joints,
            rotation: spatial::mat_from_row_major(&values[12..21]),
            com: Vec3::new(values[21], values[22], values[23]),
        })
    }

    pub fn validate(&self) -> Result<(), FrameViolation> {
        if let Some(j) = self.joints.iter().position(|q| !q.is_finite()) {
            return Err(FrameViolation::NonFiniteJoint(j));
        }
        if self.com.iter().any(|c| !c.is_finite()) || self.rotation.iter().any(|c| !c.is_finite()) {
            return Err(FrameViolation::NonFinite);
        }
        let ortho = spatial::orthonormality_error(&self.rotation);
        if ortho > ROTATION_TOL {
            return Err(FrameViolation::NotOrthonormal(ortho));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(FrameViolation::Determinant(det));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameViolation {
    #[error("frame has {0} values, expected 24")]
    Length(usize),
    #[error("joint {0} is not finite")]
    NonFiniteJoint(usize),
    #[error("rotation or CoM has non-finite entries")]
    NonFinite,
    #[error("rotation not orthonormal: |RᵀR − I|_F = {0:e}")]
    NotOrthonormal(f64),
    #[error("rotation determinant {0} != 1")]
    Determinant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionType {
    Stand,
    Step,
    Pace,
    Trot,
    Gallop,
    Jump,
    TurnLeft,
    TurnRight,
    TurnLeftInPlace,
    TurnRightInPlace,
    Sit,
    Lie,
    TriangleTrace,
    StarTrace,
    RandomMixed,
}

impl MotionType {
    pub const ALL: [MotionType; 15] = [
        MotionType::Stand,
        MotionType::Step,
        MotionType::Pace,
        MotionType::Trot,
        MotionType::Gallop,
        MotionType::Jump,
        MotionType::TurnLeft,
        MotionType::TurnRight,
        MotionType::TurnLeftInPlace,
        MotionType::TurnRightInPlace,
        MotionType::Sit,
        MotionType::Lie,
        MotionType::TriangleTrace,
        MotionType::StarTrace,
        MotionType::RandomMixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionType::Stand => "stand",
            MotionType::Step => "step",
            MotionType::Pace => "pace",
            MotionType::Trot => "trot",
            MotionType::Gallop => "gallop",
            MotionType::Jump => "jump",
            MotionType::TurnLeft => "turn-left",
            MotionType::TurnRight => "turn-right",
            MotionType::TurnLeftInPlace => "turn-left-in-place",
            MotionType::TurnRightInPlace => "turn-right-in-place",
            MotionType::Sit => "sit",
            MotionType::Lie => "lie",
            MotionType::TriangleTrace => "triangle-trace",
            MotionType::StarTrace => "star-trace",
            MotionType::RandomMixed => "random-mixed",
        }
    }
}

impl fmt::Display for MotionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MotionType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown motion type `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub name: String,
    pub motion_type: MotionType,
    pub fps: f64,
    pub frames: Vec<ReferenceFrame>,
}

impl MotionClip {
    pub fn duration(&self) -> f64 {
        self.frames.len().saturating_sub(1) as f64 / self.fps
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(MotionError::Invariant {
                clip: self.name.clone(),
                frame: None,
                message: format!("fps must be > 0, got {}", self.fps),
            });
        }
        if self.frames.is_empty() {
            return Err(MotionError::Invariant {
                clip: self.name.clone(),
                frame: None,
                message: "clip has no frames".into(),
            });
        }
        for (i, frame) in self.frames.iter().enumerate() {
            frame.validate().map_err(|v| MotionError::Invariant {
                clip: self.name.clone(),
                frame: Some(i),
                message: v.to_string(),
            })?;
        }
        Ok(())
    }

    /// Reference at time `t` (s); times outside the clip clamp to the ends.
    /// Exact frame times return the stored frame unchanged.
    pub fn sample_frame(&self, t: f64) -> ReferenceFrame {
        let last = self.frames.len() - 1;
        if !(t > 0.0) {
            return self.frames[0];
        }
        let u = t * self.fps;
        if u >= last as f64 {
            return self.frames[last];
        }
        let nearest = u.round();
        if (u - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            return self.frames[nearest as usize];
        }
        let k = u.floor() as usize;
        let alpha = u - k as f64;
        let (a, b) = (&self.frames[k], &self.frames[k + 1]);
        let joints = std::array::from_fn(|j| a.joints[j] + alpha * (b.joints[j] - a.joints[j]));
        ReferenceFrame {
            joints,
            rotation: spatial::slerp(&a.rotation, &b.rotation, alpha),
            com: a.com + (b.com - a.com) * alpha,
        }
    }

    /// Frames at [`WINDOW_OFFSETS`] around `t`, clamped to the clip.
    pub fn sample_window(&self, t: f64) -> ReferenceWindow {
        ReferenceWindow {
            frames: WINDOW_OFFSETS.map(|dt| self.sample_frame(t + dt)),
        }
    }

    /// Base linear velocity (world), angular velocity (base frame) and joint
    /// velocities at the start of the clip by forward difference.
    pub fn initial_velocities(&self) -> (Vec3, Vec3, [f64; NUM_JOINTS]) {
        if self.frames.len() < 2 {
            return (Vec3::zeros(), Vec3::zeros(), [0.0; NUM_JOINTS]);
        }
        let (a, b) = (&self.frames[0], &self.frames[1]);
        let v = (b.com - a.com) * self.fps;
        let w = spatial::log_so3(&(a.rotation.transpose() * b.rotation)) * self.fps;
        let qd = std::array::from_fn(|j| (b.joints[j] - a.joints[j]) * self.fps);
        (v, w, qd)
    }
}

/// Anything that can supply reference frames at arbitrary times.
pub trait ReferenceSource {
    fn duration(&self) -> f64;
    fn frame_at(&self, t: f64) -> ReferenceFrame;
}

impl ReferenceSource for MotionClip {
    fn duration(&self) -> f64 {
        MotionClip::duration(self)
    }

    fn frame_at(&self, t: f64) -> ReferenceFrame {
        self.sample_frame(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWindow {
    pub frames: [ReferenceFrame; 8],
}

impl ReferenceWindow {
    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.to_array()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub clips: BTreeMap<String, MotionClip>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, clip: MotionClip) -> Result<(), MotionError> {
        let id = id.into();
        if self.clips.contains_key(&id) {
            return Err(MotionError::DuplicateId(id));
        }
        self.clips.insert(id, clip);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.clips.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<&MotionClip> {
        self.clips.get(id)
    }

    pub fn type_counts(&self) -> BTreeMap<MotionType, usize> {
        let mut counts = BTreeMap::new();
        for clip in self.clips.values() {
            *counts.entry(clip.motion_type).or_insert(0) += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        self.clips.values().try_for_each(MotionClip::validate)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MotionError {
    #[error("path does not exist: {0}")]
    MissingPath(std::path::PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in clip `{clip}`{}: {message}", frame_suffix(*.frame))]
    Parse {
        clip: String,
        frame: Option<usize>,
        message: String,
    },
    #[error("invariant violated in clip `{clip}`{}: {message}", frame_suffix(*.frame))]
    Invariant {
        clip: String,
        frame: Option<usize>,
        message: String,
    },
    #[error("duplicate clip id `{0}`")]
    DuplicateId(String),
    #[error("cannot synthesize `{0}` clips")]
    Unsupported(MotionType),
    #[error("invalid gait spec: {0}")]
    InvalidSpec(String),
    #[error("synthesized foot target unreachable at t = {time:.3} s: {source}")]
    Unreachable {
        time: f64,
        #[source]
        source: crate::kinematics::KinematicsError,
    },
}

fn frame_suffix(frame: Option<usize>) -> String {
    frame.map(|f| format!(" at frame {f}")).unwrap_or_default()
}
