//! Mapping source-skeleton keypoints onto the robot.
//!
//! Hips of the source are paired with the robot's hip mounts and each foot is
//! placed at the same (scaled) hip-relative offset, expressed in the base frame
//! of the source orientation. Per-leg IK turns the targets into joint angles.
//! The resulting clip can then be lifted out of the ground and cleaned of foot
//! skating and jitter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::kinematics::{leg_angles, BasePose, IkSolution, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::motion::{synthesize_clip, GaitSpec, MotionClip, MotionError, MotionType, ReferenceFrame};
use crate::spatial::{mat_from_row_major, mat_to_row_major, orthonormality_error, orthonormalize, Mat3, Vec3};

const SOURCE_MAGIC: &str = "QMSRC";
const FORMAT_VERSION: u32 = 1;
/// Extra height above the foot sphere that still counts as ground contact.
pub const STANCE_HEIGHT_MARGIN: f64 = 0.005;
/// Penetrations at or below this depth are left alone.
const PENETRATION_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum RetargetError {
    #[error("invalid source motion `{name}`{}: {message}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    InvalidSource {
        name: String,
        frame: Option<usize>,
        message: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceFrame {
    pub hips: [Vec3; NUM_LEGS],
    pub feet: [Vec3; NUM_LEGS],
    pub knees: Option<[Vec3; NUM_LEGS]>,
    pub rotation: Mat3,
    pub com: Vec3,
}

impl SourceFrame {
    fn scaled(&self, s: f64) -> Self {
        Self {
            hips: self.hips.map(|p| p * s),
            feet: self.feet.map(|p| p * s),
            knees: self.knees.map(|k| k.map(|p| p * s)),
            rotation: self.rotation,
            com: self.com * s,
        }
    }
}

/// Keypoint trajectories of a source animal, in its own units.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMotion {
    pub name: String,
    pub motion_type: MotionType,
    pub fps: f64,
    pub frames: Vec<SourceFrame>,
}

impl SourceMotion {
    pub fn has_knees(&self) -> bool {
        self.frames.first().is_some_and(|f| f.knees.is_some())
    }

    /// Uniformly scales every keypoint.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            frames: self.frames.iter().map(|f| f.scaled(s)).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), RetargetError> {
        let err = |frame: Option<usize>, message: String| RetargetError::InvalidSource {
            name: self.name.clone(),
            frame,
            message,
        };
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(err(None, format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.is_empty() {
            return Err(err(None, "no frames".into()));
        }
        let knees = self.has_knees();
        for (i, f) in self.frames.iter().enumerate() {
            if f.knees.is_some() != knees {
                return Err(err(Some(i), "knee keypoints must be present in all frames or none".into()));
            }
            let finite = f
                .hips
                .iter()
                .chain(&f.feet)
                .chain(f.knees.iter().flatten())
                .chain(std::iter::once(&f.com))
                .all(|p| p.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(err(Some(i), "non-finite keypoint".into()));
            }
            let ortho = orthonormality_error(&f.rotation);
            if !(ortho < 1e-6) || (f.rotation.determinant() - 1.0).abs() > 1e-6 {
                return Err(err(Some(i), format!("orientation is not a rotation (error {ortho:.3e})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    /// Global scale applied to all source coordinates.
    pub scale: f64,
    /// Enables knee-guided IK for the motion types in `knee_hint_types`.
    pub use_knee_hint: bool,
    pub knee_hint_types: Vec<MotionType>,
    pub ground_height: f64,
    /// Feet slower than this (m/s) while near the ground are pinned.
    pub skate_velocity_threshold: f64,
    /// Moving-average width in frames; odd.
    pub smoothing_window: usize,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            use_knee_hint: false,
            knee_hint_types: vec![MotionType::Sit, MotionType::Lie],
            ground_height: 0.0,
            skate_velocity_threshold: 0.05,
            smoothing_window: 5,
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(ConfigError::Invalid {
                field: "scale",
                message: format!("must be > 0, got {}", self.scale),
            });
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(ConfigError::Invalid {
                field: "smoothing_window",
                message: format!("must be odd and >= 1, got {}", self.smoothing_window),
            });
        }
        if !(self.skate_velocity_threshold >= 0.0) {
            return Err(ConfigError::Invalid {
                field: "skate_velocity_threshold",
                message: "must be >= 0".into(),
            });
        }
        Ok(())
    }

    fn knee_hints_for(&self, motion_type: MotionType) -> bool {
        self.use_knee_hint && self.knee_hint_types.contains(&motion_type)
    }
}

/// IK clamp statistics of one retargeting run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetargetStats {
    pub frames: usize,
    /// Fraction of frames where any joint hit a limit or a target was out of reach.
    pub clamped_fraction: f64,
    /// Fraction of frames where either front calf was clamped.
    pub front_calf_clamped_fraction: f64,
    pub knee_hints: bool,
}

fn solve_leg(model: &RobotModel, leg: usize, frame: &SourceFrame, rotation: &Mat3, hints: bool) -> IkSolution {
    let to_base = |p: Vec3| model.mount(leg) + rotation.transpose() * (p - frame.hips[leg]);
    let foot = to_base(frame.feet[leg]);
    match (&frame.knees, hints) {
        (Some(knees), true) => model.ik_leg_with_knee(leg, &foot, &to_base(knees[leg])),
        _ => model.ik_leg_projected(leg, &foot),
    }
}

/// Scales the source, pairs keypoints and solves per-leg IK. Out-of-limit
/// solutions are clamped and counted, never fatal.
pub fn retarget_motion(
    src: &SourceMotion,
    model: &RobotModel,
    cfg: &RetargetConfig,
) -> Result<(MotionClip, RetargetStats), RetargetError> {
    src.validate()?;
    model.validate()?;
    cfg.validate()?;
    let hints = cfg.knee_hints_for(src.motion_type) && src.has_knees();
    let mut frames = Vec::with_capacity(src.frames.len());
    let (mut clamped, mut front_calf) = (0usize, 0usize);
    for f in &src.frames {
        let f = f.scaled(cfg.scale);
        let rotation = orthonormalize(&f.rotation);
        let mut joints = [0.0; NUM_JOINTS];
        let mut any = false;
        let mut front = false;
        for leg in 0..NUM_LEGS {
            let sol = solve_leg(model, leg, &f, &rotation, hints);
            any |= sol.any_clamped() || !sol.reachable;
            front |= leg < 2 && sol.clamped[2];
            joints[3 * leg..3 * leg + 3].copy_from_slice(&sol.angles);
        }
        clamped += usize::from(any);
        front_calf += usize::from(front);
        frames.push(ReferenceFrame::new(joints, rotation, f.com));
    }
    let clip = MotionClip {
        name: src.name.clone(),
        motion_type: src.motion_type,
        fps: src.fps,
        frames,
    };
    clip.validate()?;
    let n = clip.frames.len() as f64;
    let stats = RetargetStats {
        frames: clip.frames.len(),
        clamped_fraction: clamped as f64 / n,
        front_calf_clamped_fraction: front_calf as f64 / n,
        knee_hints: hints,
    };
    Ok((clip, stats))
}

fn frame_feet(model: &RobotModel, f: &ReferenceFrame) -> [Vec3; NUM_LEGS] {
    model.fk_feet(&BasePose::new(f.com, f.rotation), &f.joints)
}

/// Depth of the deepest foot sphere below `ground` (0 when clear).
pub fn frame_penetration(model: &RobotModel, f: &ReferenceFrame, ground: f64) -> f64 {
    frame_feet(model, f)
        .iter()
        .map(|p| ground + model.foot_radius - p.z)
        .fold(0.0, f64::max)
}

pub fn max_penetration(clip: &MotionClip, model: &RobotModel, ground: f64) -> f64 {
    clip.frames
        .iter()
        .map(|f| frame_penetration(model, f, ground))
        .fold(0.0, f64::max)
}

/// Re-solves IK so the feet reach the given world targets from the frame's base pose.
fn reach_world_feet(model: &RobotModel, f: &ReferenceFrame, targets: &[Option<Vec3>; NUM_LEGS]) -> [f64; NUM_JOINTS] {
    let pose = BasePose::new(f.com, f.rotation);
    let mut joints = f.joints;
    for (leg, target) in targets.iter().enumerate() {
        if let Some(t) = target {
            let sol = model.ik_leg_projected(leg, &pose.inverse_apply(t));
            joints[3 * leg..3 * leg + 3].copy_from_slice(&sol.angles);
        }
    }
    joints
}

/// Lifts each penetrating frame by its deepest foot, then re-solves IK so the
/// feet return to their world positions (clipped to the ground).
pub fn remove_ground_penetration(clip: &MotionClip, model: &RobotModel, ground: f64) -> MotionClip {
    let floor = ground + model.foot_radius;
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let depth = frame_penetration(model, f, ground);
            if depth <= PENETRATION_EPS {
                return *f;
            }
            let feet = frame_feet(model, f);
            let mut lifted = *f;
            lifted.com.z += depth;
            let targets = feet.map(|p| Some(Vec3::new(p.x, p.y, p.z.max(floor))));
            let candidate = ReferenceFrame {
                joints: reach_world_feet(model, &lifted, &targets),
                ..lifted
            };
            // Unreachable targets can leave a foot low; the plain lift never does.
            if frame_penetration(model, &candidate, ground) <= PENETRATION_EPS {
                candidate
            } else {
                lifted
            }
        })
        .collect();
    MotionClip {
        frames,
        ..clip.clone()
    }
}

fn foot_tracks(clip: &MotionClip, model: &RobotModel) -> Vec<[Vec3; NUM_LEGS]> {
    clip.frames.iter().map(|f| frame_feet(model, f)).collect()
}

/// Horizontal foot speed per frame (forward difference, last frame backward).
fn horizontal_speeds(tracks: &[[Vec3; NUM_LEGS]], fps: f64) -> Vec<[f64; NUM_LEGS]> {
    let n = tracks.len();
    (0..n)
        .map(|k| {
            if n < 2 {
                return [0.0; NUM_LEGS];
            }
            let (a, b) = if k + 1 < n { (k, k + 1) } else { (k - 1, k) };
            std::array::from_fn(|leg| {
                let d = tracks[b][leg] - tracks[a][leg];
                d.x.hypot(d.y) * fps
            })
        })
        .collect()
}

fn near_ground(model: &RobotModel, p: &Vec3, ground: f64) -> bool {
    p.z < ground + model.foot_radius + STANCE_HEIGHT_MARGIN
}

/// Mean horizontal speed of feet while they are near the ground (m/s).
pub fn skate_metric(clip: &MotionClip, model: &RobotModel, ground: f64) -> f64 {
    let tracks = foot_tracks(clip, model);
    let speeds = horizontal_speeds(&tracks, clip.fps);
    let (mut sum, mut count) = (0.0, 0usize);
    for (feet, v) in tracks.iter().zip(&speeds) {
        for leg in 0..NUM_LEGS {
            if near_ground(model, &feet[leg], ground) {
                sum += v[leg];
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Centered moving average; the window shrinks symmetrically near the ends.
pub fn moving_average(signal: &[f64], window: usize) -> Vec<f64> {
    let n = signal.len();
    let half = window / 2;
    (0..n)
        .map(|k| {
            let h = half.min(k).min(n - 1 - k);
            let s: f64 = signal[k - h..=k + h].iter().sum();
            s / (2 * h + 1) as f64
        })
        .collect()
}

/// Stance pin targets: each near-ground slow foot is held at the position it
/// had when its stance run began.
fn stance_pins(clip: &MotionClip, model: &RobotModel, cfg: &RetargetConfig) -> Vec<[Option<Vec3>; NUM_LEGS]> {
    let tracks = foot_tracks(clip, model);
    let speeds = horizontal_speeds(&tracks, clip.fps);
    let mut pins = vec![[None; NUM_LEGS]; tracks.len()];
    for leg in 0..NUM_LEGS {
        let mut anchor: Option<Vec3> = None;
        for k in 0..tracks.len() {
            let p = tracks[k][leg];
            let stance = near_ground(model, &p, cfg.ground_height) && speeds[k][leg] < cfg.skate_velocity_threshold;
            anchor = if stance { Some(anchor.unwrap_or(p)) } else { None };
            pins[k][leg] = anchor;
        }
    }
    pins
}

/// Pins stance feet, smooths joints and base position, and finally removes any
/// penetration the smoothing introduced.
pub fn cleanup(clip: &MotionClip, model: &RobotModel, cfg: &RetargetConfig) -> Result<MotionClip, RetargetError> {
    cfg.validate()?;
    let pins = stance_pins(clip, model, cfg);
    let mut frames: Vec<ReferenceFrame> = clip
        .frames
        .iter()
        .zip(&pins)
        .map(|(f, pin)| ReferenceFrame {
            joints: reach_world_feet(model, f, pin),
            ..*f
        })
        .collect();

    if cfg.smoothing_window > 1 {
        let w = cfg.smoothing_window;
        for j in 0..NUM_JOINTS {
            let series: Vec<f64> = frames.iter().map(|f| f.joints[j]).collect();
            for (f, v) in frames.iter_mut().zip(moving_average(&series, w)) {
                f.joints[j] = v;
            }
        }
        for axis in 0..3 {
            let series: Vec<f64> = frames.iter().map(|f| f.com[axis]).collect();
            for (f, v) in frames.iter_mut().zip(moving_average(&series, w)) {
                f.com[axis] = v;
            }
        }
        // Smoothing moves pinned feet slightly; put them back.
        for (f, pin) in frames.iter_mut().zip(&pins) {
            f.joints = reach_world_feet(model, f, pin);
        }
    }
    let smoothed = MotionClip {
        frames,
        ..clip.clone()
    };
    let out = remove_ground_penetration(&smoothed, model, cfg.ground_height);
    out.validate()?;
    Ok(out)
}

/// One row of the per-clip retargeting report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetargetReport {
    pub clip: String,
    pub scale: f64,
    pub clamped_fraction: f64,
    pub front_calf_clamped_fraction: f64,
    pub max_penetration_before: f64,
    pub max_penetration_after: f64,
    pub skate_before: f64,
    pub skate_after: f64,
}

impl RetargetReport {
    pub const CSV_HEADER: &'static str = "clip,scale,clamped_fraction,front_calf_clamped_fraction,max_penetration_before,max_penetration_after,skate_before,skate_after";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.clip,
            self.scale,
            self.clamped_fraction,
            self.front_calf_clamped_fraction,
            self.max_penetration_before,
            self.max_penetration_after,
            self.skate_before,
            self.skate_after
        )
    }
}

/// Full pipeline: retarget, lift out of the ground, clean up.
pub fn retarget_pipeline(
    src: &SourceMotion,
    model: &RobotModel,
    cfg: &RetargetConfig,
) -> Result<(MotionClip, RetargetReport), RetargetError> {
    let (raw, stats) = retarget_motion(src, model, cfg)?;
    let ground = cfg.ground_height;
    let lifted = remove_ground_penetration(&raw, model, ground);
    let clean = cleanup(&lifted, model, cfg)?;
    let report = RetargetReport {
        clip: src.name.clone(),
        scale: cfg.scale,
        clamped_fraction: stats.clamped_fraction,
        front_calf_clamped_fraction: stats.front_calf_clamped_fraction,
        max_penetration_before: max_penetration(&raw, model, ground),
        max_penetration_after: max_penetration(&clean, model, ground),
        skate_before: skate_metric(&raw, model, ground),
        skate_after: skate_metric(&clean, model, ground),
    };
    Ok((clean, report))
}

/// Keypoints a skeleton shaped like `skeleton` would show while playing `clip`.
pub fn source_from_clip(clip: &MotionClip, skeleton: &RobotModel, with_knees: bool) -> SourceMotion {
    let frames = clip
        .frames
        .iter()
        .map(|f| {
            let pose = BasePose::new(f.com, f.rotation);
            SourceFrame {
                hips: std::array::from_fn(|leg| pose.apply(&skeleton.mount(leg))),
                feet: skeleton.fk_feet(&pose, &f.joints),
                knees: with_knees
                    .then(|| std::array::from_fn(|leg| pose.apply(&skeleton.leg_knee(leg, leg_angles(&f.joints, leg))))),
                rotation: f.rotation,
                com: f.com,
            }
        })
        .collect();
    SourceMotion {
        name: clip.name.clone(),
        motion_type: clip.motion_type,
        fps: clip.fps,
        frames,
    }
}

/// Procedural source motion for a skeleton of the given proportions.
pub fn synthesize_source(spec: &GaitSpec, skeleton: &RobotModel, with_knees: bool) -> Result<SourceMotion, RetargetError> {
    let clip = synthesize_clip(spec, skeleton)?;
    Ok(source_from_clip(&clip, skeleton, with_knees))
}

fn push_vecs(out: &mut String, vs: &[Vec3]) {
    for v in vs {
        for x in v.iter() {
            let _ = write!(out, " {x:.16e}");
        }
    }
}

/// Writes the keypoint text format: a `QMSRC` header line then, per frame,
/// 12 hip, 12 foot, 9 rotation and 3 CoM values, plus 12 knee values when present.
pub fn write_source(src: &SourceMotion, path: &Path) -> Result<(), RetargetError> {
    let knees = src.has_knees();
    let mut out = format!(
        "{SOURCE_MAGIC} format_version={FORMAT_VERSION} name={} motion_type={} fps={:?} frame_count={} knees={}\n",
        src.name,
        src.motion_type,
        src.fps,
        src.frames.len(),
        u8::from(knees)
    );
    for f in &src.frames {
        push_vecs(&mut out, &f.hips);
        push_vecs(&mut out, &f.feet);
        for x in mat_to_row_major(&f.rotation) {
            let _ = write!(out, " {x:.16e}");
        }
        push_vecs(&mut out, &[f.com]);
        if let Some(k) = &f.knees {
            push_vecs(&mut out, k);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| RetargetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_source(path: &Path) -> Result<SourceMotion, RetargetError> {
    let text = fs::read_to_string(path).map_err(|source| RetargetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("?").to_string();
    let bad = |frame: Option<usize>, message: String| RetargetError::InvalidSource {
        name: stem.clone(),
        frame,
        message,
    };
    let mut lines = text.lines();
    let mut header = lines.next().unwrap_or("").split_whitespace();
    if header.next() != Some(SOURCE_MAGIC) {
        return Err(bad(None, format!("missing `{SOURCE_MAGIC}` header")));
    }
    let (mut name, mut motion_type, mut fps, mut count, mut knees, mut version) = (None, None, None, None, None, None);
    for kv in header {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(None, format!("malformed header field `{kv}`")))?;
        let perr = |e: String| bad(None, format!("header field `{k}`: {e}"));
        match k {
            "format_version" => version = Some(v.parse::<u32>().map_err(|e| perr(e.to_string()))?),
            "name" => name = Some(v.to_string()),
            "motion_type" => motion_type = Some(v.parse::<MotionType>().map_err(perr)?),
            "fps" => fps = Some(v.parse::<f64>().map_err(|e| perr(e.to_string()))?),
            "frame_count" => count = Some(v.parse::<usize>().map_err(|e| perr(e.to_string()))?),
            "knees" => knees = Some(v == "1" || v == "true"),
            other => return Err(bad(None, format!("unknown header field `{other}`"))),
        }
    }
    if version != Some(FORMAT_VERSION) {
        return Err(bad(None, format!("unsupported format_version {version:?}")));
    }
    let missing = |f: &str| bad(None, format!("header missing {f}"));
    let knees = knees.unwrap_or(false);
    let width = if knees { 48 } else { 36 };
    let mut frames = Vec::new();
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|e| bad(Some(i), e.to_string()))?;
        if v.len() != width {
            return Err(bad(Some(i), format!("expected {width} values, got {}", v.len())));
        }
        let vec3 = |o: usize| Vec3::new(v[o], v[o + 1], v[o + 2]);
        frames.push(SourceFrame {
            hips: std::array::from_fn(|l| vec3(3 * l)),
            feet: std::array::from_fn(|l| vec3(12 + 3 * l)),
            rotation: mat_from_row_major(&v[24..33]),
            com: vec3(33),
            knees: knees.then(|| std::array::from_fn(|l| vec3(36 + 3 * l))),
        });
    }
    let count = count.ok_or_else(|| missing("frame_count"))?;
    if frames.len() != count {
        return Err(bad(None, format!("frame_count {count} but {} frames", frames.len())));
    }
    let src = SourceMotion {
        name: name.ok_or_else(|| missing("name"))?,
        motion_type: motion_type.ok_or_else(|| missing("motion_type"))?,
        fps: fps.ok_or_else(|| missing("fps"))?,
        frames,
    };
    src.validate()?;
    Ok(src)
}
