//! Single-policy motion imitation for quadrupeds.
//!
//! The crate is organised bottom-up:
//!
//! * [`motion`]: reference clips, their on-disk formats, interpolation and a
//!   procedural gait synthesizer.
//! * [`kinematics`]: leg forward/inverse kinematics and collision points.
//! * [`retarget`]: keypoint-based retargeting with penetration and skate cleanup.
//! * [`sim`]: a penalty-contact floating-base surrogate with PD-actuated legs.
//! * [`env`]: observation/action/reward/termination and the episode loop.
//! * [`ams`]: adaptive motion sampling over successful/unsuccessful clip sets.
//! * [`learner`]: MLP policy, PPO with GAE, checkpoints and the training loop.
//! * [`harness`]: CLI, experiments and plot emission.

pub mod ams;
pub mod config;
pub mod env;
pub mod harness;
pub mod kinematics;
pub mod learner;
pub mod motion;
pub mod retarget;
pub mod sim;
pub mod spatial;

pub use kinematics::{BasePose, RobotModel};
pub use motion::{Dataset, MotionClip, MotionType, ReferenceFrame};
