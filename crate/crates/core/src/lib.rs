//! Frame-rate-agnostic multi-object tracking: multi-rate benchmark
//! simulation, a synthetic detector, the FAAM association network with
//! periodic pattern training, a two-stage online tracker and evaluation
//! metrics.

pub mod assignment;
pub mod association;
pub mod benchmark;
pub mod error;
pub mod faam;
pub mod framerate_sim;
pub mod metrics;
pub mod mot_io;
pub mod pts;
pub mod motion_model;
pub mod scene;
pub mod seeding;
pub mod synth_detector;
pub mod tracker;

pub use error::{Error, Result};
pub use mot_io::{BoundingBox, BoxOffset, Detection, GtEntry, Sequence, TrackResult, TrackRow};
