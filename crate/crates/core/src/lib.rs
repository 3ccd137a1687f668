//! Person-context personality recognition from skeleton streams.
//!
//! The pipeline turns tracked 2-D skeletons into image-like descriptors
//! (individual motion, pooled social-group motion, proxemics towards people
//! or scene regions), encodes each with a frozen convolutional backbone,
//! fuses the streams and classifies with a small softmax head.

pub mod backbone;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod head;
pub mod kv;
pub mod labels;
pub mod pct;
pub mod pipeline;
pub mod pose_io;
pub mod scene_regions;
pub mod synth;

pub use error::{Error, Result};
