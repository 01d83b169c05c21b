//! Compressed-video quality enhancement with a motion-compensated
//! slow-fusion network: a small autodiff engine, a block-transform codec
//! stand-in, the network itself, training, evaluation and frame I/O.

pub mod checkpoint;
pub mod clip;
pub mod codec;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod frame_io;
pub mod gradcheck;
pub mod mc;
pub mod net;
pub mod params;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use clip::{Clip, Frame, Label, Role};
pub use error::{Error, Result};
pub use net::{Model, NetConfig};
pub use trainer::{TrainConfig, Variant};
