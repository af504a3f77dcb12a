//! Encoder, heads, and the layers they are built from.

pub mod encoder;
pub mod heads;
pub mod layers;

pub use encoder::{Encoder, EncoderConfig};
pub use heads::{DeapsModel, MlpHead};
pub use layers::{BatchNorm1d, Init, LayerNorm, Linear};
