pub mod attribution;
pub mod blocks;
pub mod check;
pub mod config;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod network;
pub mod params;
pub mod reference;
pub mod tensor;
pub mod training;
pub mod weights;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use network::{estimate_flops, EstnWeights};
