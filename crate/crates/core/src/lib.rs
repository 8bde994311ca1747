pub mod biht;
pub mod bounds;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sensing;
pub mod signal;
pub mod tessellation;
pub mod transform;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use sensing::{BinaryVector, OperatorBank};
pub use signal::{ShiftGroup, SignalModel};
pub use biht::{Biht, BihtConfig};
pub use bounds::{BoundSpec, LogBase};
pub use eval::{EvalReport, Method};
pub use experiment::{ExperimentConfig, ExperimentKind};
pub use learn::{Dataset, LossKind, Mode, NetworkParams, TrainConfig};
pub use transform::Basis;
