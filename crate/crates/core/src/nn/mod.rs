pub mod model;
pub mod ops;
pub mod spec;

pub use model::{backward, default_scalings, forward, ExactBackend, InputScaling, LinearBackend, LinearOut, Trace};
pub use spec::{build_cnn, build_crnn, LayerKind, LayerSpec, NetworkSpec, WeightSlot};
