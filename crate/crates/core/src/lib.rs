//! Bit-exact software model of a context-sensitive two-point neuron
//! accelerator, with zero-skip energy and latency accounting and a desk-scale
//! float trainer.

pub mod energy;
pub mod fixedpoint;
pub mod io;
pub mod network;
pub mod neuron;
pub mod toytrain;
pub mod trace;

pub use fixedpoint::{FxSample, MulQuant, OverflowFlag, QFormat};
pub use network::{NetMode, NetworkInstance, NetworkSpec};
pub use trace::ActivityTrace;
