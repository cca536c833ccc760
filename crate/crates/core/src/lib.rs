//! Workbench for a qudit prepare-and-measure QKD scheme over GF(2^n): exact
//! state algebra, channel models, raw-key estimators, two-way distillation,
//! the tolerable error-rate analysis, and a networked role runner.

pub mod analysis;
pub mod channels;
pub mod distill;
pub mod field;
pub mod netrun;
pub mod protocol;
pub mod qstates;
pub mod threshold;
pub mod verify;

pub use channels::{BuiltinChannel, ChannelModel};
pub use field::{Field, FieldElement, FieldSpec};
pub use protocol::{run_session, SessionConfig, SessionOutput, SessionStats};
