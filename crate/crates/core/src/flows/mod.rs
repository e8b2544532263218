//! Model zoo: assembly, exact log-density, sampling and persistence.

pub mod element;
pub mod model;
pub mod spec;

pub use element::ElementTransform;
pub use model::{FlowModel, Prepared, MVN_DIAG_FLOOR};
pub use spec::{ContextMode, ModelKind, ModelSpec, Permutation, ShiftKind};
