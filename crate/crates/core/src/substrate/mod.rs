//! Minimal differentiable substrate: dense tensors, a reverse-mode tape,
//! recurrent cells and finite-difference checking.

pub mod gradcheck;
pub mod lstm;
pub mod param;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport, Stencil};
pub use lstm::{
    bidirectional_sequence, lstm_cell, lstm_sequence, lstm_step, CellVars, LstmIds, LstmVars,
    RecurrentCellState,
};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{PrimitiveKind, Tape, Var};
pub use tensor::{Real, Tensor};
