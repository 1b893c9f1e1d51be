//! Minimal dense network toolkit: a reverse-mode tape over vector values,
//! GRU cells, MLPs, an Adam optimizer and a checksummed weight container.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::Adam;
pub use error::{NnError, Result};
pub use gradcheck::{adaptive_diff_check, finite_diff_check, GradCheck};
pub use layers::{gru_step, mlp_apply, Activation, GruCell, Linear, Mlp};
pub use params::{Grads, Init, ParamId, ParamStore};
pub use tape::{Tape, Var};
