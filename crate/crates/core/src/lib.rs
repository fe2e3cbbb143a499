//! Arithmetic differential operators of finite level over `Z_p`, their
//! microlocalizations along a homogeneous symbol, and characteristic
//! varieties of cyclic modules on the line.

pub mod charvar;
pub mod diffop;
pub mod error;
pub mod filtered;
pub mod linalg;
pub mod microloc;
pub mod padic;
pub mod poly;
pub mod pseudodiff;
pub mod pseudopoly;

pub use diffop::{DiffOp, Side};
pub use error::{Error, Result};
pub use microloc::{Chart, Localizer, MicroOp};
pub use padic::{ExactRational, PadicScalar, Valuation};
pub use poly::Poly;
pub use pseudodiff::PseudoDiff;
pub use pseudopoly::{CoeffRing, SymbolPoly};
