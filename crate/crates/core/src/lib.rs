//! Exact symbolic machinery for checking when a line bundle on a Lagrangian
//! subvariety deforms to a module over a quantized structure sheaf.
//!
//! Everything is computed over arbitrary-precision rationals; there are no
//! floating-point tolerances anywhere. The crate is organised around six
//! layers:
//!
//! * [`series`] — truncated multivariate formal series (Laurent-type on chart
//!   overlaps) and differential forms, the scalar coefficient ring for all
//!   other modules;
//! * [`weyl`] — the homogeneous Weyl algebra with normal-ordered arithmetic,
//!   its grading and filtration, and the quadratic embedding of `sp(2n)`;
//! * [`lagmodule`] — the standard module `k[[x, h]]` with `y_j` acting as
//!   `h ∂_j`, the trace-weight formula, and the constructive trivialisation
//!   of flat module data;
//! * [`star`] — Moyal and general bidifferential star products on affine
//!   charts, associativity defects, and first-order transition solving;
//! * [`cech`] — small explicit atlases, line bundles, first Chern classes,
//!   and obstruction-class extraction in the truncated de Rham complex;
//! * [`verdict`] — the scenario format and the quantizability report.


pub mod cech;
pub mod error;
pub mod lagmodule;
pub mod linalg;
pub mod parse;
pub mod series;
pub mod star;
pub mod verdict;
pub mod weyl;

pub use error::{Error, Result};
pub use series::{DifferentialForm, Q, ScalarSeries, Validity, Var};
pub use weyl::{SpMatrix, WeylElement};
