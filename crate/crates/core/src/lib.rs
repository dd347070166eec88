//! Path transformations of one-dimensional regular diffusions and their
//! applications: exit-time Monte Carlo, bubble pricing, optimal stopping.

pub mod coeffs;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod optstop;
pub mod pde;
pub mod potentials;
pub mod quad;
pub mod simulate;
pub mod stats;
pub mod transforms;

pub use coeffs::{expand_family, parse_expr, Coef, Expr, ModelFamily};
pub use diffusion::{classify, check_engelbert_schmidt, DiffusionSpec, Limit, ScaleSpeed, Side};
pub use error::{Error, Result};
pub use quad::Verdict;
