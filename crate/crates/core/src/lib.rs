//! Dantzig–Wolfe decomposition for quasi-variational inequalities.
//!
//! A QVI asks for `x ∈ K(x)` with `<F(x), y - x> >= 0` for all `y ∈ K(x)`,
//! where `K(x) = {y : g(y, x) <= 0} ∩ K_h` and `K_h` is a product of simple
//! sets. [`engine::run_dw`] alternates between a small master QVI over the
//! convex hull of generated columns and a VI subproblem over `K_h` whose
//! solution is the next column.

pub mod bench;
pub mod direct;
pub mod engine;
pub mod error;
pub mod io;
mod linalg;
pub mod master;
pub mod model;
pub mod problems;
mod semismooth;
pub mod sets;
pub mod vi;

pub use error::{Error, Result};
