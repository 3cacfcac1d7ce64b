//! Periodic second-order ODEs `-u'' = f(t, u, u')` between ordered lower and
//! upper solutions: barrier verification, the truncated field, Dirichlet
//! shooting, periodic orbits, asymptotic trajectories and band dynamics.

pub mod error;
pub mod asymptotic;
pub mod banddyn;
pub mod curves;
pub mod dirichlet;
pub mod expr;
pub mod field;
pub mod flow;
pub mod modify;
pub mod periodic;
pub mod quad;

pub use error::{Error, Result};
pub use field::{Field, NagumoSpec};
