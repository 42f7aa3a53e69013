//! Symbolic-numeric toolkit for the local analytic classification of
//! irregular linear q-difference systems with integral slopes.
//!
//! The crate works on block upper-triangular systems
//! `A_U = diag(z^{-mu_i} A_i) + (U_ij)` whose entries are complex Laurent
//! series truncated to finite coefficient windows. It provides
//!
//! * [`laurent`]: windowed Laurent arithmetic, the `sigma_q` action and
//!   matrices of series;
//! * [`theta`]: Jacobi theta functions, divisors on the elliptic curve
//!   `E_q = C*/q^Z` and the multiplier functions used to flatten slopes;
//! * [`system`]: block shapes, the unipotent gauge group and its action;
//! * [`borel`]: q-Borel transforms, the obstruction invariant and
//!   Birkhoff-Guenther normal forms;
//! * [`summation`]: summation of the formal gauge along a divisor;
//! * [`stokes`]: Stokes cocycles, q-Gevrey flatness levels and the
//!   analytic-equivalence classifier;
//! * [`io`]: problem files, certificates and the CLI pipeline.

pub mod borel;
pub mod error;
pub mod io;
pub mod laurent;
pub mod linalg;
pub mod stokes;
pub mod summation;
pub mod system;
pub mod theta;

pub use error::{Error, Result};
pub use laurent::{QContext, SeriesMatrix, WindowedLaurent};
pub use num_complex::Complex64;
