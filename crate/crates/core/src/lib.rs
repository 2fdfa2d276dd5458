//! Edgeworth expansions for decomposable statistics in generalized urn
//! models, together with the exact and Monte-Carlo oracles used to check
//! them.
//!
//! The pipeline runs in four steps:
//!
//! 1. [`urn`] builds a model of independent cells conditioned on their
//!    total, calibrated so that the conditioning drift vanishes.
//! 2. [`decomposable`] centers a kernel against the model and produces the
//!    standardized joint moments of the kernel residual and the frequency.
//! 3. [`edgeworth`] turns those moments into the expansion polynomial and
//!    evaluates the CDF, lattice point masses and continuity corrections.
//! 4. [`oracle`] computes the exact conditional law by convolution, the
//!    conditional characteristic function by quadrature and Monte-Carlo
//!    samples, while [`diagnostics`] and [`catalog`] report applicability
//!    gates and closed-form parameter lists.

pub mod catalog;
pub mod decomposable;
pub mod diagnostics;
pub mod edgeworth;
pub mod error;
pub mod numeric;
pub mod oracle;
pub mod urn;

pub use decomposable::{center, CenteredStat, IncrementLaw, Kernel, KernelConfig};
pub use edgeworth::{build_w, ExpansionResult, ItPolynomial, Lattice};
pub use error::{Error, Result};
pub use oracle::{exact_pmf, ExactDist, ExactOptions};
pub use urn::{CellLaw, Family, GumSpec, ModelConfig};
