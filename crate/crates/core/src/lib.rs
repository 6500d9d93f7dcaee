//! Blind quantum source separation on a qubit pair.
//!
//! Two spin-1/2 qubits are prepared separately in pure states, evolve under an
//! unknown cylindrical Heisenberg coupling (the *mixer*), and must be brought
//! back to a product state by a tunable inverting block (the *unmixer*) whose
//! free phases are adapted blindly against a disentanglement cost.
//!
//! Module map:
//!
//! - [`qstate`]: one- and two-qubit pure-state algebra, the `c1 c4 = c2 c3`
//!   unentanglement test, reduced-state purity, Schmidt number, factorization.
//! - [`measurement`]: joint spin-component measurement statistics (exact and
//!   sampled), the probability-triplet criterion and state reconstruction from
//!   five measurement settings.
//! - [`mixer`]: the Heisenberg mixing unitary `M = Q D Q` and closed-form
//!   `zz` probabilities.
//! - [`separator`]: the unmixer `U = Q D~ Q`, cost functions, blind adaptation.
//! - [`sources`]: random field directions and the random product sources they
//!   induce, independence diagnostics and ensemble density operators.
//! - [`cli`]: scenario runner behind the `bqss` binary.
//!
//! Conventions: the standard basis is ordered `|++>, |+->, |-+>, |-->`, the
//! first symbol referring to qubit 1, and `hbar = 1`.

pub mod cli;
mod error;
pub mod linalg;
pub mod measurement;
pub mod mixer;
pub mod optimize;
pub mod qstate;
pub mod rng;
pub mod separator;
pub mod sources;

pub use error::{Error, Result};
pub use measurement::{Axis, OutcomeCounts, ProbabilityQuad, Setting};
pub use mixer::{CouplingParams, MixingMatrix};
pub use qstate::{PairState, SingleState, SpinDirection};
pub use separator::{AdaptationConfig, AdaptationReport, UnmixerParams};
pub use sources::{DirectionDistribution, SourceModel, SourcePair};

/// Complex amplitude type used throughout.
pub type Amplitude = num_complex::Complex64;

/// Default tolerance for paths that are exact up to rounding.
pub const DEFAULT_TOL: f64 = 1e-10;
