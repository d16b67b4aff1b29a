//! Correlated exciton and biexciton states of a single semiconductor quantum
//! dot, and optical two-qubit gates built on the biexcitonic energy shift.
//!
//! The pipeline runs bottom-up:
//!
//! 1. [`confinement`]: effective-mass single-particle states of a dot that is
//!    parabolic in-plane and box-like along the growth axis.
//! 2. [`coulomb`]: four-index Coulomb matrix elements (quasi-2-D momentum
//!    space), with a real-space brute-force oracle and a disk cache.
//! 3. [`manybody`]: exact diagonalization of the exciton and spin-polarized
//!    biexciton problems, state identification and the qubit assignment.
//! 4. [`optics`]: dipole elements, conditioned absorption spectra and the
//!    conditional transition table.
//! 5. [`gatesim`]: pulse propagation, C-NOT synthesis, NOT composition and
//!    leakage analysis.
//! 6. [`pipeline`]: config-driven stages used by the `qdgate` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confinement;
pub mod coulomb;
pub mod error;
pub mod gatesim;
pub mod krylov;
pub mod manybody;
pub mod optics;
pub mod pipeline;
pub mod quadrature;
pub mod units;

pub use confinement::{DotGeometry, MaterialParams, SingleParticleBasis, SingleParticleState, Species};
pub use coulomb::{CoulombKind, CoulombOptions, CoulombTensor};
pub use error::{Error, Result};
pub use gatesim::{GateReport, Pulse, PulseEnvelope, PulseSequence, StateVector};
pub use manybody::{BiexcitonState, ExcitonState, ManyBodySpectrum, QubitMap, QubitState};
pub use optics::{DipoleTable, Spectrum};
pub use pipeline::RunConfig;
