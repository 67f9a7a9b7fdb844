//! Nonnegative PARAFAC2 by flexible coupling.
//!
//! The crate decomposes ragged three-way data (slices `M_k` of shape
//! `n × m_k`) as `M_k ≈ A · diag(C[k,:]) · B_kᵀ`. Two solvers are provided:
//!
//! * [`flexible::run_flexible`] keeps `A`, `C` and every `B_k` nonnegative and
//!   couples the `B_k` through a penalty `μ_k ||B_k − P_k B*||²` whose weights
//!   grow over the run;
//! * [`classic::run_classic`] is the unconstrained alternating least squares
//!   baseline with exact coupling `B_k = P_k B*`.
//!
//! [`synth`] generates shifted ground-truth data, [`metrics`] scores factor
//! recovery and [`montecarlo`] runs the noise-sweep comparison of both
//! solvers. Per-slice work runs on rayon when the `parallel` feature is on.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classic;
pub mod error;
pub mod exec;
pub mod flexible;
pub mod linalg;
pub mod metrics;
pub mod montecarlo;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Execution;
pub use solver::{fit_multistart, random_init, RunReport, SolverConfig, SolverKind, Termination};
pub use synth::{gen_dataset, SynthGroundTruth, SynthSpec};
pub use tensor::{fit_residuals, normalize_columns, Parafac2Factors, RaggedTensor};
