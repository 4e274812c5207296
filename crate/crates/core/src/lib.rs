//! Active-set identification for smooth constrained problems
//! `min f(x)` s.t. `e(x) = 0`, `c(x) ≤ 0`, from exact or noisy evaluations.
//!
//! Two identifiers are provided: a multiplier-fitting LP with a threshold
//! rule ([`lp::identify_lp`]) and an ℓ₁-penalized step QP solved through its
//! box-constrained dual ([`qp::identify_qp`]). The linear algebra and the
//! KKT residuals are generic over [`Real`] (`f32` and `f64`); the experiment
//! drivers in [`experiments`] and the property suites in [`verify`] use `f64`.

#![allow(
    clippy::approx_constant,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop
)]

pub mod experiments;
pub mod kkt;
pub mod lp;
pub mod numerics;
pub mod problem;
pub mod qp;
pub mod scalar;
pub mod verify;

pub use kkt::{ActiveSet, KktError, MultiplierPair};
pub use lp::{identify_lp, LpError, LpLpecParams, LpLpecResult};
pub use numerics::{Matrix, NumericsError, Vector};
pub use problem::{
    builtin_problem, evaluate_exact, evaluate_noisy, ErrorBounds, Evaluation, NoiseSpec,
    ProblemOracle,
};
pub use qp::{identify_qp, QpError, QpParams, QpResult};
pub use scalar::Real;

pub type Vector64 = Vector<f64>;
pub type Matrix64 = Matrix<f64>;
pub type Evaluation64 = Evaluation<f64>;
pub type Vector32 = Vector<f32>;
pub type Matrix32 = Matrix<f32>;
pub type Evaluation32 = Evaluation<f32>;
