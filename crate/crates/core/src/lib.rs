//! CP decomposition of matrix-multiplication tensors.
//!
//! The crate builds the tensor `T_PQS` of `E(P×Q)·F(Q×S)`, searches for
//! rank-R decompositions `[[A, B, C]]` with a Levenberg-Marquardt solver
//! restricted to a sphere `‖θ‖² = c`, sparsifies exact fits with the
//! tensor's symmetry transforms, snaps them to small rationals, verifies
//! them in exact arithmetic, and exports the result as a bilinear
//! multiplication algorithm.
//!
//! Tensor and factor types are generic over [`Scalar`]; the solvers are
//! generic over [`Real`]. The aliases below name the instantiations used by
//! the command-line tool.

pub mod bilinear;
pub mod cp;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod matrix;
pub mod rationalize;
pub mod rng;
pub mod scalar;
pub mod sparsify;
pub mod tensor;

pub use num_rational::BigRational;

pub use cp::{compose, gradient_and_gn_hessian, jacobian, residual_cost, FactorTriple, ParamVector};
pub use error::{Error, Result};
pub use lm::{multi_restart, solve, RunOutcome, SolverConfig, Status, StepVariant};
pub use matrix::Matrix;
pub use scalar::{Real, Scalar};
pub use tensor::{apply_bilinear, build_matmul_tensor, MatMulDims, Tensor3};

/// Float tensor used by the optimizers.
pub type DenseTensor3 = Tensor3<f64>;
/// Exact tensor used for verification.
pub type ExactTensor3 = Tensor3<BigRational>;
pub type FloatFactors = FactorTriple<f64>;
pub type ExactFactors = FactorTriple<BigRational>;
pub type FloatMatrix = Matrix<f64>;
pub type ExactMatrix = Matrix<BigRational>;
