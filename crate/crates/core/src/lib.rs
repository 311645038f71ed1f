//! Finite-horizon Hamilton-Jacobi-Bellman equations with Lipschitz,
//! linear-growth coefficients: a monotone finite-difference solver with
//! control-truncation escalation, a Cole-Hopf oracle for the quadratic
//! family, Monte Carlo verification, measured a-priori certificates, and
//! the two matrix inequalities behind the gradient estimate.

pub mod cole_hopf;
pub mod estimates;
pub mod grid;
pub mod matrix_lemmas;
pub mod mc_verify;
pub mod pde_solver;
pub mod problem;

pub use grid::{Grid, GridError, ValueFunction};
pub use pde_solver::{ControlField, EscalationConfig, SchemeConfig, SolverError, TruncationTrace};
pub use problem::{quadratic_problem, HJBProblem, QuadraticSpec, RegularityConstants};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
