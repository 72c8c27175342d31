//! Benchmark workbench for the 1D singularly perturbed convection-diffusion
//! equation `-ε u'' + F u' = f` with Robin boundary conditions.
//!
//! Five neural-network loss formulations are trained with L-BFGS and compared
//! against a P1 finite-element baseline and the closed-form solution:
//!
//! | tag   | unknown             | loss                                  |
//! |-------|---------------------|---------------------------------------|
//! | `v`   | `u`                 | squared strong residual + boundary    |
//! | `vz`  | `z = u e^{-V/2ε}`   | squared strong residual of z-problem  |
//! | `w`   | `u`                 | energy of the z-problem, written in u |
//! | `wz`  | `z`                 | energy of the z-problem               |
//! | `rwz` | `z̃` on `(0, 1/ε)`   | energy of the rescaled z-problem      |

pub mod fem;
pub mod formulations;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod precision;
pub mod problem;
pub mod runner;
pub mod sampling;

pub use fem::FemSystem;
pub use formulations::{Formulation, LossBreakdown, Method, TrainedModel};
pub use metrics::{compute_errors, ErrorReport};
pub use network::{Architecture, EvalTriple, NetworkParams};
pub use optimizer::{minimize, LbfgsConfig, OptimResult, OptimStatus};
pub use precision::Precision;
pub use problem::{solve_analytic, AnalyticSolution, Endpoint, ProblemSpec};
pub use runner::{run_single, run_sweep, RunConfig, RunRecord, SweepConfig};
pub use sampling::{QuadratureRule, Scheme};
