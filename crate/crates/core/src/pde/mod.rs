//! Finite-difference solvers on rectangular grids: policy evaluation for each
//! criterion, policy iteration, and the finite-horizon HJB equation.

pub mod generator;
pub mod hjb;
pub mod linalg;
pub mod riccati;
pub mod solvers;

pub use generator::{discretize_generator, discretize_generator_at, DiscreteGenerator, Discretization};
pub use hjb::{
    evaluate_parabolic, solve_hjb_discounted, solve_hjb_ergodic, solve_hjb_exit, solve_hjb_parabolic,
    solve_hjb_parabolic_with, ArgminRefresh, HjbSolution, ParabolicSolution, ParabolicValues,
};
pub use riccati::{riccati_ergodic, riccati_oracle, RiccatiSolution};
pub use solvers::{
    exit_grid, solve_discounted, solve_discounted_with_alpha, solve_ergodic, solve_exit, vanishing_discount,
    SolveReport,
};
