//! Value functions of finite-horizon controlled diffusions whose
//! Hamiltonian may be unbounded: face-lifted terminal data, a monotone
//! finite-difference solver for the constrained HJB equation, a
//! Monte-Carlo simulator, and a statistical certifier of sub- and
//! super-solution candidates.

pub mod certify;
pub mod cli;
pub mod error;
pub mod facelift;
pub mod grid;
pub mod oracles;
pub mod policy;
pub mod problem;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use policy::{FeedbackPolicy, PolicyTable};
pub use solver::{
    extract_policy, solve_hjb, terminal_data, ConstraintMode, SchemeConfig, SpaceTimeSolution, TerminalMode, TimeStepping,
};
pub use grid::{AxisSpec, GridFunction, Spacing, SpatialGrid};
pub use problem::{
    Constraint, ControlBox, ControlGrid, ControlProblem, ControlSet, Dynamics, Gauge, Payoff, ProblemSpec,
    StateDomain,
};
