//! Formula AST, SMT-LIB2 emission, the solver process driver and model
//! parsing.

pub mod model;
pub mod script;
pub mod solver;
pub mod term;

pub use model::{parse_model, Model, Value};
pub use script::Script;
pub use solver::{run_solver, run_solver_labeled, solver_available, InputMode, SolverConfig, SolverVerdict, Status};
pub use term::{CmpOp, Sort, Term};
