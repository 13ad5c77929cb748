pub mod basis;
pub mod convergence;
pub mod counters;
pub mod dof;
pub mod error;
pub mod exchange;
pub mod geometry;
pub mod lanes;
pub mod mesh;
pub mod operators;
pub mod oracle;
pub mod perf;
pub mod solvers;
pub mod tensor;
