//! Simulation and performance-bound analysis of a sparse, row-stationary DNN
//! accelerator with a hierarchical mesh on-chip network.

pub mod arch;
pub mod cli;
pub mod csc;
pub mod engine;
pub mod eyexam;
pub mod mapper;
pub mod noc;
pub mod pe;
pub mod tensor_file;
pub mod workload;
