pub mod cli;
pub mod config;
pub mod dist;
pub mod error;
pub mod history;
pub mod mechanism;
pub mod quad;
pub mod sim;
pub mod solver;
pub mod stochastic;
