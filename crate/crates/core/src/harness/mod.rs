//! Dataset generation, evaluation, experiments, plots and the CLI.

pub mod cli;
pub mod dataset_gen;
pub mod evaluation;
pub mod experiment;
pub mod plot;
