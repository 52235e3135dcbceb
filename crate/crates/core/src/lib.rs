pub mod corpus;
pub mod grid;
pub mod linearizer;
pub mod rng;
pub mod swapgen;
pub mod engine;
pub mod metrics;
pub mod models;
pub mod analysis;
pub mod cli;
