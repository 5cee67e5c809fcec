//! State-conditional adversarial domain transfer for imitation learning,
//! on a synthetic Frenet-frame driving world.

pub mod agent;
pub mod alignment;
pub mod cli;
pub mod evaluation;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod world;
