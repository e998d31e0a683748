//! Pixel-to-action deep Q-learning for a simulated grasping arm.

pub mod config;
pub mod dqn;
pub mod geom;
pub mod harness;
pub mod nn;
pub mod render;
pub mod selftest;
pub mod sim;
