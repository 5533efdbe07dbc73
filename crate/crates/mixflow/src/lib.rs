//! Desk-scale, deterministic-by-seed simulator of mixed human/robot vehicle
//! traffic over multi-intersection road networks, with a neighbor-aware
//! reinforcement-learning coordinator for the robot vehicles, baseline
//! controllers, and an evaluation harness.
//!
//! Module map:
//! - [`net`]: road networks (graph model, document format, generators)
//! - [`traffic`]: vehicles, demand, car-following dynamics
//! - [`sim`]: the world stepper, conflict detection, metrics
//! - [`controllers`]: pre-timed signals, all-way stop, random policy
//! - [`mdp`]: observations, rewards, decision scheduling, episode API
//! - [`agent`]: the deep Q-learner (network, replay, training)
//! - [`harness`]: experiment configs, training/eval runs, reports

pub mod controllers;
pub mod mdp;
pub mod net;
pub mod seeding;
pub mod sim;
pub mod traffic;

pub use net::{NetError, RoadNetwork};
