//! Desk-scale laboratory for learned adaptive API rate limiting.
//!
//! The crate wires together a discrete-time microservice simulator
//! ([`sim`]), a multi-objective reward ([`reward`]), from-scratch MLP
//! machinery ([`nn`]), a hybrid DQN/A3C agent ([`agents`]), classic
//! controller baselines ([`baselines`]), and the training/evaluation
//! harness with its CLI-facing experiment drivers ([`harness`]).

pub mod agents;
pub mod baselines;
pub mod harness;
pub mod nn;
pub mod reward;
pub mod sim;
pub mod state;
