//! Roll-to-roll web tension control lab: a multi-span tension/velocity
//! simulator wrapped as an RL environment, a from-scratch Soft Actor-Critic
//! with curriculum training, LQR/MPC baselines and the evaluation bench.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod env;
pub mod evalbench;
pub mod nnet;
pub mod plant;
pub mod rng;
pub mod sac;

#[cfg(test)]
mod invariants;
