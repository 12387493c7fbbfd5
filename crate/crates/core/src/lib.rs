//! Simulation and hyperparameter estimation for network dynamical systems:
//! an SIS epidemic and a leaky integrate-and-fire network, mean-type
//! observations, an ensemble Kalman filter and scaling experiments.

pub mod assimilate;
pub mod dist;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod nls;
pub mod par;
pub mod params;
pub mod rng;
pub mod sis;
pub mod snn;
