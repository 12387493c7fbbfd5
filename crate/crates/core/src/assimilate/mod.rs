//! Hyperparameter estimation: empirical objective, grid minimizer and a
//! perturbed-observation ensemble Kalman filter over simulator replicas.

mod enkf;
mod objective;
mod simulator;

pub use enkf::{
    default_obs_variance, enkf_assimilate_step, enkf_init, enkf_run, ClipMode, EnkfConfig, Ensemble,
    EstimateTrace, Member, Perturbations, Prior, PriorSampling, TraceStep,
};
pub use objective::{
    empirical_objective, grid_minimize, grid_points, grid_search, noisy_observe, series_objective, GridSearch,
};
pub use simulator::{record, IdentityFactory, IdentityModel, ModelFactory, ModelKind, Simulator};

#[cfg(test)]
mod tests;
