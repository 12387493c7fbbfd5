//! Discrete-time stochastic SIS epidemic on a directed network.
//!
//! Node `i` is susceptible (`0`) or infected (`1`). All nodes update
//! synchronously from the previous snapshot: a susceptible node becomes
//! infected with probability `1 - prod_k (1 - gamma_i * w_ki * xi_k)` over its
//! in-neighbors, an infected node recovers with probability `lambda_i`.
//! Step `t` reads words `2i` and `2i + 1` of the substream `[t]` of the
//! trajectory stream, so serial and parallel stepping agree bit for bit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assimilate::{ModelFactory, ModelKind, Simulator};
use crate::dist::unit_exponential;
use crate::error::{Error, Result};
use crate::graph::{gen_topology_bernoulli, gen_topology_fixed_indegree, DegreeModel, NetworkTopology};
use crate::params::{HyperParams, ObservationSeries};
use crate::rng::RngStream;

pub const H_GAMMA: &str = "h_gamma";
pub const H_LAMBDA: &str = "h_lambda";

/// Per-node infection and recovery probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SisParams {
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl SisParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.gamma.len() != n || self.lambda.len() != n {
            return Err(Error::Shape(format!(
                "SIS parameters have lengths {}/{} for n = {n}",
                self.gamma.len(),
                self.lambda.len()
            )));
        }
        if self
            .gamma
            .iter()
            .chain(&self.lambda)
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Domain("SIS rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SisState {
    pub xi: Vec<u8>,
    pub t: u64,
}

impl SisState {
    pub fn n(&self) -> usize {
        self.xi.len()
    }

    pub fn infected(&self) -> usize {
        self.xi.iter().map(|&x| x as usize).sum()
    }
}

/// Independent Bernoulli(`p_init`) initial states.
pub fn sis_init(n: usize, p_init: f64, rng: &mut RngStream) -> Result<SisState> {
    if !(0.0..=1.0).contains(&p_init) {
        return Err(Error::Domain(format!("p_init must lie in [0, 1], got {p_init}")));
    }
    let xi = (0..n).map(|_| u8::from(rng.uniform_open() < p_init)).collect();
    Ok(SisState { xi, t: 0 })
}

fn scaled_probabilities(unit: &[f64], mean: f64) -> Vec<f64> {
    unit.iter().map(|u| (u * mean).clamp(0.0, 1.0)).collect()
}

/// Exponential rates with means `h_gamma` / `h_lambda`, clipped to [0, 1].
pub fn sis_sample_params(n: usize, h_gamma: f64, h_lambda: f64, rng: &mut RngStream) -> Result<SisParams> {
    for (name, h) in [(H_GAMMA, h_gamma), (H_LAMBDA, h_lambda)] {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("{name} must be positive, got {h}")));
        }
    }
    let ug = unit_exponential(n, rng);
    let ul = unit_exponential(n, rng);
    Ok(SisParams {
        gamma: scaled_probabilities(&ug, h_gamma),
        lambda: scaled_probabilities(&ul, h_lambda),
    })
}

/// Probability that susceptible node `i` is infected in the next step.
#[inline]
pub fn infection_prob(i: usize, state: &SisState, params: &SisParams, topo: &NetworkTopology) -> f64 {
    let g = params.gamma[i];
    let mut stay = 1.0;
    for e in topo.in_neighbors(i) {
        if state.xi[e.source as usize] == 1 {
            stay *= 1.0 - g * e.weight;
        }
    }
    1.0 - stay
}

#[inline]
fn next_node_state(i: usize, state: &SisState, params: &SisParams, topo: &NetworkTopology, step: &RngStream) -> u8 {
    let u = step.uniform_open_at(2 * i as u64);
    let u_rec = step.uniform_open_at(2 * i as u64 + 1);
    if state.xi[i] == 0 {
        u8::from(u <= infection_prob(i, state, params, topo))
    } else {
        u8::from(u_rec > params.lambda[i])
    }
}

/// One synchronous step. `rng` is the trajectory stream; it is not advanced.
pub fn sis_step(state: &SisState, params: &SisParams, topo: &NetworkTopology, rng: &RngStream) -> SisState {
    let t = state.t + 1;
    let step = rng.substream(&[t]);
    let xi = (0..state.n())
        .map(|i| next_node_state(i, state, params, topo, &step))
        .collect();
    SisState { xi, t }
}

/// Same as [`sis_step`], with the node loop spread over the rayon pool.
#[cfg(feature = "parallel")]
pub fn sis_step_par(state: &SisState, params: &SisParams, topo: &NetworkTopology, rng: &RngStream) -> SisState {
    use rayon::prelude::*;
    let t = state.t + 1;
    let step = rng.substream(&[t]);
    let xi = (0..state.n())
        .into_par_iter()
        .map(|i| next_node_state(i, state, params, topo, &step))
        .collect();
    SisState { xi, t }
}

/// Infected fraction.
pub fn sis_observe(state: &SisState) -> Result<f64> {
    if state.xi.is_empty() {
        return Err(Error::EmptySystem("SIS state has no nodes"));
    }
    Ok(state.infected() as f64 / state.n() as f64)
}

/// Structural settings shared by every replica of an SIS experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SisConfig {
    /// Filled in per run by the experiment harness.
    #[serde(default)]
    pub n: usize,
    #[serde(default = "default_p_init")]
    pub p_init: f64,
    #[serde(default = "default_in_degree")]
    pub in_degree: usize,
    #[serde(default)]
    pub degree_model: DegreeModel,
    /// Recovery hyperparameter used when it is not part of the estimated vector.
    #[serde(default = "default_h_lambda")]
    pub h_lambda: f64,
}

fn default_p_init() -> f64 {
    0.1
}

fn default_in_degree() -> usize {
    10
}

fn default_h_lambda() -> f64 {
    0.0025
}

impl SisConfig {
    pub fn new(n: usize, p_init: f64) -> Self {
        SisConfig {
            n,
            p_init,
            in_degree: default_in_degree(),
            degree_model: DegreeModel::Fixed,
            h_lambda: default_h_lambda(),
        }
    }

    pub fn topology(&self, rng: &mut RngStream) -> Result<NetworkTopology> {
        match self.degree_model {
            DegreeModel::Fixed => gen_topology_fixed_indegree(self.n, self.in_degree, rng),
            DegreeModel::Bernoulli => gen_topology_bernoulli(self.n, self.in_degree as f64, rng),
        }
    }
}

/// A full SIS replica: topology, mean-one rate draws, state and stream.
#[derive(Clone, Debug)]
pub struct SisSimulator {
    topo: NetworkTopology,
    unit_gamma: Vec<f64>,
    unit_lambda: Vec<f64>,
    params: SisParams,
    state: SisState,
    hyper: HyperParams,
    h_lambda_fixed: f64,
    dynamics: RngStream,
}

impl SisSimulator {
    /// `h` must carry `h_gamma` and may carry `h_lambda`; otherwise the
    /// config's recovery hyperparameter is used.
    pub fn new(cfg: &SisConfig, h: &HyperParams, stream: RngStream) -> Result<Self> {
        let topo = cfg.topology(&mut stream.substream(&[0]))?;
        let mut rates = stream.substream(&[1]);
        let unit_gamma = unit_exponential(cfg.n, &mut rates);
        let unit_lambda = unit_exponential(cfg.n, &mut rates);
        let state = sis_init(cfg.n, cfg.p_init, &mut stream.substream(&[2]))?;
        let mut sim = SisSimulator {
            topo,
            unit_gamma,
            unit_lambda,
            params: SisParams {
                gamma: Vec::new(),
                lambda: Vec::new(),
            },
            state,
            hyper: h.clone(),
            h_lambda_fixed: cfg.h_lambda,
            dynamics: stream.substream(&[3]),
        };
        sim.set_hyper(h)?;
        Ok(sim)
    }

    pub fn state(&self) -> &SisState {
        &self.state
    }

    pub fn params(&self) -> &SisParams {
        &self.params
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topo
    }

    pub fn infected_fraction(&self) -> f64 {
        sis_observe(&self.state).unwrap_or(0.0)
    }

    /// Runs `steps` steps and returns the infected fraction after each.
    pub fn run(&mut self, steps: usize) -> Vec<f64> {
        (0..steps)
            .map(|_| {
                self.advance();
                self.infected_fraction()
            })
            .collect()
    }
}

impl Simulator for SisSimulator {
    fn kind(&self) -> ModelKind {
        ModelKind::Sis
    }

    fn n(&self) -> usize {
        self.state.n()
    }

    fn steps(&self) -> u64 {
        self.state.t
    }

    fn advance(&mut self) {
        self.state = sis_step(&self.state, &self.params, &self.topo, &self.dynamics);
    }

    fn node_observations(&self) -> Vec<f64> {
        self.state.xi.iter().map(|&x| x as f64).collect()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.infected_fraction()]
    }

    fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    fn set_hyper(&mut self, h: &HyperParams) -> Result<()> {
        let h_gamma = h
            .get(H_GAMMA)
            .ok_or_else(|| Error::InvalidConfig(format!("SIS hyperparameters need `{H_GAMMA}`")))?;
        let h_lambda = h.get(H_LAMBDA).unwrap_or(self.h_lambda_fixed);
        if let Some(extra) = h.labels().find(|l| *l != H_GAMMA && *l != H_LAMBDA) {
            return Err(Error::InvalidConfig(format!("unknown SIS hyperparameter `{extra}`")));
        }
        for (name, v) in [(H_GAMMA, h_gamma), (H_LAMBDA, h_lambda)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        self.params.gamma = scaled_probabilities(&self.unit_gamma, h_gamma);
        self.params.lambda = scaled_probabilities(&self.unit_lambda, h_lambda);
        self.hyper = h.clone();
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SisFactory {
    pub config: SisConfig,
}

impl ModelFactory for SisFactory {
    fn kind(&self) -> ModelKind {
        ModelKind::Sis
    }

    fn build(&self, h: &HyperParams, stream: RngStream) -> Result<Box<dyn Simulator>> {
        Ok(Box::new(SisSimulator::new(&self.config, h, stream)?))
    }
}

/// Writes `t,infected_fraction` rows.
pub fn write_trajectory_csv(mut out: impl Write, series: &ObservationSeries) -> std::io::Result<()> {
    writeln!(out, "# schema_version=1")?;
    writeln!(out, "t,infected_fraction")?;
    for (t, y) in series.iter() {
        writeln!(out, "{t},{}", y[0])?;
    }
    Ok(())
}
