//! Leaky integrate-and-fire network with AMPA/NMDA/GABA_A/GABA_B synapses,
//! Ornstein–Uhlenbeck background current and a sinusoidally modulated
//! conductance. The NMDA conductance of each neuron is Gamma distributed with
//! mean `h_dyn`; the observation is the local field potential (mean voltage).
//!
//! Voltages are in mV and time in ms. All remaining magnitudes are taken as
//! given in the default constant table, in the units that balance
//! `C dV/dt = -g_L (V - V_L) + I`.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assimilate::{ModelFactory, ModelKind, Simulator};
use crate::dist::unit_gamma;
use crate::error::{Error, Result};
use crate::graph::{gen_topology_ei, NetworkTopology, NodeKind};
use crate::params::{HyperParams, ObservationSeries};
use crate::rng::RngStream;

pub const H_DYN: &str = "h_dyn";

pub const AMPA: usize = 0;
pub const NMDA: usize = 1;
pub const GABA_A: usize = 2;
pub const GABA_B: usize = 3;

/// Neuron and synapse constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnnConstants {
    pub capacitance: f64,
    pub g_leak: f64,
    pub v_leak: f64,
    pub v_th: f64,
    pub v_rest: f64,
    /// Reversal potentials, AMPA / NMDA / GABA_A / GABA_B.
    pub v_rev: [f64; 4],
    pub tau_syn: [f64; 4],
    /// Fixed conductances; the NMDA slot is ignored (per-neuron draws are used).
    pub g_fixed: [f64; 4],
    pub g0: f64,
    pub omega: f64,
    pub t_ref: f64,
    pub mu_bg: f64,
    pub sigma_bg: f64,
    pub tau_bg: f64,
    pub i_ext: f64,
    /// Add the sinusoidal conductance to every channel (`false`: NMDA only).
    pub sin_all_channels: bool,
}

impl Default for SnnConstants {
    fn default() -> Self {
        SnnConstants {
            capacitance: 1.0,
            g_leak: 0.03,
            v_leak: -75.0,
            v_th: -50.0,
            v_rest: -65.0,
            v_rev: [0.0, 0.0, -70.0, -100.0],
            tau_syn: [2.0, 40.0, 10.0, 50.0],
            g_fixed: [1.6e-5, 0.0, 3.672e-5, 7.56e-6],
            g0: 4.86e-6,
            omega: 0.02,
            t_ref: 5.0,
            mu_bg: 0.71,
            sigma_bg: 0.05,
            tau_bg: 10.0,
            i_ext: 0.0,
            sin_all_channels: true,
        }
    }
}

impl SnnConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_rest < self.v_th) {
            return Err(Error::InvalidConfig("v_rest must lie below v_th".into()));
        }
        if self.tau_syn.iter().any(|&t| t <= 0.0) || self.tau_bg <= 0.0 {
            return Err(Error::InvalidConfig("time constants must be positive".into()));
        }
        if self.t_ref < 0.0 || self.capacitance <= 0.0 {
            return Err(Error::InvalidConfig("need t_ref >= 0 and capacitance > 0".into()));
        }
        Ok(())
    }

    /// Resting point of an unconnected neuron driven by the mean background current.
    pub fn subthreshold_fixed_point(&self) -> f64 {
        self.v_leak + (self.mu_bg + self.i_ext) / self.g_leak
    }

    /// Sinusoidal conductance at time `t` (ms).
    pub fn g_sin(&self, t: f64) -> f64 {
        self.g0 * (std::f64::consts::PI * self.omega * t).sin()
    }
}

/// Per-neuron parameters. Edge weights live in the topology.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnParams {
    pub g_nmda: Vec<f64>,
    /// Per-neuron external current; empty means the constant `i_ext` everywhere.
    pub i_ext: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neuron {
    pub v: f64,
    pub j: [f64; 4],
    pub i_bg: f64,
    /// Sub-steps left in the refractory hold.
    pub refractory_left: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnnState {
    pub neurons: Vec<Neuron>,
    /// Neurons that spiked during the last completed sub-step.
    pub spikes_this_step: Vec<u32>,
    spiked: Vec<bool>,
    /// Completed sub-steps.
    pub step: u64,
    pub t: f64,
}

impl SnnState {
    pub fn n(&self) -> usize {
        self.neurons.len()
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.neurons.iter().map(|nr| nr.v).collect()
    }

    /// Time (ms) at which neuron `i` leaves its refractory hold, given step size `dt`.
    pub fn refractory_until(&self, i: usize, dt: f64) -> f64 {
        self.t + self.neurons[i].refractory_left as f64 * dt
    }
}

/// Initial state: voltages uniform between reset and threshold, background
/// current drawn from its stationary law, no synaptic activation.
pub fn snn_init(n: usize, c: &SnnConstants, rng: &mut RngStream) -> SnnState {
    let neurons = (0..n)
        .map(|_| {
            let u = rng.uniform_open();
            let z: f64 = StandardNormal.sample(rng);
            Neuron {
                v: c.v_rest + u * (c.v_th - c.v_rest),
                j: [0.0; 4],
                i_bg: c.mu_bg + c.sigma_bg * z,
                refractory_left: 0,
            }
        })
        .collect();
    SnnState {
        neurons,
        spikes_this_step: Vec::new(),
        spiked: vec![false; n],
        step: 0,
        t: 0.0,
    }
}

/// i.i.d. Gamma(alpha, rate = alpha / h) NMDA conductances.
pub fn snn_sample_conductance(n: usize, h: f64, alpha: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    crate::dist::sample_gamma(alpha, h, n, rng)
}

/// Exact OU transition over `dt` with standard normal innovation `z`.
#[inline]
pub fn ou_transition(i: f64, dt: f64, c: &SnnConstants, z: f64) -> f64 {
    let decay = (-dt / c.tau_bg).exp();
    c.mu_bg + (i - c.mu_bg) * decay + c.sigma_bg * (1.0 - decay * decay).sqrt() * z
}

/// Exact OU transition drawing its innovation from `rng`.
pub fn ou_step(i: f64, dt: f64, c: &SnnConstants, rng: &mut RngStream) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    ou_transition(i, dt, c, z)
}

/// Per-step quantities shared by all neurons.
struct StepCoeffs {
    syn_decay: [f64; 4],
    ou_decay: f64,
    ou_scale: f64,
    g_channel: [f64; 4],
    nmda_sin: f64,
    dt_over_c: f64,
    refractory_steps: u32,
}

impl StepCoeffs {
    fn new(c: &SnnConstants, dt: f64, t: f64) -> Self {
        let g_sin = c.g_sin(t);
        let mut g_channel = [0.0; 4];
        for (u, g) in g_channel.iter_mut().enumerate() {
            let add = if c.sin_all_channels { g_sin } else { 0.0 };
            *g = (c.g_fixed[u] + add).max(0.0);
        }
        let ou_decay = (-dt / c.tau_bg).exp();
        StepCoeffs {
            syn_decay: c.tau_syn.map(|tau| 1.0 - dt / tau),
            ou_decay,
            ou_scale: c.sigma_bg * (1.0 - ou_decay * ou_decay).sqrt(),
            g_channel,
            nmda_sin: g_sin,
            dt_over_c: dt / c.capacitance,
            refractory_steps: (c.t_ref / dt - 1e-9).ceil().max(0.0) as u32,
        }
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn update_neuron(
    i: usize,
    nr: &mut Neuron,
    prev_spiked: &[bool],
    any_prev_spike: bool,
    params: &SnnParams,
    topo: &NetworkTopology,
    c: &SnnConstants,
    k: &StepCoeffs,
    step_rng: &RngStream,
) -> bool {
    // (1) synaptic decay and delivery of last sub-step's spikes
    for u in 0..4 {
        nr.j[u] *= k.syn_decay[u];
    }
    if any_prev_spike {
        for e in topo.in_neighbors(i) {
            if prev_spiked[e.source as usize] {
                match e.kind {
                    NodeKind::Inhibitory => {
                        nr.j[GABA_A] += e.weight;
                        nr.j[GABA_B] += e.weight;
                    }
                    NodeKind::Excitatory | NodeKind::Plain => {
                        nr.j[AMPA] += e.weight;
                        nr.j[NMDA] += e.weight;
                    }
                }
            }
        }
    }
    // (2) background current
    let z: f64 = StandardNormal.sample(&mut step_rng.substream(&[i as u64]));
    nr.i_bg = c.mu_bg + (nr.i_bg - c.mu_bg) * k.ou_decay + k.ou_scale * z;

    if nr.refractory_left > 0 {
        nr.refractory_left -= 1;
        nr.v = c.v_rest;
        return false;
    }
    // (3) synaptic current
    let g_nmda = (params.g_nmda[i] + k.nmda_sin).max(0.0);
    let mut i_syn = 0.0;
    for u in 0..4 {
        let g = if u == NMDA { g_nmda } else { k.g_channel[u] };
        i_syn += g * (c.v_rev[u] - nr.v) * nr.j[u];
    }
    let i_ext = params.i_ext.get(i).copied().unwrap_or(c.i_ext);
    // (4) forward Euler
    nr.v += k.dt_over_c * (-c.g_leak * (nr.v - c.v_leak) + i_syn + nr.i_bg + i_ext);
    // (5) threshold
    if nr.v >= c.v_th {
        nr.v = c.v_rest;
        nr.refractory_left = k.refractory_steps;
        true
    } else {
        false
    }
}

fn finish_step(state: &mut SnnState, fired: Vec<bool>, dt: f64) {
    state.spikes_this_step.clear();
    for (i, &f) in fired.iter().enumerate() {
        if f {
            state.spikes_this_step.push(i as u32);
        }
    }
    state.spiked = fired;
    state.step += 1;
    state.t = state.step as f64 * dt;
}

/// Advances the network by one sub-step of length `dt`.
///
/// The innovation of neuron `i`'s background current at sub-step `k` comes from
/// `rng.substream([k, i])`, so the trajectory does not depend on loop order.
pub fn lif_step(
    state: &mut SnnState,
    params: &SnnParams,
    topo: &NetworkTopology,
    c: &SnnConstants,
    dt: f64,
    rng: &RngStream,
) {
    let k = StepCoeffs::new(c, dt, state.t);
    let step_rng = rng.substream(&[state.step]);
    let any = !state.spikes_this_step.is_empty();
    let prev = std::mem::take(&mut state.spiked);
    let fired: Vec<bool> = state
        .neurons
        .iter_mut()
        .enumerate()
        .map(|(i, nr)| update_neuron(i, nr, &prev, any, params, topo, c, &k, &step_rng))
        .collect();
    finish_step(state, fired, dt);
}

/// [`lif_step`] with the neuron loop spread over the rayon pool.
#[cfg(feature = "parallel")]
pub fn lif_step_par(
    state: &mut SnnState,
    params: &SnnParams,
    topo: &NetworkTopology,
    c: &SnnConstants,
    dt: f64,
    rng: &RngStream,
) {
    use rayon::prelude::*;
    let k = StepCoeffs::new(c, dt, state.t);
    let step_rng = rng.substream(&[state.step]);
    let any = !state.spikes_this_step.is_empty();
    let prev = std::mem::take(&mut state.spiked);
    let fired: Vec<bool> = state
        .neurons
        .par_iter_mut()
        .enumerate()
        .map(|(i, nr)| update_neuron(i, nr, &prev, any, params, topo, c, &k, &step_rng))
        .collect();
    finish_step(state, fired, dt);
}

/// Local field potential: mean membrane voltage.
pub fn lfp_observe(state: &SnnState) -> Result<f64> {
    if state.neurons.is_empty() {
        return Err(Error::EmptySystem("SNN state has no neurons"));
    }
    Ok(state.neurons.iter().map(|nr| nr.v).sum::<f64>() / state.n() as f64)
}

/// Structural settings shared by every replica of an SNN experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnnConfig {
    /// Filled in per run by the experiment harness.
    #[serde(default)]
    pub n: usize,
    #[serde(default = "default_in_degree")]
    pub in_degree: usize,
    #[serde(default = "default_e_fraction")]
    pub e_fraction: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every_ms: f64,
    #[serde(default)]
    pub constants: SnnConstants,
}

fn default_in_degree() -> usize {
    10
}
fn default_e_fraction() -> f64 {
    0.8
}
fn default_alpha() -> f64 {
    5.0
}
fn default_dt() -> f64 {
    0.1
}
fn default_record_every() -> f64 {
    1.0
}

impl SnnConfig {
    pub fn new(n: usize) -> Self {
        SnnConfig {
            n,
            in_degree: default_in_degree(),
            e_fraction: default_e_fraction(),
            alpha: default_alpha(),
            dt: default_dt(),
            record_every_ms: default_record_every(),
            constants: SnnConstants::default(),
        }
    }

    /// Sub-steps per observation interval; `dt` must divide the interval.
    pub fn substeps(&self) -> Result<u64> {
        if !(self.dt > 0.0 && self.record_every_ms > 0.0) {
            return Err(Error::InvalidConfig("dt and record_every_ms must be positive".into()));
        }
        let ratio = self.record_every_ms / self.dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} does not divide the recording interval {}",
                self.dt, self.record_every_ms
            )));
        }
        Ok(k as u64)
    }
}

/// A full SNN replica.
#[derive(Clone, Debug)]
pub struct SnnSimulator {
    cfg: SnnConfig,
    substeps: u64,
    topo: NetworkTopology,
    unit_g: Vec<f64>,
    params: SnnParams,
    state: SnnState,
    hyper: HyperParams,
    dynamics: RngStream,
    intervals: u64,
    raster: Option<Vec<(f64, u32)>>,
}

impl SnnSimulator {
    pub fn new(cfg: &SnnConfig, h: &HyperParams, stream: RngStream) -> Result<Self> {
        cfg.constants.validate()?;
        let substeps = cfg.substeps()?;
        let topo = gen_topology_ei(cfg.n, cfg.in_degree, cfg.e_fraction, &mut stream.substream(&[0]))?;
        let unit_g = unit_gamma(cfg.alpha, cfg.n, &mut stream.substream(&[1]))?;
        let state = snn_init(cfg.n, &cfg.constants, &mut stream.substream(&[2]));
        let mut sim = SnnSimulator {
            cfg: cfg.clone(),
            substeps,
            topo,
            unit_g,
            params: SnnParams {
                g_nmda: Vec::new(),
                i_ext: Vec::new(),
            },
            state,
            hyper: h.clone(),
            dynamics: stream.substream(&[3]),
            intervals: 0,
            raster: None,
        };
        sim.set_hyper(h)?;
        Ok(sim)
    }

    /// Replaces the topology (e.g. an edgeless network for isolated-neuron checks).
    pub fn with_topology(mut self, topo: NetworkTopology) -> Result<Self> {
        if topo.n() != self.cfg.n {
            return Err(Error::Shape(format!("topology has {} nodes, expected {}", topo.n(), self.cfg.n)));
        }
        self.topo = topo;
        Ok(self)
    }

    /// Starts collecting `(t_ms, neuron)` spike events.
    pub fn record_spikes(&mut self) {
        self.raster.get_or_insert_with(Vec::new);
    }

    pub fn spikes(&self) -> &[(f64, u32)] {
        self.raster.as_deref().unwrap_or(&[])
    }

    pub fn state(&self) -> &SnnState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SnnState {
        &mut self.state
    }

    pub fn params(&self) -> &SnnParams {
        &self.params
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topo
    }

    pub fn config(&self) -> &SnnConfig {
        &self.cfg
    }

    /// One sub-step.
    pub fn substep(&mut self) {
        lif_step(
            &mut self.state,
            &self.params,
            &self.topo,
            &self.cfg.constants,
            self.cfg.dt,
            &self.dynamics,
        );
        if let Some(r) = self.raster.as_mut() {
            let t = self.state.t;
            r.extend(self.state.spikes_this_step.iter().map(|&i| (t, i)));
        }
    }

    pub fn lfp(&self) -> f64 {
        lfp_observe(&self.state).unwrap_or(f64::NAN)
    }
}

impl Simulator for SnnSimulator {
    fn kind(&self) -> ModelKind {
        ModelKind::Snn
    }

    fn n(&self) -> usize {
        self.state.n()
    }

    fn steps(&self) -> u64 {
        self.intervals
    }

    fn advance(&mut self) {
        for _ in 0..self.substeps {
            self.substep();
        }
        self.intervals += 1;
    }

    fn node_observations(&self) -> Vec<f64> {
        self.state.voltages()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.lfp()]
    }

    fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    fn set_hyper(&mut self, h: &HyperParams) -> Result<()> {
        let h_dyn = h
            .get(H_DYN)
            .ok_or_else(|| Error::InvalidConfig(format!("SNN hyperparameters need `{H_DYN}`")))?;
        if let Some(extra) = h.labels().find(|l| *l != H_DYN) {
            return Err(Error::InvalidConfig(format!("unknown SNN hyperparameter `{extra}`")));
        }
        if !(h_dyn > 0.0 && h_dyn.is_finite()) {
            return Err(Error::Domain(format!("{H_DYN} must be positive, got {h_dyn}")));
        }
        self.params.g_nmda = self.unit_g.iter().map(|g| g * h_dyn).collect();
        self.hyper = h.clone();
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SnnFactory {
    pub config: SnnConfig,
}

impl ModelFactory for SnnFactory {
    fn kind(&self) -> ModelKind {
        ModelKind::Snn
    }

    fn build(&self, h: &HyperParams, stream: RngStream) -> Result<Box<dyn Simulator>> {
        Ok(Box::new(SnnSimulator::new(&self.config, h, stream)?))
    }
}

/// Simulates `t_ms` of activity under `h` and records the LFP every
/// `cfg.record_every_ms`.
pub fn snn_run(cfg: &SnnConfig, h: f64, t_ms: f64, rng: RngStream) -> Result<ObservationSeries> {
    if !(t_ms > 0.0) {
        return Err(Error::InvalidConfig(format!("duration must be positive, got {t_ms}")));
    }
    let mut sim = SnnSimulator::new(cfg, &HyperParams::scalar(H_DYN, h), rng)?;
    let intervals = (t_ms / cfg.record_every_ms).round() as u64;
    let mut out = ObservationSeries::new();
    for k in 1..=intervals {
        sim.advance();
        out.push(k, sim.observe())?;
    }
    Ok(out)
}

/// Writes `t_ms,lfp_mv` rows.
pub fn write_lfp_csv(mut out: impl Write, series: &ObservationSeries, record_every_ms: f64) -> std::io::Result<()> {
    writeln!(out, "# schema_version=1")?;
    writeln!(out, "t_ms,lfp_mv")?;
    for (t, y) in series.iter() {
        writeln!(out, "{},{}", t as f64 * record_every_ms, y[0])?;
    }
    Ok(())
}

/// Writes `t_ms,neuron_id` rows.
pub fn write_raster_csv(mut out: impl Write, spikes: &[(f64, u32)]) -> std::io::Result<()> {
    writeln!(out, "# schema_version=1")?;
    writeln!(out, "t_ms,neuron_id")?;
    for (t, i) in spikes {
        writeln!(out, "{t},{i}")?;
    }
    Ok(())
}
