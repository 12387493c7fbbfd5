use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{HyperParams, ObservationSeries};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sis,
    Snn,
    Custom,
}

/// One simulator replica driven by a hyperparameter vector.
///
/// `advance` moves the system forward by one observation interval. All
/// randomness comes from the stream the replica was built with, so
/// stepping then observing is deterministic.
pub trait Simulator: Send {
    fn kind(&self) -> ModelKind;

    /// Number of nodes.
    fn n(&self) -> usize;

    /// Dimension of one node's observation contribution.
    fn obs_dim(&self) -> usize {
        1
    }

    /// Observation intervals completed so far.
    fn steps(&self) -> u64;

    fn advance(&mut self);

    /// Per-node observation contributions, node-major, `n * obs_dim` long.
    fn node_observations(&self) -> Vec<f64>;

    /// Population-mean observation.
    fn observe(&self) -> Vec<f64> {
        let r = self.obs_dim();
        let n = self.n();
        let mut out = vec![0.0; r];
        for (k, v) in self.node_observations().iter().enumerate() {
            out[k % r] += v;
        }
        for v in &mut out {
            *v /= n as f64;
        }
        out
    }

    fn hyper(&self) -> &HyperParams;

    /// Moves the replica to new hyperparameters without re-drawing node identities.
    fn set_hyper(&mut self, h: &HyperParams) -> Result<()>;
}

/// Builds simulator replicas sharing one structural configuration.
pub trait ModelFactory: Sync {
    fn kind(&self) -> ModelKind;

    fn build(&self, h: &HyperParams, stream: RngStream) -> Result<Box<dyn Simulator>>;
}

/// Advances `sim` through `times` (interval counts) and records clean observations.
pub fn record(sim: &mut dyn Simulator, times: &[u64]) -> Result<ObservationSeries> {
    let mut out = ObservationSeries::new();
    for &t in times {
        while sim.steps() < t {
            sim.advance();
        }
        out.push(t, sim.observe())?;
    }
    Ok(out)
}

/// Single-node model whose observation is the hyperparameter vector itself.
/// The linear-Gaussian reference case for the filter.
pub struct IdentityModel {
    h: HyperParams,
    steps: u64,
}

impl Simulator for IdentityModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn n(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        self.h.len()
    }

    fn steps(&self) -> u64 {
        self.steps
    }

    fn advance(&mut self) {
        self.steps += 1;
    }

    fn node_observations(&self) -> Vec<f64> {
        self.h.values()
    }

    fn hyper(&self) -> &HyperParams {
        &self.h
    }

    fn set_hyper(&mut self, h: &HyperParams) -> Result<()> {
        self.h = h.clone();
        Ok(())
    }
}

pub struct IdentityFactory;

impl ModelFactory for IdentityFactory {
    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn build(&self, h: &HyperParams, _stream: RngStream) -> Result<Box<dyn Simulator>> {
        Ok(Box::new(IdentityModel { h: h.clone(), steps: 0 }))
    }
}
