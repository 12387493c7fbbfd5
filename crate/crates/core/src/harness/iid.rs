use crate::assimilate::{ModelFactory, ModelKind, Simulator};
use crate::error::{Error, Result};
use crate::params::HyperParams;
use crate::rng::RngStream;

/// Synthetic system of `n` i.i.d. nodes: at every step each node redraws
/// `x_i ~ U(0, 1)` and contributes `h * x_i` to the mean observation.
pub struct IidModel {
    h: HyperParams,
    scale: f64,
    n: usize,
    step: u64,
    stream: RngStream,
}

impl IidModel {
    pub fn new(n: usize, h: &HyperParams, stream: RngStream) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySystem("i.i.d. model needs at least one node"));
        }
        let mut m = IidModel { h: h.clone(), scale: 0.0, n, step: 0, stream };
        m.set_hyper(h)?;
        Ok(m)
    }

    fn inputs(&self) -> impl Iterator<Item = f64> + '_ {
        let s = self.stream.substream(&[self.step]);
        (0..self.n as u64).map(move |i| s.uniform_open_at(i))
    }
}

impl Simulator for IidModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn n(&self) -> usize {
        self.n
    }

    fn steps(&self) -> u64 {
        self.step
    }

    fn advance(&mut self) {
        self.step += 1;
    }

    fn node_observations(&self) -> Vec<f64> {
        self.inputs().map(|x| self.scale * x).collect()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.scale * self.inputs().sum::<f64>() / self.n as f64]
    }

    fn hyper(&self) -> &HyperParams {
        &self.h
    }

    fn set_hyper(&mut self, h: &HyperParams) -> Result<()> {
        if h.len() != 1 {
            return Err(Error::InvalidConfig("the i.i.d. model takes one hyperparameter".into()));
        }
        self.scale = h.values()[0];
        self.h = h.clone();
        Ok(())
    }
}

pub struct IidFactory {
    pub n: usize,
}

impl ModelFactory for IidFactory {
    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn build(&self, h: &HyperParams, stream: RngStream) -> Result<Box<dyn Simulator>> {
        Ok(Box::new(IidModel::new(self.n, h, stream)?))
    }
}

/// Large-`n` limit of the empirical objective, `(h - h*)^2 / 4`.
pub fn population_objective(h: f64, h_star: f64) -> f64 {
    (h - h_star).powi(2) / 4.0
}
