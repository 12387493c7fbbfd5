//! Mean-parameterized samplers for per-node parameters.

use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{Error, Result};
use crate::rng::RngStream;

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `count` i.i.d. exponential draws with mean `mean`.
pub fn sample_exponential_mean(mean: f64, count: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    positive("exponential mean", mean)?;
    Ok(unit_exponential(count, rng).into_iter().map(|e| mean * e).collect())
}

/// `count` i.i.d. Gamma(shape, rate = shape / mean) draws.
pub fn sample_gamma(shape: f64, mean: f64, count: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    positive("Gamma shape", shape)?;
    positive("Gamma mean", mean)?;
    Ok(unit_gamma(shape, count, rng)?.into_iter().map(|g| mean * g).collect())
}

/// Mean-one exponential draws. Scaling them by `h` gives an exponential with
/// mean `h`, which is how simulators move between hyperparameter values.
pub fn unit_exponential(count: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..count).map(|_| Exp1.sample(rng)).collect()
}

/// Mean-one Gamma(shape, rate = shape) draws.
pub fn unit_gamma(shape: f64, count: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    positive("Gamma shape", shape)?;
    let dist = Gamma::new(shape, 1.0 / shape).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}
