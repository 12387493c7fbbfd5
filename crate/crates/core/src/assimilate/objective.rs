use rand_distr::{Distribution, StandardNormal};

use crate::assimilate::{record, ModelFactory};
use crate::error::{Error, Result};
use crate::params::{HyperBox, HyperParams, ObservationSeries};
use crate::rng::RngStream;

/// Adds independent `N(0, sigma^2)` noise to every node's contribution and
/// averages over nodes. `clean_per_node` is node-major with `r` coordinates
/// per node.
pub fn noisy_observe(clean_per_node: &[f64], sigma: f64, r: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if r == 0 || clean_per_node.len() % r != 0 {
        return Err(Error::Shape(format!(
            "{} node values do not split into {r}-dimensional observations",
            clean_per_node.len()
        )));
    }
    let n = clean_per_node.len() / r;
    if n == 0 {
        return Err(Error::EmptySystem("no nodes to observe"));
    }
    let mut out = vec![0.0; r];
    for node in clean_per_node.chunks(r) {
        for (o, &v) in out.iter_mut().zip(node) {
            *o += v;
        }
    }
    if sigma > 0.0 {
        for _ in 0..n {
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *o += sigma * z;
            }
        }
    }
    for o in &mut out {
        *o /= n as f64;
    }
    Ok(out)
}

/// Mean over time of the squared Euclidean distance between two aligned series.
pub fn series_objective(y: &ObservationSeries, y_star: &ObservationSeries) -> Result<f64> {
    y.check_aligned(y_star)?;
    if y.is_empty() {
        return Err(Error::Shape("objective of an empty series".into()));
    }
    let total: f64 = y
        .values()
        .iter()
        .zip(y_star.values())
        .map(|(a, b)| a.iter().zip(b).map(|(x, z)| (x - z) * (x - z)).sum::<f64>())
        .sum();
    Ok(total / y.len() as f64)
}

/// Empirical objective: simulate under `h` (clean observations, stream `rng`)
/// at the times of `y_star` and compare.
pub fn empirical_objective(
    h: &HyperParams,
    factory: &dyn ModelFactory,
    y_star: &ObservationSeries,
    rng: RngStream,
) -> Result<f64> {
    let mut sim = factory.build(h, rng)?;
    let y = record(sim.as_mut(), y_star.times())?;
    series_objective(&y, y_star)
}

/// Every grid point with its replicate-averaged objective value.
#[derive(Clone, Debug)]
pub struct GridSearch {
    pub points: Vec<HyperParams>,
    pub values: Vec<f64>,
    pub argmin: usize,
}

impl GridSearch {
    pub fn best(&self) -> &HyperParams {
        &self.points[self.argmin]
    }

    pub fn best_value(&self) -> f64 {
        self.values[self.argmin]
    }
}

/// Grid points of `bx` in lexicographic order (first label varies slowest).
pub fn grid_points(bx: &HyperBox, resolution: usize) -> Result<Vec<HyperParams>> {
    if resolution < 2 {
        return Err(Error::InvalidConfig(format!("grid resolution must be >= 2, got {resolution}")));
    }
    let lo = bx.lower();
    let hi = bx.upper();
    let d = bx.dim();
    let total = resolution
        .checked_pow(d as u32)
        .ok_or_else(|| Error::InvalidConfig("grid too large".into()))?;
    let template = bx.lower_corner();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let vals: Vec<f64> = (0..d)
            .map(|k| {
                if idx[k] == resolution - 1 {
                    hi[k]
                } else {
                    lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / (resolution - 1) as f64
                }
            })
            .collect();
        out.push(template.with_values(&vals));
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < resolution {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

/// Evaluates `objective(h, replicate)` averaged over `replicates` at every grid
/// point; the first minimal point in lexicographic order wins ties.
pub fn grid_search<F>(objective: F, bx: &HyperBox, resolution: usize, replicates: usize) -> Result<GridSearch>
where
    F: Fn(&HyperParams, usize) -> f64 + Sync + Send,
{
    if replicates == 0 {
        return Err(Error::InvalidConfig("grid search needs at least one replicate".into()));
    }
    let points = grid_points(bx, resolution)?;
    let values = crate::par::map_indexed(points.len(), |i| {
        (0..replicates).map(|r| objective(&points[i], r)).sum::<f64>() / replicates as f64
    });
    let mut argmin = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[argmin] {
            argmin = i;
        }
    }
    Ok(GridSearch { points, values, argmin })
}

/// Replicate-averaged grid minimizer.
pub fn grid_minimize<F>(objective: F, bx: &HyperBox, resolution: usize, replicates: usize) -> Result<HyperParams>
where
    F: Fn(&HyperParams, usize) -> f64 + Sync + Send,
{
    Ok(grid_search(objective, bx, resolution, replicates)?.best().clone())
}
