//! Single-node resample-and-transform systems: i.i.d. inputs pushed through
//! a known map with additive Gaussian noise, least-squares estimators and
//! sample-size scaling checks.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assimilate::grid_search;
use crate::error::{Error, Result};
use crate::metrics::{loglog_slope, median, quantile, rae, RateFit};
use crate::params::{HyperBox, HyperParams};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// `f(x, h) = h . x`
    Linear,
    /// `f(x, h) = sin(h . x)`
    Sine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InputDist {
    Normal,
    Uniform { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RtModel {
    pub transform: Transform,
    pub input: InputDist,
    pub sigma: f64,
    pub bx: HyperBox,
}

impl RtModel {
    /// Scalar `h . x` with standard normal inputs.
    pub fn linear(sigma: f64, bx: HyperBox) -> Self {
        RtModel { transform: Transform::Linear, input: InputDist::Normal, sigma, bx }
    }

    /// Scalar `sin(h x)` with `x ~ U(0.5, 1.5)` on `h in [0.2, 2]`.
    pub fn sine(sigma: f64) -> Self {
        RtModel {
            transform: Transform::Sine,
            input: InputDist::Uniform { lo: 0.5, hi: 1.5 },
            sigma,
            bx: HyperBox::scalar("h", 0.2, 2.0).expect("valid box"),
        }
    }

    /// Input dimension, equal to the hyperparameter dimension.
    pub fn k(&self) -> usize {
        self.bx.dim()
    }

    pub fn eval(&self, x: &[f64], h: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(h).map(|(a, b)| a * b).sum();
        match self.transform {
            Transform::Linear => dot,
            Transform::Sine => dot.sin(),
        }
    }

    fn draw_input(&self, rng: &mut RngStream) -> f64 {
        match self.input {
            InputDist::Normal => StandardNormal.sample(rng),
            InputDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Inputs and outputs of one simulated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RtSample {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

pub fn rt_simulate(model: &RtModel, h: &HyperParams, t: usize, rng: &mut RngStream) -> Result<RtSample> {
    if t == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    if !(model.sigma >= 0.0) {
        return Err(Error::Domain(format!("noise sigma must be >= 0, got {}", model.sigma)));
    }
    let hv = h.values();
    if hv.len() != model.k() {
        return Err(Error::Shape(format!("model takes {} hyperparameters, got {}", model.k(), hv.len())));
    }
    let mut x = Vec::with_capacity(t);
    let mut y = Vec::with_capacity(t);
    for _ in 0..t {
        let xi: Vec<f64> = (0..model.k()).map(|_| model.draw_input(rng)).collect();
        let noise: f64 = StandardNormal.sample(rng);
        y.push(model.eval(&xi, &hv) + model.sigma * noise);
        x.push(xi);
    }
    Ok(RtSample { x, y })
}

/// Least-squares `h` minimizing `sum (y_t - h . x_t)^2`, via a QR
/// factorization of the `T x k` design matrix.
pub fn lls_estimate(x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let t = x.len();
    if t != y.len() {
        return Err(Error::Shape(format!("{t} inputs but {} outputs", y.len())));
    }
    let k = x.first().map_or(0, Vec::len);
    if k == 0 || x.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("inputs must share a nonzero dimension".into()));
    }
    if t < k {
        return Err(Error::Singular(format!("{t} samples cannot determine {k} coefficients")));
    }
    let a = DMatrix::from_fn(t, k, |i, j| x[i][j]);
    let b = DVector::from_column_slice(y);
    let qr = a.qr();
    let r = qr.r();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if scale == 0.0 || (0..k).any(|j| r[(j, j)].abs() <= 1e-12 * scale) {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    let qtb = qr.q().transpose() * b;
    let h = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    Ok(h.iter().copied().collect())
}

/// Grid minimizer of `(1/T) sum (f(x_t, h) - y_t)^2`.
pub fn nls_grid_estimate(
    model: &RtModel,
    y_star: &[f64],
    x: &[Vec<f64>],
    bx: &HyperBox,
    resolution: usize,
) -> Result<HyperParams> {
    if x.len() != y_star.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} inputs but {} outputs", x.len(), y_star.len())));
    }
    let objective = |h: &HyperParams, _: usize| {
        let hv = h.values();
        x.iter()
            .zip(y_star)
            .map(|(xi, yi)| (model.eval(xi, &hv) - yi).powi(2))
            .sum::<f64>()
            / x.len() as f64
    };
    Ok(grid_search(objective, bx, resolution, 1)?.best().clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Estimator {
    Lls,
    Grid { resolution: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub t: usize,
    pub median_rae: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateCheck {
    pub rows: Vec<RateRow>,
    /// `None` when every median is numerically zero.
    pub fit: Option<RateFit>,
}

impl RateCheck {
    pub fn is_flat(&self) -> bool {
        self.fit.is_none()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema_version=1")?;
        writeln!(w, "T,median_rae,q25,q75")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.t, r.median_rae, r.q25, r.q75)?;
        }
        Ok(())
    }
}

/// Zero-error threshold below which a median RAE counts as exact recovery.
pub const FLAT_RAE: f64 = 1e-12;

/// Median RAE over `reps` replicate estimates at each sample size; replicate
/// `r` at size `T` draws from `rng.substream([T, r])`.
pub fn rate_check_t(
    model: &RtModel,
    h_star: &HyperParams,
    t_list: &[usize],
    reps: usize,
    estimator: Estimator,
    rng: &RngStream,
) -> Result<RateCheck> {
    if t_list.len() < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 sample sizes, got {}", t_list.len())));
    }
    if reps < 10 {
        return Err(Error::InvalidConfig(format!("need reps >= 10, got {reps}")));
    }
    model.bx.check(h_star)?;
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let errs: Vec<Result<f64>> = crate::par::map_indexed(reps, |r| {
            let mut s = rng.substream(&[t as u64, r as u64]);
            let sample = rt_simulate(model, h_star, t, &mut s)?;
            let h_hat = match estimator {
                Estimator::Lls => h_star.with_values(&lls_estimate(&sample.x, &sample.y)?),
                Estimator::Grid { resolution } => {
                    nls_grid_estimate(model, &sample.y, &sample.x, &model.bx, resolution)?
                }
            };
            rae(&h_hat, h_star)
        });
        let errs = errs.into_iter().collect::<Result<Vec<_>>>()?;
        rows.push(RateRow {
            t,
            median_rae: median(&errs),
            q25: quantile(&errs, 0.25),
            q75: quantile(&errs, 0.75),
        });
    }
    let fit = if rows.iter().all(|r| r.median_rae <= FLAT_RAE) {
        None
    } else {
        let ts: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
        let ms: Vec<f64> = rows.iter().map(|r| r.median_rae).collect();
        Some(loglog_slope(&ts, &ms)?)
    };
    Ok(RateCheck { rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    fn linear(sigma: f64) -> RtModel {
        RtModel::linear(sigma, HyperBox::scalar("h", -10.0, 10.0).unwrap())
    }

    #[test]
    fn noiseless_linear_outputs() {
        let m = linear(0.0);
        assert_eq!(m.eval(&[1.0], &[2.0]), 2.0);
        assert_eq!(m.eval(&[3.0], &[2.0]), 6.0);
        let s = rt_simulate(&m, &HyperParams::scalar("h", 2.0), 7, &mut derive_stream(1, &[])).unwrap();
        assert_eq!((s.x.len(), s.y.len()), (7, 7));
        for (x, y) in s.x.iter().zip(&s.y) {
            assert_eq!(*y, 2.0 * x[0]);
        }
        assert!(rt_simulate(&m, &HyperParams::scalar("h", 2.0), 0, &mut derive_stream(1, &[])).is_err());
    }

    #[test]
    fn residual_variance() {
        let m = linear(1.0);
        let t = 100_000;
        let s = rt_simulate(&m, &HyperParams::scalar("h", 2.0), t, &mut derive_stream(2, &[])).unwrap();
        let v = s.x.iter().zip(&s.y).map(|(x, y)| (y - 2.0 * x[0]).powi(2)).sum::<f64>() / t as f64;
        // chi-square / T has sd sqrt(2 / T)
        assert!((v - 1.0).abs() < 4.0 * (2.0 / t as f64).sqrt(), "{v}");
    }

    #[test]
    fn lls_examples() {
        let x: Vec<Vec<f64>> = [0.5, -1.0, 2.0, 3.5].iter().map(|v| vec![*v]).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v[0]).collect();
        assert!((lls_estimate(&x, &y).unwrap()[0] - 2.0).abs() < 1e-15);
        assert_eq!(lls_estimate(&x, &[0.0; 4]).unwrap(), vec![0.0]);
        let dup = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![-1.0, -2.0]];
        assert!(matches!(lls_estimate(&dup, &[1.0, 2.0, 3.0]), Err(Error::Singular(_))));
        assert!(matches!(lls_estimate(&dup[..1], &[1.0]), Err(Error::Singular(_))));
    }

    #[test]
    fn lls_matches_normal_equations() {
        let mut rng = derive_stream(3, &[]);
        let t = 40;
        let x: Vec<Vec<f64>> = (0..t).map(|_| vec![StandardNormal.sample(&mut rng), rng.uniform_open()]).collect();
        let y: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = lls_estimate(&x, &y).unwrap();
        // 2x2 normal equations by Cramer's rule
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (xi, yi) in x.iter().zip(&y) {
            s11 += xi[0] * xi[0];
            s12 += xi[0] * xi[1];
            s22 += xi[1] * xi[1];
            b1 += xi[0] * yi;
            b2 += xi[1] * yi;
        }
        let det = s11 * s22 - s12 * s12;
        let oracle = [(b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det];
        for (a, b) in h.iter().zip(oracle) {
            assert!(((a - b) / b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn lls_is_unbiased() {
        let m = linear(1.0);
        let t = 50;
        let reps = 10_000;
        let base = derive_stream(4, &[]);
        let mut sum = 0.0;
        let mut var_sum = 0.0;
        for r in 0..reps {
            let s = rt_simulate(&m, &HyperParams::scalar("h", 2.0), t, &mut base.substream(&[r])).unwrap();
            sum += lls_estimate(&s.x, &s.y).unwrap()[0];
            // conditional variance sigma^2 / sum x^2
            var_sum += 1.0 / s.x.iter().map(|x| x[0] * x[0]).sum::<f64>();
        }
        let mean = sum / reps as f64;
        let se = (var_sum / reps as f64).sqrt() / (reps as f64).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * se, "{mean} se {se}");
    }

    #[test]
    fn sine_grid_recovers_truth() {
        let m = RtModel { bx: HyperBox::scalar("h", 0.0, 2.0).unwrap(), ..RtModel::sine(0.0) };
        let s = rt_simulate(&m, &HyperParams::scalar("h", 1.0), 50, &mut derive_stream(5, &[])).unwrap();
        let coarse = nls_grid_estimate(&m, &s.y, &s.x, &m.bx, 201).unwrap().values()[0];
        let dense = nls_grid_estimate(&m, &s.y, &s.x, &m.bx, 2001).unwrap().values()[0];
        assert!((coarse - 1.0).abs() < 1e-12);
        assert!((coarse - dense).abs() <= 0.01);
        let s = rt_simulate(&m, &HyperParams::scalar("h", 0.37), 50, &mut derive_stream(5, &[])).unwrap();
        assert!((nls_grid_estimate(&m, &s.y, &s.x, &m.bx, 201).unwrap().values()[0] - 0.37).abs() < 1e-12);
    }

    #[test]
    fn constant_map_picks_lower_corner() {
        let m = RtModel::sine(0.0);
        let x = vec![vec![0.0]; 5];
        let h = nls_grid_estimate(&m, &[0.0; 5], &x, &m.bx, 11).unwrap();
        assert_eq!(h.values(), vec![0.2]);
    }

    #[test]
    fn rate_preconditions_and_flat_fit() {
        let m = linear(0.0);
        let h = HyperParams::scalar("h", 2.0);
        let rng = derive_stream(6, &[]);
        assert!(rate_check_t(&m, &h, &[10, 100, 1000], 1, Estimator::Lls, &rng).is_err());
        assert!(rate_check_t(&m, &h, &[10, 100], 20, Estimator::Lls, &rng).is_err());
        let flat = rate_check_t(&m, &h, &[10, 100, 1000], 10, Estimator::Lls, &rng).unwrap();
        assert!(flat.is_flat());
        assert!(flat.rows.iter().all(|r| r.median_rae < FLAT_RAE));
        let mut csv = Vec::new();
        flat.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("T,median_rae,q25,q75\n10,"));
    }

    #[test]
    fn grid_rate_estimator_runs() {
        let m = RtModel::sine(0.3);
        let out = rate_check_t(
            &m,
            &HyperParams::scalar("h", 1.1),
            &[20, 200, 2000],
            10,
            Estimator::Grid { resolution: 181 },
            &derive_stream(7, &[]),
        )
        .unwrap();
        assert!(out.fit.unwrap().slope < 0.0);
    }

    proptest! {
        #[test]
        fn lls_scale_equivariance(c in 0.1f64..10.0, seed in 0u64..1000) {
            let m = linear(0.5);
            let s = rt_simulate(&m, &HyperParams::scalar("h", 1.3), 30, &mut derive_stream(seed, &[])).unwrap();
            let h = lls_estimate(&s.x, &s.y).unwrap()[0];
            let scaled: Vec<Vec<f64>> = s.x.iter().map(|x| vec![c * x[0]]).collect();
            let hc = lls_estimate(&scaled, &s.y).unwrap()[0];
            prop_assert!((hc - h / c).abs() <= 1e-12 * (h / c).abs().max(1.0));
        }
    }
}
