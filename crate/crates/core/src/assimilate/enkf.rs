use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::assimilate::{ModelFactory, Simulator};
use crate::error::{Error, Result};
use crate::params::{HyperBox, HyperParams, ObservationSeries};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Project onto the nearest box face.
    #[default]
    Clamp,
    /// Mirror across the violated face, then clamp.
    Reflect,
}

/// How the initial ensemble samples the truncated prior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorSampling {
    /// Independent draws.
    Random,
    /// One draw per probability stratum, strata shuffled per coordinate.
    #[default]
    Stratified,
}

/// Observation perturbation scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturbations {
    /// Independent `N(0, R)` draws.
    Random,
    /// Draws centred, projected off the predicted-observation anomalies and
    /// rescaled to sample covariance exactly `R` (Evensen 2004).
    #[default]
    Orthogonal,
}

/// Gaussian prior of the initial ensemble, per hyperparameter label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prior {
    pub mean: HyperParams,
    pub std: HyperParams,
}

impl Prior {
    /// Centre of the box with standard deviation of a sixth of its width.
    pub fn from_box(bx: &HyperBox) -> Prior {
        let lo = bx.lower();
        let hi = bx.upper();
        let template = bx.lower_corner();
        let mean: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let std: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a) / 6.0).collect();
        Prior { mean: template.with_values(&mean), std: template.with_values(&std) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnkfConfig {
    pub m: usize,
    /// Observation-noise variance per observation coordinate.
    pub obs_variance: f64,
    pub inflation: f64,
    pub prior: Prior,
    pub clip: ClipMode,
    /// Run the analysis on `ln h`; needs a strictly positive box.
    pub log_space: bool,
    pub prior_sampling: PriorSampling,
    pub perturbations: Perturbations,
}

impl EnkfConfig {
    pub fn new(m: usize, obs_variance: f64, prior: Prior) -> Self {
        EnkfConfig {
            m,
            obs_variance,
            inflation: 1.02,
            prior,
            clip: ClipMode::Clamp,
            log_space: false,
            prior_sampling: PriorSampling::Stratified,
            perturbations: Perturbations::Orthogonal,
        }
    }

    pub fn validate(&self, bx: &HyperBox) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("ensemble size must be >= 2, got {}", self.m)));
        }
        if !(self.obs_variance > 0.0) || !self.obs_variance.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "observation variance must be > 0, got {}",
                self.obs_variance
            )));
        }
        if !(self.inflation >= 1.0) || !self.inflation.is_finite() {
            return Err(Error::InvalidConfig(format!("inflation must be >= 1, got {}", self.inflation)));
        }
        let labels: Vec<&str> = bx.labels().collect();
        for (name, h) in [("prior mean", &self.prior.mean), ("prior std", &self.prior.std)] {
            if h.labels().collect::<Vec<_>>() != labels {
                return Err(Error::InvalidConfig(format!("{name} labels do not match the box")));
            }
        }
        if self.prior.std.values().iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("prior std must be finite and >= 0".into()));
        }
        if self.log_space && bx.lower().iter().any(|&lo| lo <= 0.0) {
            return Err(Error::InvalidConfig("log-space analysis needs a positive box".into()));
        }
        Ok(())
    }
}

/// `R = sigma^2 / n + floor`.
pub fn default_obs_variance(sigma: f64, n: usize, floor: f64) -> f64 {
    sigma * sigma / n as f64 + floor
}

pub struct Member {
    pub h: HyperParams,
    pub sim: Box<dyn Simulator>,
    pub stream: RngStream,
    pub prediction: Vec<f64>,
}

pub struct Ensemble {
    pub members: Vec<Member>,
}

impl Ensemble {
    pub fn m(&self) -> usize {
        self.members.len()
    }

    /// Advances every member to interval `t` and stores its predicted observation.
    pub fn advance_to(&mut self, t: u64) {
        crate::par::for_each_mut(&mut self.members, |_, mem| {
            while mem.sim.steps() < t {
                mem.sim.advance();
            }
            mem.prediction = mem.sim.observe();
        });
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.members[0].h.len();
        let mut out = vec![0.0; d];
        for mem in &self.members {
            for (o, (_, v)) in out.iter_mut().zip(mem.h.entries()) {
                *o += v;
            }
        }
        out.iter().map(|s| s / self.m() as f64).collect()
    }

    /// Sample standard deviation per coordinate.
    pub fn spread(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; mean.len()];
        for mem in &self.members {
            for (k, (_, v)) in mem.h.entries().iter().enumerate() {
                out[k] += (v - mean[k]) * (v - mean[k]);
            }
        }
        out.iter().map(|s| (s / (self.m() - 1) as f64).sqrt()).collect()
    }
}

fn truncated_normal_quantile(mean: f64, std: f64, lo: f64, hi: f64, u: f64, label: &str) -> Result<f64> {
    if std == 0.0 {
        if mean < lo || mean > hi {
            return Err(Error::InvalidConfig(format!(
                "degenerate prior for `{label}` at {mean} lies outside [{lo}, {hi}]"
            )));
        }
        return Ok(mean);
    }
    let z = Normal::standard();
    let (za, zb) = ((lo - mean) / std, (hi - mean) / std);
    // Work in the lower tail for accuracy when the box sits above the mean.
    let flip = za > 0.0;
    let (a, b) = if flip { (-zb, -za) } else { (za, zb) };
    let (pa, pb) = (z.cdf(a), z.cdf(b));
    if !(pb > pa) {
        return Err(Error::InvalidConfig(format!(
            "prior for `{label}` has no mass inside [{lo}, {hi}]"
        )));
    }
    let q = z.inverse_cdf(pa + u * (pb - pa)).clamp(a, b);
    let x = mean + std * if flip { -q } else { q };
    Ok(x.clamp(lo, hi))
}

/// Draws the initial ensemble. Member `k` takes its prior draw from
/// `base.substream([0, k])` and its simulator stream from `base.substream([1, k])`.
pub fn enkf_init(cfg: &EnkfConfig, bx: &HyperBox, factory: &dyn ModelFactory, base: &RngStream) -> Result<Ensemble> {
    cfg.validate(bx)?;
    let m = cfg.m;
    let lo = bx.lower();
    let hi = bx.upper();
    let mean = cfg.prior.mean.values();
    let std = cfg.prior.std.values();
    let labels: Vec<String> = bx.labels().map(String::from).collect();
    let d = labels.len();

    let strata: Vec<Vec<usize>> = match cfg.prior_sampling {
        PriorSampling::Random => Vec::new(),
        PriorSampling::Stratified => (0..d)
            .map(|k| {
                let mut p: Vec<usize> = (0..m).collect();
                p.shuffle(&mut base.substream(&[2, k as u64]));
                p
            })
            .collect(),
    };

    let mut hs = Vec::with_capacity(m);
    for k in 0..m {
        let mut s = base.substream(&[0, k as u64]);
        let mut vals = Vec::with_capacity(d);
        for j in 0..d {
            let u = s.uniform_open();
            let u = match cfg.prior_sampling {
                PriorSampling::Random => u,
                PriorSampling::Stratified => (strata[j][k] as f64 + u) / m as f64,
            };
            vals.push(truncated_normal_quantile(mean[j], std[j], lo[j], hi[j], u, &labels[j])?);
        }
        hs.push(cfg.prior.mean.with_values(&vals));
    }

    let built: Vec<Result<Member>> = crate::par::map_indexed(m, |k| {
        let stream = base.substream(&[1, k as u64]);
        let sim = factory.build(&hs[k], stream.clone())?;
        let prediction = sim.observe();
        Ok(Member { h: hs[k].clone(), sim, stream, prediction })
    });
    let members = built.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

fn clip_value(x: f64, lo: f64, hi: f64, mode: ClipMode) -> f64 {
    match mode {
        ClipMode::Clamp => x.clamp(lo, hi),
        ClipMode::Reflect => {
            let y = if x < lo {
                2.0 * lo - x
            } else if x > hi {
                2.0 * hi - x
            } else {
                x
            };
            y.clamp(lo, hi)
        }
    }
}

fn perturbation_matrix(cfg: &EnkfConfig, anomalies: &DMatrix<f64>, r: usize, rng: &RngStream) -> DMatrix<f64> {
    let m = cfg.m;
    let mut e = DMatrix::<f64>::zeros(m, r);
    for k in 0..m {
        let mut s = rng.substream(&[k as u64]);
        for j in 0..r {
            let z: f64 = StandardNormal.sample(&mut s);
            e[(k, j)] = z * cfg.obs_variance.sqrt();
        }
    }
    if cfg.perturbations == Perturbations::Random {
        return e;
    }
    // Gram-Schmidt basis of span{1, anomaly columns}.
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(m, 1.0 / (m as f64).sqrt())];
    for j in 0..anomalies.ncols() {
        let mut v = anomalies.column(j).into_owned();
        let scale = v.norm();
        for q in &basis {
            let c = q.dot(&v);
            v -= q * c;
        }
        let nv = v.norm();
        if scale > 0.0 && nv > 1e-10 * scale {
            basis.push(v / nv);
        }
    }
    if m <= basis.len() + r {
        return e;
    }
    for j in 0..r {
        let mut col = e.column(j).into_owned();
        for q in &basis {
            let c = q.dot(&col);
            col -= q * c;
        }
        e.set_column(j, &col);
    }
    let s = e.transpose() * &e / (m - 1) as f64;
    let Some(chol) = s.cholesky() else {
        return e;
    };
    // e <- e L^{-T} sqrt(R), so e^T e / (m - 1) = R I.
    let l_inv_t = match chol.l().try_inverse() {
        Some(li) => li.transpose(),
        None => return e,
    };
    e * l_inv_t * cfg.obs_variance.sqrt()
}

/// Perturbed-observation analysis of the stored member predictions against
/// `y_obs`. Perturbations for member `k` come from `rng.substream([k])`.
pub fn enkf_assimilate_step(
    ens: &mut Ensemble,
    y_obs: &[f64],
    cfg: &EnkfConfig,
    bx: &HyperBox,
    rng: &RngStream,
) -> Result<()> {
    let m = ens.m();
    if m != cfg.m {
        return Err(Error::Shape(format!("ensemble has {m} members, config expects {}", cfg.m)));
    }
    let r = y_obs.len();
    let d = bx.dim();
    let mut x = DMatrix::<f64>::zeros(m, d);
    let mut y = DMatrix::<f64>::zeros(m, r);
    for (k, mem) in ens.members.iter().enumerate() {
        if mem.prediction.len() != r {
            return Err(Error::Shape(format!(
                "member prediction has {} coordinates, observation has {r}",
                mem.prediction.len()
            )));
        }
        for (j, (_, v)) in mem.h.entries().iter().enumerate() {
            x[(k, j)] = if cfg.log_space { v.ln() } else { *v };
        }
        for j in 0..r {
            y[(k, j)] = mem.prediction[j];
        }
    }
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut a = x.clone();
    let mut b = y.clone();
    for k in 0..m {
        for j in 0..d {
            a[(k, j)] = cfg.inflation * (x[(k, j)] - x_mean[j]);
        }
        for j in 0..r {
            b[(k, j)] = cfg.inflation * (y[(k, j)] - y_mean[j]);
        }
    }
    let denom = (m - 1) as f64;
    let c_hy = a.transpose() * &b / denom;
    let mut c_yy = b.transpose() * &b / denom;
    for j in 0..r {
        c_yy[(j, j)] += cfg.obs_variance;
    }
    let chol = c_yy
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance is not positive definite".into()))?;
    // K = C_hy (C_yy + R)^-1, via K^T = (C_yy + R)^-1 C_hy^T.
    let gain = chol.solve(&c_hy.transpose()).transpose();

    let eps = perturbation_matrix(cfg, &b, r, rng);
    let lo = bx.lower();
    let hi = bx.upper();
    for (k, mem) in ens.members.iter_mut().enumerate() {
        let mut innov = DVector::<f64>::zeros(r);
        for j in 0..r {
            innov[j] = y_obs[j] + eps[(k, j)] - (y_mean[j] + b[(k, j)]);
        }
        let delta = &gain * innov;
        let vals: Vec<f64> = (0..d)
            .map(|j| {
                let v = x[(k, j)] + (cfg.inflation - 1.0) * (x[(k, j)] - x_mean[j]) + delta[j];
                let v = if cfg.log_space { v.exp() } else { v };
                clip_value(v, lo[j], hi[j], cfg.clip)
            })
            .collect();
        mem.h = mem.h.with_values(&vals);
    }
    let results: Vec<Result<()>> = {
        let mut out = Vec::with_capacity(m);
        for mem in ens.members.iter_mut() {
            let h = mem.h.clone();
            out.push(mem.sim.set_hyper(&h));
        }
        out
    };
    results.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub t: u64,
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
}

/// Ensemble mean and spread after every assimilated observation.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateTrace {
    pub labels: Vec<String>,
    pub initial_mean: Vec<f64>,
    pub initial_spread: Vec<f64>,
    pub steps: Vec<TraceStep>,
}

impl EstimateTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_mean(&self) -> Option<&[f64]> {
        self.steps.last().map(|s| s.mean.as_slice())
    }

    pub fn initial(&self) -> HyperParams {
        HyperParams::new(self.labels.iter().cloned().zip(self.initial_mean.iter().copied()))
            .expect("trace labels are distinct")
    }

    /// CSV with `t,h_hat,spread`; several labels get `h_hat_<label>,spread_<label>` pairs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        if self.labels.len() == 1 {
            header.push_str(",h_hat,spread");
        } else {
            for l in &self.labels {
                header.push_str(&format!(",h_hat_{l},spread_{l}"));
            }
        }
        writeln!(w, "# schema_version=1")?;
        writeln!(w, "{header}")?;
        for s in &self.steps {
            let mut line = s.t.to_string();
            for (m, sd) in s.mean.iter().zip(&s.spread) {
                line.push_str(&format!(",{m},{sd}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Initializes from `rng.substream([0])`, then for each observation in
/// `y_star` advances the members, assimilates with `rng.substream([1, idx])`
/// and records the ensemble mean and spread.
pub fn enkf_run(
    cfg: &EnkfConfig,
    factory: &dyn ModelFactory,
    y_star: &ObservationSeries,
    bx: &HyperBox,
    rng: &RngStream,
) -> Result<EstimateTrace> {
    if y_star.is_empty() {
        return Err(Error::Shape("no observations to assimilate".into()));
    }
    let mut ens = enkf_init(cfg, bx, factory, &rng.substream(&[0]))?;
    let mut trace = EstimateTrace {
        labels: bx.labels().map(String::from).collect(),
        initial_mean: ens.mean(),
        initial_spread: ens.spread(),
        steps: Vec::with_capacity(y_star.len()),
    };
    for (idx, (t, y)) in y_star.iter().enumerate() {
        ens.advance_to(t);
        enkf_assimilate_step(&mut ens, y, cfg, bx, &rng.substream(&[1, idx as u64]))?;
        trace.steps.push(TraceStep { t, mean: ens.mean(), spread: ens.spread() });
    }
    Ok(trace)
}
