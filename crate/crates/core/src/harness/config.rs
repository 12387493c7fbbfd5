use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assimilate::{
    default_obs_variance, ClipMode, EnkfConfig, Perturbations, Prior, PriorSampling,
};
use crate::error::{Error, Result};
use crate::nls::{Estimator, InputDist, Transform};
use crate::params::{HyperBox, HyperParams};
use crate::sis::{SisConfig, H_GAMMA, H_LAMBDA};
use crate::snn::{SnnConfig, H_DYN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Identifiability,
    Scaling,
    Rate,
    Simulate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Identifiability => "identifiability",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Simulate => "simulate",
        }
    }

    /// First tag of every task stream.
    pub fn tag(self) -> u64 {
        match self {
            ExperimentKind::Identifiability => 1,
            ExperimentKind::Scaling => 2,
            ExperimentKind::Rate => 3,
            ExperimentKind::Simulate => 4,
        }
    }
}

/// `iid` is the synthetic i.i.d. mean-observation model; `rt` the single-node
/// resample-and-transform system, whose `sizes` are sample counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Sis,
    Snn,
    Iid,
    Rt,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Sis => "sis",
            ModelChoice::Snn => "snn",
            ModelChoice::Iid => "iid",
            ModelChoice::Rt => "rt",
        }
    }

    fn labels(self) -> &'static [&'static str] {
        match self {
            ModelChoice::Sis => &[H_GAMMA, H_LAMBDA],
            ModelChoice::Snn => &[H_DYN],
            ModelChoice::Iid | ModelChoice::Rt => &[],
        }
    }

    /// Representativeness floor added to the filter's observation variance.
    pub fn r_floor(self) -> f64 {
        match self {
            ModelChoice::Snn => 1e-2,
            _ => 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnkfSettings {
    pub m: usize,
    pub inflation: f64,
    /// Overrides `noise_sigma^2 / n + r_floor` when set.
    pub obs_variance: Option<f64>,
    pub r_floor: Option<f64>,
    /// Defaults to the box centre with a sixth of the box width as std.
    pub prior: Option<Prior>,
    pub clip: ClipMode,
    pub log_space: bool,
    pub prior_sampling: PriorSampling,
    pub perturbations: Perturbations,
}

impl Default for EnkfSettings {
    fn default() -> Self {
        EnkfSettings {
            m: 100,
            inflation: 1.02,
            obs_variance: None,
            r_floor: None,
            prior: None,
            clip: ClipMode::Clamp,
            log_space: false,
            prior_sampling: PriorSampling::Stratified,
            perturbations: Perturbations::Orthogonal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IidSettings {
    /// Grid points per axis.
    pub resolution: usize,
    /// Simulations averaged per grid point.
    pub replicates: usize,
}

impl Default for IidSettings {
    fn default() -> Self {
        IidSettings { resolution: 201, replicates: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RtSettings {
    pub transform: Transform,
    pub input: InputDist,
    pub sigma: f64,
    pub estimator: Estimator,
}

impl Default for RtSettings {
    fn default() -> Self {
        RtSettings {
            transform: Transform::Linear,
            input: InputDist::Normal,
            sigma: 1.0,
            estimator: Estimator::Lls,
        }
    }
}

fn default_reps() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_amplitudes() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5]
}

fn default_true() -> bool {
    true
}

fn default_window() -> usize {
    100
}

fn default_sis() -> SisConfig {
    SisConfig::new(0, 0.1)
}

fn default_snn() -> SnnConfig {
    SnnConfig::new(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelChoice,
    pub truth: HyperParams,
    /// Defaults to `[h/4, 4h]` around the truth.
    #[serde(rename = "box", default)]
    pub bx: Option<HyperBox>,
    pub sizes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub enkf: EnkfSettings,
    /// Per-node observation noise standard deviation.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_sis")]
    pub sis: SisConfig,
    #[serde(default = "default_snn")]
    pub snn: SnnConfig,
    #[serde(default)]
    pub iid: IidSettings,
    #[serde(default)]
    pub rt: RtSettings,
    #[serde(default = "default_amplitudes")]
    pub amplitudes: Vec<f64>,
    /// Perturbed runs of the sweep reuse the truth run's stream.
    #[serde(default = "default_true")]
    pub paired_streams: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Fill `wall_ms`; off by default so result files are reproducible.
    #[serde(default)]
    pub record_timing: bool,
    /// Also write every EnKF trace as CSV.
    #[serde(default)]
    pub save_traces: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Built-in configuration for `simulate` without a config file.
    pub fn default_simulation(model: ModelChoice) -> Self {
        let (truth, sizes, t) = match model {
            ModelChoice::Snn => (HyperParams::scalar(H_DYN, 4.86e-6), vec![1000], 2000),
            _ => (HyperParams::scalar(H_GAMMA, 0.0015), vec![1000], 1500),
        };
        ExperimentConfig {
            kind: ExperimentKind::Simulate,
            model,
            truth,
            bx: None,
            sizes,
            reps: 1,
            t,
            base_seed: 0,
            enkf: EnkfSettings::default(),
            noise_sigma: 0.0,
            output_dir: default_output_dir(),
            sis: default_sis(),
            snn: default_snn(),
            iid: IidSettings::default(),
            rt: RtSettings::default(),
            amplitudes: default_amplitudes(),
            paired_streams: true,
            window: default_window(),
            record_timing: false,
            save_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::field("sizes", "must not be empty"));
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::field("sizes", "must be strictly increasing"));
        }
        if self.sizes[0] == 0 {
            return Err(Error::field("sizes", "must be positive"));
        }
        if self.reps == 0 {
            return Err(Error::field("reps", "must be >= 1"));
        }
        if self.t == 0 {
            return Err(Error::field("T", "must be >= 1"));
        }
        if self.truth.is_empty() {
            return Err(Error::field("truth", "needs at least one hyperparameter"));
        }
        let allowed = self.model.labels();
        if !allowed.is_empty() {
            if let Some(bad) = self.truth.labels().find(|l| !allowed.contains(l)) {
                return Err(Error::field(
                    "truth",
                    format!("`{bad}` is not a {} hyperparameter (expected one of {allowed:?})", self.model.name()),
                ));
            }
        }
        if self.model == ModelChoice::Sis && self.truth.get(H_GAMMA).is_none() {
            return Err(Error::field("truth", format!("SIS runs need `{H_GAMMA}`")));
        }
        if matches!(self.model, ModelChoice::Iid | ModelChoice::Rt) && self.truth.len() != 1 {
            return Err(Error::field("truth", "the synthetic models take one hyperparameter"));
        }
        let bx = self.hyper_box()?;
        if !bx.contains(&self.truth) {
            return Err(Error::field("box", "must contain the truth"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::field("noise_sigma", "must be finite and >= 0"));
        }
        if self.kind == ExperimentKind::Identifiability {
            if self.amplitudes.is_empty() {
                return Err(Error::field("amplitudes", "must not be empty"));
            }
            if self.amplitudes.iter().any(|a| !(0.0..1.0).contains(a)) {
                return Err(Error::field("amplitudes", "must lie in [0, 1)"));
            }
            if self.amplitudes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::field("amplitudes", "must be strictly increasing"));
            }
            if matches!(self.model, ModelChoice::Iid | ModelChoice::Rt) {
                return Err(Error::field("model", "identifiability sweeps need sis or snn"));
            }
        }
        if self.kind == ExperimentKind::Scaling {
            if matches!(self.model, ModelChoice::Iid | ModelChoice::Rt) {
                return Err(Error::field("model", "scaling experiments need sis or snn"));
            }
            if self.window == 0 || self.window as u64 > self.t {
                return Err(Error::field("window", format!("must lie in 1..=T ({})", self.t)));
            }
            self.enkf_config(self.sizes[0]).map_err(|e| Error::field("enkf", e.to_string()))?;
        }
        if self.kind == ExperimentKind::Rate {
            let need = if self.model == ModelChoice::Rt { 3 } else { 2 };
            if self.sizes.len() < need {
                return Err(Error::field("sizes", format!("a rate fit needs at least {need} sizes")));
            }
            if self.model == ModelChoice::Rt && self.reps < 10 {
                return Err(Error::field("reps", "sample-size rate checks need reps >= 10"));
            }
            if matches!(self.model, ModelChoice::Sis | ModelChoice::Snn)
                && (self.window == 0 || self.window as u64 > self.t)
            {
                return Err(Error::field("window", format!("must lie in 1..=T ({})", self.t)));
            }
        }
        if self.kind == ExperimentKind::Simulate && matches!(self.model, ModelChoice::Iid | ModelChoice::Rt) {
            return Err(Error::field("model", "simulate supports sis and snn"));
        }
        match self.model {
            ModelChoice::Sis => {
                if !(0.0..=1.0).contains(&self.sis.p_init) {
                    return Err(Error::field("sis.p_init", "must lie in [0, 1]"));
                }
                if !(self.sis.h_lambda > 0.0) {
                    return Err(Error::field("sis.h_lambda", "must be positive"));
                }
                if self.sis.n != 0 {
                    return Err(Error::field("sis.n", "is set from `sizes`"));
                }
            }
            ModelChoice::Snn => {
                self.snn.substeps().map_err(|e| Error::field("snn.dt", e.to_string()))?;
                self.snn.constants.validate().map_err(|e| Error::field("snn.constants", e.to_string()))?;
                if !(self.snn.alpha > 0.0) {
                    return Err(Error::field("snn.alpha", "must be positive"));
                }
                if !(self.snn.e_fraction > 0.0 && self.snn.e_fraction < 1.0) {
                    return Err(Error::field("snn.e_fraction", "must lie in (0, 1)"));
                }
                if self.snn.n != 0 {
                    return Err(Error::field("snn.n", "is set from `sizes`"));
                }
            }
            ModelChoice::Iid => {
                if self.iid.resolution < 2 {
                    return Err(Error::field("iid.resolution", "must be >= 2"));
                }
                if self.iid.replicates == 0 {
                    return Err(Error::field("iid.replicates", "must be >= 1"));
                }
            }
            ModelChoice::Rt => {
                if !(self.rt.sigma >= 0.0) {
                    return Err(Error::field("rt.sigma", "must be >= 0"));
                }
                if let Estimator::Grid { resolution } = self.rt.estimator {
                    if resolution < 2 {
                        return Err(Error::field("rt.estimator.resolution", "must be >= 2"));
                    }
                }
            }
        }
        Ok(())
    }

    /// The configured box, or `[h/4, 4h]` around each positive truth value.
    pub fn hyper_box(&self) -> Result<HyperBox> {
        if let Some(bx) = &self.bx {
            let labels: Vec<&str> = bx.labels().collect();
            if labels != self.truth.labels().collect::<Vec<_>>() {
                return Err(Error::field("box", "labels must match `truth`"));
            }
            return Ok(bx.clone());
        }
        let mut bounds = Vec::new();
        for (label, v) in self.truth.entries() {
            if !(*v > 0.0) {
                return Err(Error::field("box", format!("needed explicitly for non-positive `{label}`")));
            }
            bounds.push((label.clone(), v / 4.0, 4.0 * v));
        }
        HyperBox::new(bounds).map_err(|e| Error::field("box", e.to_string()))
    }

    /// Filter settings for a system of `n` nodes.
    pub fn enkf_config(&self, n: usize) -> Result<EnkfConfig> {
        let bx = self.hyper_box()?;
        let e = &self.enkf;
        let obs_variance = e.obs_variance.unwrap_or_else(|| {
            default_obs_variance(self.noise_sigma, n, e.r_floor.unwrap_or(self.model.r_floor()))
        });
        let cfg = EnkfConfig {
            m: e.m,
            obs_variance,
            inflation: e.inflation,
            prior: e.prior.clone().unwrap_or_else(|| Prior::from_box(&bx)),
            clip: e.clip,
            log_space: e.log_space,
            prior_sampling: e.prior_sampling,
            perturbations: e.perturbations,
        };
        cfg.validate(&bx)?;
        Ok(cfg)
    }

    pub fn sis_config(&self, n: usize) -> SisConfig {
        SisConfig { n, ..self.sis.clone() }
    }

    pub fn snn_config(&self, n: usize) -> SnnConfig {
        SnnConfig { n, ..self.snn.clone() }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "kind": "scaling",
        "model": "sis",
        "truth": {"h_gamma": 0.0015},
        "sizes": [400, 800],
        "T": 200
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.reps, 1);
        assert_eq!(cfg.window, 100);
        assert_eq!(cfg.amplitudes, vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5]);
        assert_eq!(cfg.enkf.m, 100);
        assert_eq!(cfg.enkf.inflation, 1.02);
        assert_eq!(cfg.sis.p_init, 0.1);
        assert_eq!(cfg.sis.in_degree, 10);
        assert_eq!(cfg.sis.h_lambda, 0.0025);
        let bx = cfg.hyper_box().unwrap();
        assert_eq!(bx.interval(H_GAMMA), Some((0.000375, 0.006)));
        let enkf = cfg.enkf_config(400).unwrap();
        assert!((enkf.obs_variance - 1e-6).abs() < 1e-18);
        assert!((enkf.prior.std.values()[0] - (0.006 - 0.000375) / 6.0).abs() < 1e-15);
        assert!(!cfg.record_timing);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json(text) {
            Err(Error::Field { field, .. }) => field,
            other => panic!("expected a field error, got {other:?}"),
        }
    }

    #[test]
    fn invariant_errors_name_the_field() {
        assert_eq!(field_of(&MINIMAL.replace("[400, 800]", "[]")), "sizes");
        assert_eq!(field_of(&MINIMAL.replace("[400, 800]", "[800, 400]")), "sizes");
        assert_eq!(field_of(&MINIMAL.replace("\"T\": 200", "\"T\": 0")), "T");
        assert_eq!(field_of(&MINIMAL.replace("\"T\": 200", "\"T\": 50")), "window");
        assert_eq!(field_of(&MINIMAL.replace("h_gamma\": 0.0015", "h_x\": 0.0015")), "truth");
        let with_box = MINIMAL.replace("\"T\"", "\"box\": {\"h_gamma\": [0.002, 0.003]}, \"T\"");
        assert_eq!(field_of(&with_box), "box");
        let rate = MINIMAL.replace("scaling", "rate").replace("[400, 800]", "[400]");
        assert_eq!(field_of(&rate), "sizes");
    }

    #[test]
    fn parse_errors() {
        let unknown = MINIMAL.replace("\"T\"", "\"bogus\": 1, \"T\"");
        let err = ExperimentConfig::from_json(&unknown).unwrap_err();
        assert!(matches!(&err, Error::Parse(m) if m.contains("bogus")), "{err}");
        let dup = MINIMAL.replace("\"T\": 200", "\"T\": 200, \"T\": 300");
        assert!(matches!(ExperimentConfig::from_json(&dup), Err(Error::Parse(_))));
        let dup_truth = MINIMAL.replace("\"h_gamma\": 0.0015", "\"h_gamma\": 0.0015, \"h_gamma\": 0.002");
        assert!(matches!(ExperimentConfig::from_json(&dup_truth), Err(Error::Parse(_))));
        let nested = MINIMAL.replace("\"T\"", "\"enkf\": {\"size\": 3}, \"T\"");
        assert!(matches!(ExperimentConfig::from_json(&nested), Err(Error::Parse(_))));
        assert!(ExperimentConfig::from_json("{").unwrap_err().is_validation());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
