use super::*;
use crate::params::{HyperBox, HyperParams, ObservationSeries};
use crate::rng::derive_stream;
use crate::sis::{SisConfig, SisFactory, H_GAMMA};

fn toy_cfg(m: usize) -> (EnkfConfig, HyperBox) {
    let bx = HyperBox::scalar("h", -50.0, 50.0).unwrap();
    let prior = Prior { mean: HyperParams::scalar("h", 0.0), std: HyperParams::scalar("h", 1.0) };
    let mut cfg = EnkfConfig::new(m, 1.0, prior);
    cfg.inflation = 1.0;
    (cfg, bx)
}

fn moments(ens: &Ensemble) -> (f64, f64) {
    (ens.mean()[0], ens.spread()[0].powi(2))
}

fn toy_posterior(cfg: &EnkfConfig, bx: &HyperBox, y: f64, seed: u64) -> (f64, f64) {
    let base = derive_stream(seed, &[]);
    let mut ens = enkf_init(cfg, bx, &IdentityFactory, &base.substream(&[0])).unwrap();
    ens.advance_to(1);
    enkf_assimilate_step(&mut ens, &[y], cfg, bx, &base.substream(&[1])).unwrap();
    moments(&ens)
}

#[test]
fn kalman_oracle_large_ensemble() {
    let (cfg, bx) = toy_cfg(100_000);
    let y = 1.3;
    let (mean, var) = toy_posterior(&cfg, &bx, y, 4);
    // exact conjugate update: prior N(0,1), R = 1
    assert!((mean - y / 2.0).abs() < 0.01 * y / 2.0, "mean {mean}");
    assert!((var - 0.5).abs() < 0.01 * 0.5, "var {var}");
}

#[test]
fn kalman_oracle_plain_sampling_converges() {
    // independent prior draws and perturbations: error shrinks like 1/sqrt(m)
    let y = 1.0;
    for m in [100usize, 1_000, 10_000] {
        let (mut cfg, bx) = toy_cfg(m);
        cfg.prior_sampling = PriorSampling::Random;
        cfg.perturbations = Perturbations::Random;
        let errs: Vec<f64> = (0..8)
            .map(|s| (toy_posterior(&cfg, &bx, y, 100 + s).0 - 0.5).abs())
            .collect();
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        assert!(rms * (m as f64).sqrt() < 2.5, "m={m} rms={rms}");
    }
}

#[test]
fn init_respects_box_and_prior() {
    let bx = HyperBox::scalar(H_GAMMA, 0.0005, 0.003).unwrap();
    let prior = Prior { mean: HyperParams::scalar(H_GAMMA, 0.0015), std: HyperParams::scalar(H_GAMMA, 0.0004) };
    let mut cfg = EnkfConfig::new(100, 1e-6, prior);
    for sampling in [PriorSampling::Random, PriorSampling::Stratified] {
        cfg.prior_sampling = sampling;
        let ens = enkf_init(&cfg, &bx, &IdentityFactory, &derive_stream(3, &[])).unwrap();
        assert_eq!(ens.m(), 100);
        assert!(ens.members.iter().all(|m| bx.contains(&m.h)));
        let mean = ens.mean()[0];
        assert!((mean - 0.0015).abs() < 3.0 * 0.0004 / 10.0, "{mean}");
    }
    cfg.prior.std = HyperParams::scalar(H_GAMMA, 0.0);
    let ens = enkf_init(&cfg, &bx, &IdentityFactory, &derive_stream(3, &[])).unwrap();
    assert!(ens.members.iter().all(|m| m.h.values() == vec![0.0015]));
}

#[test]
fn init_rejects_prior_outside_box() {
    let bx = HyperBox::scalar("h", 0.0, 1.0).unwrap();
    let prior = Prior { mean: HyperParams::scalar("h", 100.0), std: HyperParams::scalar("h", 1.0) };
    let cfg = EnkfConfig::new(10, 1.0, prior.clone());
    assert!(enkf_init(&cfg, &bx, &IdentityFactory, &derive_stream(1, &[])).err().unwrap().is_validation());
    let mut cfg = EnkfConfig::new(10, 1.0, prior);
    cfg.prior.std = HyperParams::scalar("h", 0.0);
    assert!(enkf_init(&cfg, &bx, &IdentityFactory, &derive_stream(1, &[])).is_err());
    // far tail on the other side still has representable mass
    let far = Prior { mean: HyperParams::scalar("h", -8.0), std: HyperParams::scalar("h", 1.0) };
    let ens = enkf_init(&EnkfConfig::new(10, 1.0, far), &bx, &IdentityFactory, &derive_stream(1, &[])).unwrap();
    assert!(ens.members.iter().all(|m| bx.contains(&m.h)));
}

#[test]
fn config_validation() {
    let (cfg, bx) = toy_cfg(10);
    for bad in [
        EnkfConfig { m: 1, ..cfg.clone() },
        EnkfConfig { obs_variance: 0.0, ..cfg.clone() },
        EnkfConfig { inflation: 0.9, ..cfg.clone() },
        EnkfConfig { log_space: true, ..cfg.clone() },
    ] {
        assert!(bad.validate(&bx).is_err());
    }
    assert!(cfg.validate(&bx).is_ok());
}

/// Every member predicts the same value regardless of h.
struct Flat;

impl ModelFactory for Flat {
    fn kind(&self) -> ModelKind {
        ModelKind::Custom
    }

    fn build(&self, h: &HyperParams, s: crate::rng::RngStream) -> crate::error::Result<Box<dyn Simulator>> {
        struct F(Box<dyn Simulator>);
        impl Simulator for F {
            fn kind(&self) -> ModelKind {
                ModelKind::Custom
            }
            fn n(&self) -> usize {
                1
            }
            fn steps(&self) -> u64 {
                self.0.steps()
            }
            fn advance(&mut self) {
                self.0.advance()
            }
            fn node_observations(&self) -> Vec<f64> {
                vec![0.25]
            }
            fn hyper(&self) -> &HyperParams {
                self.0.hyper()
            }
            fn set_hyper(&mut self, h: &HyperParams) -> crate::error::Result<()> {
                self.0.set_hyper(h)
            }
        }
        Ok(Box::new(F(IdentityFactory.build(h, s)?)))
    }
}

#[test]
fn zero_prediction_spread_leaves_members() {
    let (cfg, bx) = toy_cfg(50);
    let base = derive_stream(9, &[]);
    let mut ens = enkf_init(&cfg, &bx, &Flat, &base).unwrap();
    let before: Vec<f64> = ens.members.iter().map(|m| m.h.values()[0]).collect();
    ens.advance_to(1);
    enkf_assimilate_step(&mut ens, &[3.0], &cfg, &bx, &base.substream(&[5])).unwrap();
    let after: Vec<f64> = ens.members.iter().map(|m| m.h.values()[0]).collect();
    assert_eq!(before, after);
}

#[test]
fn observing_the_ensemble_mean_is_a_fixed_point() {
    let (cfg, bx) = toy_cfg(200);
    let base = derive_stream(10, &[]);
    let mut ens = enkf_init(&cfg, &bx, &IdentityFactory, &base).unwrap();
    let start = ens.mean()[0];
    let spread = ens.spread()[0];
    let y = start;
    for t in 1..=20 {
        ens.advance_to(t);
        enkf_assimilate_step(&mut ens, &[y], &cfg, &bx, &base.substream(&[7, t])).unwrap();
    }
    assert!((ens.mean()[0] - start).abs() < 1e-9 * spread.max(1.0), "{} vs {}", ens.mean()[0], start);
}

#[test]
fn members_stay_in_box() {
    let bx = HyperBox::scalar("h", 0.0, 1.0).unwrap();
    let prior = Prior { mean: HyperParams::scalar("h", 0.5), std: HyperParams::scalar("h", 0.3) };
    for clip in [ClipMode::Clamp, ClipMode::Reflect] {
        let mut cfg = EnkfConfig::new(40, 0.01, prior.clone());
        cfg.clip = clip;
        let base = derive_stream(11, &[]);
        let mut ens = enkf_init(&cfg, &bx, &IdentityFactory, &base).unwrap();
        for t in 1..=10 {
            ens.advance_to(t);
            enkf_assimilate_step(&mut ens, &[5.0], &cfg, &bx, &base.substream(&[t])).unwrap();
            assert!(ens.members.iter().all(|m| bx.contains(&m.h) && m.sim.hyper() == &m.h));
        }
    }
}

#[test]
fn log_space_analysis_tracks_positive_truth() {
    let bx = HyperBox::scalar("h", 0.1, 10.0).unwrap();
    let prior = Prior { mean: HyperParams::scalar("h", 1.0), std: HyperParams::scalar("h", 1.0) };
    let mut cfg = EnkfConfig::new(200, 0.01, prior);
    cfg.log_space = true;
    let y_star = ObservationSeries::from_scalars(&[3.0; 30]);
    let trace = enkf_run(&cfg, &IdentityFactory, &y_star, &bx, &derive_stream(12, &[])).unwrap();
    assert!((trace.last_mean().unwrap()[0] - 3.0).abs() < 0.05);
}

#[test]
fn sis_run_trace_is_deterministic() {
    let factory = SisFactory { config: SisConfig::new(300, 0.1) };
    let truth = HyperParams::scalar(H_GAMMA, 0.0015);
    let mut sim = factory.build(&truth, derive_stream(1, &[1])).unwrap();
    let times: Vec<u64> = (1..=40).collect();
    let y_star = record(sim.as_mut(), &times).unwrap();
    let bx = HyperBox::scalar(H_GAMMA, 0.0015 / 4.0, 0.006).unwrap();
    let mut cfg = EnkfConfig::new(20, 1e-6, Prior::from_box(&bx));
    cfg.prior.mean = HyperParams::scalar(H_GAMMA, 0.003);
    let a = enkf_run(&cfg, &factory, &y_star, &bx, &derive_stream(1, &[2])).unwrap();
    let b = enkf_run(&cfg, &factory, &y_star, &bx, &derive_stream(1, &[2])).unwrap();
    assert_eq!(a.len(), 40);
    assert_eq!(a, b);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().nth(1), Some("t,h_hat,spread"));
    assert_eq!(text.lines().count(), 42);
}

#[test]
fn objective_examples() {
    let y = ObservationSeries::from_scalars(&[0.2, 0.3, 0.4]);
    let shifted = ObservationSeries::from_scalars(&[0.7, 0.8, 0.9]);
    assert!((series_objective(&shifted, &y).unwrap() - 0.25).abs() < 1e-12);
    let h = HyperParams::scalar("h", 0.2);
    let obj = empirical_objective(&h, &IdentityFactory, &ObservationSeries::from_scalars(&[0.2; 5]), derive_stream(0, &[]));
    assert_eq!(obj.unwrap(), 0.0);
}

fn sis_toy() -> (SisFactory, ObservationSeries) {
    let factory = SisFactory { config: SisConfig::new(1000, 0.1) };
    let truth = HyperParams::scalar(H_GAMMA, 0.0015);
    let mut sim = factory.build(&truth, derive_stream(77, &[0])).unwrap();
    let times: Vec<u64> = (1..=100).collect();
    (factory, record(sim.as_mut(), &times).unwrap())
}

#[test]
fn sis_objective_at_truth_is_at_the_replicate_floor() {
    let (factory, y_star) = sis_toy();
    let truth = HyperParams::scalar(H_GAMMA, 0.0015);
    let base = derive_stream(78, &[]);
    // floor: distances between independent replicate trajectories at the truth
    let reps: Vec<ObservationSeries> = (0..10)
        .map(|r| record(factory.build(&truth, base.substream(&[r])).unwrap().as_mut(), y_star.times()).unwrap())
        .collect();
    let mut pair = Vec::new();
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            pair.push(series_objective(&reps[i], &reps[j]).unwrap());
        }
    }
    let floor = pair.iter().cloned().fold(0.0, f64::max);
    let at_truth = empirical_objective(&truth, &factory, &y_star, base.substream(&[99])).unwrap();
    assert!(at_truth > 0.0 && at_truth <= floor, "{at_truth} vs floor {floor}");
    let off = empirical_objective(&HyperParams::scalar(H_GAMMA, 0.003), &factory, &y_star, base.substream(&[99])).unwrap();
    assert!(off > floor, "{off} vs floor {floor}");
}

#[test]
fn sis_grid_agrees_with_dense_oracle() {
    let factory = SisFactory { config: SisConfig::new(3200, 0.1) };
    let truth = HyperParams::scalar(H_GAMMA, 0.0015);
    let times: Vec<u64> = (1..=60).collect();
    let y_star = record(factory.build(&truth, derive_stream(5, &[0])).unwrap().as_mut(), &times).unwrap();
    let bx = HyperBox::scalar(H_GAMMA, 0.0005, 0.003).unwrap();
    let base = derive_stream(5, &[1]);
    let objective = |h: &HyperParams, r: usize| {
        empirical_objective(h, &factory, &y_star, base.substream(&[r as u64])).unwrap()
    };
    let coarse = grid_minimize(objective, &bx, 26, 10).unwrap().values()[0];
    let dense = grid_minimize(objective, &bx, 251, 10).unwrap().values()[0];
    let cell = (0.003 - 0.0005) / 25.0;
    assert!((coarse - dense).abs() <= cell * (1.0 + 1e-9), "{coarse} vs {dense}");
}
