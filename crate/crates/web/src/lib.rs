//! WebAssembly bindings for the browser demo in `www/`.

use wasm_bindgen::prelude::*;

use netassim::assimilate::{enkf_run, record, EnkfConfig, ModelFactory, Prior};
use netassim::params::{HyperBox, HyperParams, ObservationSeries};
use netassim::rng::derive_stream;
use netassim::sis::{SisConfig, SisFactory, SisSimulator, H_GAMMA};
use netassim::snn::{snn_run, SnnConfig};

fn js_err(e: netassim::error::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Infected fraction after each of `steps` SIS steps.
#[wasm_bindgen]
pub fn sis_trajectory(n: usize, h_gamma: f64, p_init: f64, steps: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    let cfg = SisConfig::new(n, p_init);
    let h = HyperParams::scalar(H_GAMMA, h_gamma);
    let mut sim = SisSimulator::new(&cfg, &h, derive_stream(seed, &[])).map_err(js_err)?;
    Ok(sim.run(steps))
}

/// LFP in mV at 1 ms resolution.
#[wasm_bindgen]
pub fn snn_lfp(n: usize, h: f64, t_ms: f64, seed: u64) -> Result<Vec<f64>, JsValue> {
    let series = snn_run(&SnnConfig::new(n), h, t_ms, derive_stream(seed, &[])).map_err(js_err)?;
    Ok(series.scalars())
}

/// EnKF estimate of `h_gamma` after each observation of a synthetic SIS
/// truth run, interleaved as `[mean, spread, mean, spread, ...]`.
#[wasm_bindgen]
pub fn enkf_sis(n: usize, h_true: f64, steps: usize, members: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    let factory = SisFactory { config: SisConfig::new(n, 0.1) };
    let truth = HyperParams::scalar(H_GAMMA, h_true);
    let base = derive_stream(seed, &[]);
    let times: Vec<u64> = (1..=steps as u64).collect();
    let mut sim = factory.build(&truth, base.substream(&[0])).map_err(js_err)?;
    let y: ObservationSeries = record(sim.as_mut(), &times).map_err(js_err)?;
    let bx = HyperBox::scalar(H_GAMMA, h_true / 4.0, 4.0 * h_true).map_err(js_err)?;
    let cfg = EnkfConfig::new(members, 1e-6, Prior::from_box(&bx));
    let trace = enkf_run(&cfg, &factory, &y, &bx, &base.substream(&[1])).map_err(js_err)?;
    Ok(trace
        .steps
        .iter()
        .flat_map(|s| [s.mean[0], s.spread[0]])
        .collect())
}
