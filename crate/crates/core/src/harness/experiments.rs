use std::time::Instant;

use crate::assimilate::{
    enkf_run, grid_search, noisy_observe, record, EstimateTrace, ModelFactory,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ExperimentKind, ModelChoice};
use crate::harness::iid::{population_objective, IidFactory};
use crate::harness::output::{ExperimentOutput, Index, RateReport, ResultRow};
use crate::metrics::{final_rae, leading_zero_steps, loglog_slope, median, rae, rrmse, spearman};
use crate::nls::{rate_check_t, RtModel};
use crate::params::{HyperParams, ObservationSeries};
use crate::rng::{derive_stream, RngStream};
use crate::sis::{write_trajectory_csv, SisFactory, SisSimulator};
use crate::snn::{write_lfp_csv, write_raster_csv, SnnFactory, SnnSimulator};

/// Progress sink; the CLI prints to stderr.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

pub fn quiet(_: &str) {}

/// Stream of task `(n, rep)`: `derive_stream(base_seed, [kind, n, rep])`.
pub fn task_stream(cfg: &ExperimentConfig, kind: ExperimentKind, n: usize, rep: usize) -> RngStream {
    derive_stream(cfg.base_seed, &[kind.tag(), n as u64, rep as u64])
}

pub fn model_factory(cfg: &ExperimentConfig, n: usize) -> Result<Box<dyn ModelFactory>> {
    Ok(match cfg.model {
        ModelChoice::Sis => Box::new(SisFactory { config: cfg.sis_config(n) }),
        ModelChoice::Snn => Box::new(SnnFactory { config: cfg.snn_config(n) }),
        ModelChoice::Iid => Box::new(IidFactory { n }),
        ModelChoice::Rt => {
            return Err(Error::InvalidConfig("the rt model has no network simulator".into()));
        }
    })
}

/// Truth observations at steps `1..=T`, with per-node noise drawn from `noise`.
pub fn truth_series(
    factory: &dyn ModelFactory,
    h_star: &HyperParams,
    t: u64,
    sigma: f64,
    stream: RngStream,
    noise: &mut RngStream,
) -> Result<ObservationSeries> {
    let mut sim = factory.build(h_star, stream)?;
    let mut out = ObservationSeries::new();
    for step in 1..=t {
        sim.advance();
        let y = if sigma > 0.0 {
            noisy_observe(&sim.node_observations(), sigma, sim.obs_dim(), noise)?
        } else {
            sim.observe()
        };
        out.push(step, y)?;
    }
    Ok(out)
}

struct Task {
    n: usize,
    rep: usize,
}

fn tasks(cfg: &ExperimentConfig) -> Vec<Task> {
    cfg.sizes
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |rep| Task { n, rep }))
        .collect()
}

struct RowBuilder<'a> {
    cfg: &'a ExperimentConfig,
    kind: ExperimentKind,
}

impl RowBuilder<'_> {
    fn row(&self, n: Index, rep: Index, seed: u64, metric: impl Into<String>, value: f64, wall_ms: u64) -> ResultRow {
        ResultRow {
            experiment: self.kind.name().into(),
            model: self.cfg.model.name().into(),
            n,
            rep,
            seed,
            metric: metric.into(),
            value,
            wall_ms,
        }
    }

    fn summary(&self, n: Index, metric: impl Into<String>, value: f64) -> ResultRow {
        self.row(n, Index::All, self.cfg.base_seed, metric, value, 0)
    }
}

fn elapsed_ms(cfg: &ExperimentConfig, start: Instant) -> u64 {
    if cfg.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

fn check_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::field(
            "kind",
            format!("config declares `{}` but `{}` was requested", cfg.kind.name(), kind.name()),
        ));
    }
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, v.sqrt())
}

fn signed(a: f64, sign: f64) -> String {
    if a == 0.0 {
        "0".into()
    } else if sign > 0.0 {
        format!("+{a}")
    } else {
        format!("-{a}")
    }
}

/// RRMSE between perturbed-hyperparameter runs and the truth run, per
/// amplitude `a` with `h = h*(1 +- a)`.
pub fn run_identifiability_sweep(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    let kind = ExperimentKind::Identifiability;
    check_kind(cfg, kind)?;
    let rb = RowBuilder { cfg, kind };
    let all = tasks(cfg);
    let per_task: Vec<Result<Vec<(f64, f64, f64, usize)>>> = crate::par::map_indexed(all.len(), |i| {
        let Task { n, rep } = all[i];
        let factory = model_factory(cfg, n)?;
        let stream = task_stream(cfg, kind, n, rep);
        let y_star = truth_series(
            factory.as_ref(),
            &cfg.truth,
            cfg.t,
            cfg.noise_sigma,
            stream.substream(&[0]),
            &mut stream.substream(&[2]),
        )?;
        let skip = leading_zero_steps(&y_star);
        let y_ref = y_star.skip(skip);
        let mut out = Vec::new();
        for &a in &cfg.amplitudes {
            let signs: &[f64] = if a == 0.0 { &[1.0] } else { &[1.0, -1.0] };
            for &s in signs {
                let start = Instant::now();
                let h = cfg.truth.map_values(|v| v * (1.0 + s * a));
                let run_stream = if cfg.paired_streams { stream.substream(&[0]) } else { stream.substream(&[1]) };
                let mut sim = factory.build(&h, run_stream)?;
                let y = record(sim.as_mut(), y_star.times())?;
                let value = rrmse(&y.skip(skip), &y_ref)?;
                out.push((a, s, value, elapsed_ms(cfg, start) as usize));
            }
        }
        progress(&format!("identifiability: n={n} rep={rep} done"));
        out.push((f64::NAN, 0.0, skip as f64, 0));
        Ok(out)
    });

    let mut rows = Vec::new();
    let mut by_amp: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); cfg.amplitudes.len()]; cfg.sizes.len()];
    for (task, res) in all.iter().zip(per_task) {
        let vals = res?;
        let seed = task_stream(cfg, kind, task.n, task.rep).stream_id();
        let (n, rep) = (Index::At(task.n as u64), Index::At(task.rep as u64));
        let size_idx = cfg.sizes.iter().position(|&s| s == task.n).expect("task size is configured");
        for &(a, s, value, wall) in &vals {
            if a.is_nan() {
                rows.push(rb.row(n, rep, seed, "dropped_steps", value, 0));
                continue;
            }
            rows.push(rb.row(n, rep, seed, format!("rrmse[a={}]", signed(a, s)), value, wall as u64));
            let ai = cfg.amplitudes.iter().position(|&x| x == a).expect("amplitude is configured");
            by_amp[size_idx][ai].push(value);
        }
    }
    for (si, &n) in cfg.sizes.iter().enumerate() {
        let mut amps = Vec::new();
        let mut means = Vec::new();
        for (ai, &a) in cfg.amplitudes.iter().enumerate() {
            let (m, sd) = mean_std(&by_amp[si][ai]);
            rows.push(rb.summary(Index::At(n as u64), format!("rrmse_mean[|a|={a}]"), m));
            rows.push(rb.summary(Index::At(n as u64), format!("rrmse_std[|a|={a}]"), sd));
            if a > 0.0 {
                amps.push(a);
                means.push(m);
            }
        }
        if amps.len() >= 2 {
            rows.push(rb.summary(Index::At(n as u64), "spearman_amplitude", spearman(&amps, &means)?));
        }
    }
    Ok(ExperimentOutput { csv_name: "identifiability.csv".into(), rows, ..Default::default() })
}

/// One truth system plus one filter run.
pub struct ScalingRun {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub trace: EstimateTrace,
    pub initial_rae: f64,
    pub final_rae: f64,
    pub wall_ms: u64,
}

fn scaling_runs(cfg: &ExperimentConfig, kind: ExperimentKind, progress: Progress) -> Result<Vec<ScalingRun>> {
    let bx = cfg.hyper_box()?;
    let all = tasks(cfg);
    let runs: Vec<Result<ScalingRun>> = crate::par::map_indexed(all.len(), |i| {
        let Task { n, rep } = all[i];
        let start = Instant::now();
        let factory = model_factory(cfg, n)?;
        let stream = task_stream(cfg, kind, n, rep);
        let y_star = truth_series(
            factory.as_ref(),
            &cfg.truth,
            cfg.t,
            cfg.noise_sigma,
            stream.substream(&[0]),
            &mut stream.substream(&[1]),
        )?;
        let enkf = cfg.enkf_config(n)?;
        let trace = enkf_run(&enkf, factory.as_ref(), &y_star, &bx, &stream.substream(&[2]))?;
        let initial_rae = rae(&trace.initial(), &cfg.truth)?;
        let final_rae = final_rae(&trace, cfg.window, &cfg.truth)?;
        progress(&format!("{}: n={n} rep={rep} final_rae={final_rae:.4}", kind.name()));
        Ok(ScalingRun {
            n,
            rep,
            seed: stream.stream_id(),
            trace,
            initial_rae,
            final_rae,
            wall_ms: elapsed_ms(cfg, start),
        })
    });
    runs.into_iter().collect()
}

fn fit_sizes(sizes: &[usize], medians: &[f64]) -> Result<(Option<crate::metrics::RateFit>, Option<f64>)> {
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let rho = if xs.len() >= 2 { Some(spearman(&xs, medians)?) } else { None };
    let fit = if xs.len() >= 2 && medians.iter().all(|&m| m > 0.0) {
        Some(loglog_slope(&xs, medians)?)
    } else {
        None
    };
    Ok((fit, rho))
}

fn scaling_output(cfg: &ExperimentConfig, kind: ExperimentKind, runs: &[ScalingRun], csv: &str, json: &str) -> Result<ExperimentOutput> {
    let rb = RowBuilder { cfg, kind };
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for r in runs {
        let (n, rep) = (Index::At(r.n as u64), Index::At(r.rep as u64));
        rows.push(rb.row(n, rep, r.seed, "initial_rae", r.initial_rae, 0));
        rows.push(rb.row(n, rep, r.seed, "final_rae", r.final_rae, r.wall_ms));
        if let Some(last) = r.trace.last_mean() {
            for (label, v) in r.trace.labels.iter().zip(last) {
                rows.push(rb.row(n, rep, r.seed, format!("h_hat[{label}]"), *v, 0));
            }
        }
        if cfg.save_traces {
            let mut buf = Vec::new();
            r.trace.write_csv(&mut buf)?;
            files.push((format!("traces/{}_n{}_rep{}.csv", cfg.model.name(), r.n, r.rep), buf));
        }
    }
    let mut medians = Vec::new();
    for &n in &cfg.sizes {
        let finals: Vec<f64> = runs.iter().filter(|r| r.n == n).map(|r| r.final_rae).collect();
        let initials: Vec<f64> = runs.iter().filter(|r| r.n == n).map(|r| r.initial_rae).collect();
        let m = median(&finals);
        rows.push(rb.summary(Index::At(n as u64), "median_final_rae", m));
        rows.push(rb.summary(Index::At(n as u64), "median_initial_rae", median(&initials)));
        medians.push(m);
    }
    let (fit, rho) = fit_sizes(&cfg.sizes, &medians)?;
    if let Some(rho) = rho {
        rows.push(rb.summary(Index::All, "spearman_log_n", rho));
    }
    if let Some(f) = fit {
        rows.push(rb.summary(Index::All, "loglog_slope", f.slope));
        rows.push(rb.summary(Index::All, "loglog_r_squared", f.r_squared));
    }
    Ok(ExperimentOutput {
        csv_name: csv.into(),
        rows,
        reports: vec![(json.into(), RateReport::from_fit(fit))],
        files,
    })
}

/// EnKF estimation error against population size.
pub fn run_scaling_experiment(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    let kind = ExperimentKind::Scaling;
    check_kind(cfg, kind)?;
    let runs = scaling_runs(cfg, kind, progress)?;
    scaling_output(cfg, kind, &runs, "scaling.csv", "scaling_rate.json")
}

/// Rate fits: inline scaling runs for the network models, grid estimation
/// on the i.i.d. model, and sample-size checks for the single-node model.
pub fn run_rate_fit(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    let kind = ExperimentKind::Rate;
    check_kind(cfg, kind)?;
    match cfg.model {
        ModelChoice::Sis | ModelChoice::Snn => {
            let runs = scaling_runs(cfg, kind, progress)?;
            scaling_output(cfg, kind, &runs, "rate.csv", "rate.json")
        }
        ModelChoice::Iid => iid_rate(cfg, progress),
        ModelChoice::Rt => rt_rate(cfg, progress),
    }
}

fn iid_rate(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    let kind = ExperimentKind::Rate;
    let rb = RowBuilder { cfg, kind };
    let bx = cfg.hyper_box()?;
    let h_star = cfg.truth.values()[0];
    let all = tasks(cfg);
    let per_task: Vec<Result<(f64, f64, u64)>> = crate::par::map_indexed(all.len(), |i| {
        let Task { n, rep } = all[i];
        let start = Instant::now();
        let factory = IidFactory { n };
        let stream = task_stream(cfg, kind, n, rep);
        let y_star = truth_series(
            &factory,
            &cfg.truth,
            cfg.t,
            cfg.noise_sigma,
            stream.substream(&[0]),
            &mut stream.substream(&[1]),
        )?;
        let objective = |h: &HyperParams, j: usize| {
            crate::assimilate::empirical_objective(h, &factory, &y_star, stream.substream(&[2, j as u64]))
                .unwrap_or(f64::INFINITY)
        };
        let search = grid_search(objective, &bx, cfg.iid.resolution, cfg.iid.replicates)?;
        let err = rae(search.best(), &cfg.truth)?;
        let sup = search
            .points
            .iter()
            .zip(&search.values)
            .map(|(h, l)| (l - population_objective(h.values()[0], h_star)).abs())
            .fold(0.0, f64::max);
        progress(&format!("rate: n={n} rep={rep} rae={err:.4}"));
        Ok((err, sup, elapsed_ms(cfg, start)))
    });
    let mut rows = Vec::new();
    let mut raes: Vec<Vec<f64>> = vec![Vec::new(); cfg.sizes.len()];
    let mut sups: Vec<Vec<f64>> = vec![Vec::new(); cfg.sizes.len()];
    for (task, res) in all.iter().zip(per_task) {
        let (err, sup, wall) = res?;
        let seed = task_stream(cfg, kind, task.n, task.rep).stream_id();
        let (n, rep) = (Index::At(task.n as u64), Index::At(task.rep as u64));
        rows.push(rb.row(n, rep, seed, "rae", err, wall));
        rows.push(rb.row(n, rep, seed, "sup_deviation", sup, 0));
        let si = cfg.sizes.iter().position(|&s| s == task.n).expect("task size is configured");
        raes[si].push(err);
        sups[si].push(sup);
    }
    let med_rae: Vec<f64> = raes.iter().map(|v| median(v)).collect();
    let med_sup: Vec<f64> = sups.iter().map(|v| median(v)).collect();
    for (si, &n) in cfg.sizes.iter().enumerate() {
        rows.push(rb.summary(Index::At(n as u64), "median_rae", med_rae[si]));
        rows.push(rb.summary(Index::At(n as u64), "median_sup_deviation", med_sup[si]));
    }
    let (fit, rho) = fit_sizes(&cfg.sizes, &med_rae)?;
    let (sup_fit, _) = fit_sizes(&cfg.sizes, &med_sup)?;
    if let Some(rho) = rho {
        rows.push(rb.summary(Index::All, "spearman_log_n", rho));
    }
    if let Some(f) = fit {
        rows.push(rb.summary(Index::All, "loglog_slope", f.slope));
    }
    if let Some(f) = sup_fit {
        rows.push(rb.summary(Index::All, "sup_deviation_slope", f.slope));
    }
    Ok(ExperimentOutput {
        csv_name: "rate.csv".into(),
        rows,
        reports: vec![
            ("rate.json".into(), RateReport::from_fit(fit)),
            ("rate_sup_deviation.json".into(), RateReport::from_fit(sup_fit)),
        ],
        files: Vec::new(),
    })
}

fn rt_rate(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    let kind = ExperimentKind::Rate;
    let rb = RowBuilder { cfg, kind };
    let model = RtModel {
        transform: cfg.rt.transform,
        input: cfg.rt.input,
        sigma: cfg.rt.sigma,
        bx: cfg.hyper_box()?,
    };
    let stream = derive_stream(cfg.base_seed, &[kind.tag()]);
    let check = rate_check_t(&model, &cfg.truth, &cfg.sizes, cfg.reps, cfg.rt.estimator, &stream)?;
    progress(&format!("rate: {} sample sizes done", check.rows.len()));
    let mut rows = Vec::new();
    for r in &check.rows {
        let n = Index::At(r.t as u64);
        rows.push(rb.summary(n, "median_rae", r.median_rae));
        rows.push(rb.summary(n, "q25_rae", r.q25));
        rows.push(rb.summary(n, "q75_rae", r.q75));
    }
    if let Some(f) = check.fit {
        rows.push(rb.summary(Index::All, "loglog_slope", f.slope));
    }
    let mut csv = Vec::new();
    check.write_csv(&mut csv)?;
    Ok(ExperimentOutput {
        csv_name: "rate.csv".into(),
        rows,
        reports: vec![("rate.json".into(), RateReport::from_fit(check.fit))],
        files: vec![("rate_T.csv".into(), csv)],
    })
}

/// Forward simulation at the truth: SIS infected-fraction trajectories, or
/// SNN LFP traces with spike rasters.
pub fn run_simulation(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    let kind = ExperimentKind::Simulate;
    check_kind(cfg, kind)?;
    let rb = RowBuilder { cfg, kind };
    let all = tasks(cfg);
    let times: Vec<u64> = (1..=cfg.t).collect();
    let per_task: Vec<Result<(Vec<(String, Vec<u8>)>, f64, u64)>> = crate::par::map_indexed(all.len(), |i| {
        let Task { n, rep } = all[i];
        let start = Instant::now();
        let stream = task_stream(cfg, kind, n, rep);
        let mut files = Vec::new();
        let series = match cfg.model {
            ModelChoice::Sis => {
                let mut sim = SisSimulator::new(&cfg.sis_config(n), &cfg.truth, stream)?;
                let series = record(&mut sim, &times)?;
                let mut buf = Vec::new();
                write_trajectory_csv(&mut buf, &series)?;
                files.push((format!("sis_trajectory_n{n}_rep{rep}.csv"), buf));
                series
            }
            ModelChoice::Snn => {
                let snn = cfg.snn_config(n);
                let mut sim = SnnSimulator::new(&snn, &cfg.truth, stream)?;
                sim.record_spikes();
                let series = record(&mut sim, &times)?;
                let mut lfp = Vec::new();
                write_lfp_csv(&mut lfp, &series, snn.record_every_ms)?;
                let mut raster = Vec::new();
                write_raster_csv(&mut raster, sim.spikes())?;
                files.push((format!("snn_lfp_n{n}_rep{rep}.csv"), lfp));
                files.push((format!("snn_raster_n{n}_rep{rep}.csv"), raster));
                series
            }
            ModelChoice::Iid | ModelChoice::Rt => {
                return Err(Error::field("model", "simulate supports sis and snn"));
            }
        };
        let mean = series.scalars().iter().sum::<f64>() / series.len() as f64;
        progress(&format!("simulate: n={n} rep={rep} done"));
        Ok((files, mean, elapsed_ms(cfg, start)))
    });
    let mut out = ExperimentOutput { csv_name: "simulate.csv".into(), ..Default::default() };
    for (task, res) in all.iter().zip(per_task) {
        let (files, mean, wall) = res?;
        let seed = task_stream(cfg, kind, task.n, task.rep).stream_id();
        out.rows.push(rb.row(
            Index::At(task.n as u64),
            Index::At(task.rep as u64),
            seed,
            "mean_observation",
            mean,
            wall,
        ));
        out.files.extend(files);
    }
    Ok(out)
}

/// Dispatches on the configured experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig, progress: Progress) -> Result<ExperimentOutput> {
    match cfg.kind {
        ExperimentKind::Identifiability => run_identifiability_sweep(cfg, progress),
        ExperimentKind::Scaling => run_scaling_experiment(cfg, progress),
        ExperimentKind::Rate => run_rate_fit(cfg, progress),
        ExperimentKind::Simulate => run_simulation(cfg, progress),
    }
}
