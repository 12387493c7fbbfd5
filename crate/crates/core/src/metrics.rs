//! Evaluation metrics: RRMSE, RAE, final-window RAE, log-log rate fits,
//! Spearman correlation and the identifiability gap.

use serde::{Deserialize, Serialize};

use crate::assimilate::{EstimateTrace, ModelFactory};
use crate::error::{Error, Result};
use crate::params::{HyperParams, ObservationSeries};
use crate::rng::RngStream;

/// Relative root-mean-square error of `y` against the reference `y_star`,
/// averaged over every time and coordinate.
pub fn rrmse(y: &ObservationSeries, y_star: &ObservationSeries) -> Result<f64> {
    y.check_aligned(y_star)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in y.values().iter().zip(y_star.values()) {
        for (&ya, &yb) in a.iter().zip(b) {
            if yb == 0.0 {
                return Err(Error::Domain("RRMSE reference has a zero coordinate".into()));
            }
            let r = (ya - yb) / yb;
            sum += r * r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Shape("RRMSE of empty series".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Number of leading steps whose reference observation has a zero coordinate.
pub fn leading_zero_steps(y_star: &ObservationSeries) -> usize {
    y_star
        .values()
        .iter()
        .take_while(|v| v.iter().any(|&x| x == 0.0))
        .count()
}

/// Relative absolute error; the maximum over coordinates for vectors.
pub fn rae(h_hat: &HyperParams, h_star: &HyperParams) -> Result<f64> {
    if !h_hat.same_labels(h_star) {
        return Err(Error::Shape("RAE needs matching hyperparameter labels".into()));
    }
    let mut worst = 0.0f64;
    for ((label, est), (_, truth)) in h_hat.entries().iter().zip(h_star.entries()) {
        if *truth == 0.0 {
            return Err(Error::Domain(format!("RAE undefined for zero truth `{label}`")));
        }
        worst = worst.max(((est - truth) / truth).abs());
    }
    Ok(worst)
}

/// RAE of the mean of the last `window` estimates.
pub fn final_rae(trace: &EstimateTrace, window: usize, h_star: &HyperParams) -> Result<f64> {
    let len = trace.len();
    if window == 0 || window > len {
        return Err(Error::Bounds(format!("window {window} for a trace of length {len}")));
    }
    let dim = h_star.len();
    let mut mean = vec![0.0; dim];
    for step in &trace.steps[len - window..] {
        for (m, v) in mean.iter_mut().zip(&step.mean) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= window as f64;
    }
    rae(&h_star.with_values(&mean), h_star)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape(format!(
            "log-log fit needs two or more paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("log-log fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape("Spearman needs two or more paired values".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile of a non-empty slice.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Monte Carlo estimate of `E |y_t(h) - y_t(h*)|^2` from clean population-mean
/// observations. Replicate `r` builds both systems from the same stream
/// `rng.substream([r])`, so `h == h_star` gives exactly zero.
pub fn identifiability_gap(
    h: &HyperParams,
    h_star: &HyperParams,
    factory: &dyn ModelFactory,
    t: u64,
    reps: usize,
    rng: &RngStream,
) -> Result<f64> {
    if reps < 2 {
        return Err(Error::InvalidConfig(format!("identifiability gap needs reps >= 2, got {reps}")));
    }
    let one = |r: usize| -> Result<f64> {
        let stream = rng.substream(&[r as u64]);
        let mut a = factory.build(h, stream.clone())?;
        let mut b = factory.build(h_star, stream)?;
        for _ in 0..t {
            a.advance();
            b.advance();
        }
        Ok(a.observe()
            .iter()
            .zip(b.observe())
            .map(|(x, y)| (x - y) * (x - y))
            .sum())
    };
    let gaps: Vec<f64> = crate::par::map_indexed(reps, one).into_iter().collect::<Result<_>>()?;
    Ok(gaps.iter().sum::<f64>() / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assimilate::TraceStep;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> ObservationSeries {
        ObservationSeries::from_scalars(v)
    }

    fn trace(values: &[f64]) -> EstimateTrace {
        EstimateTrace {
            labels: vec!["h".into()],
            initial_mean: vec![values[0]],
            initial_spread: vec![0.0],
            steps: values
                .iter()
                .enumerate()
                .map(|(i, &v)| TraceStep {
                    t: i as u64 + 1,
                    mean: vec![v],
                    spread: vec![0.0],
                })
                .collect(),
        }
    }

    #[test]
    fn rrmse_examples() {
        assert_eq!(rrmse(&s(&[0.3, 0.4]), &s(&[0.3, 0.4])).unwrap(), 0.0);
        assert_eq!(rrmse(&s(&[2.0]), &s(&[1.0])).unwrap(), 1.0);
        let v = rrmse(&s(&[1.1, 0.9]), &s(&[1.0, 1.0])).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        assert!(matches!(rrmse(&s(&[1.0]), &s(&[0.0])), Err(Error::Domain(_))));
        assert!(rrmse(&s(&[1.0]), &s(&[1.0, 2.0])).is_err());
        assert_eq!(leading_zero_steps(&s(&[0.0, 0.0, 0.1, 0.0])), 2);
    }

    #[test]
    fn rae_examples() {
        let h = HyperParams::scalar("h", 0.0015);
        assert_eq!(rae(&h, &h).unwrap(), 0.0);
        assert!((rae(&h.map_values(|v| 2.0 * v), &h).unwrap() - 1.0).abs() < 1e-12);
        assert!((rae(&h.map_values(|v| 0.5 * v), &h).unwrap() - 0.5).abs() < 1e-12);
        let zero = HyperParams::scalar("h", 0.0);
        assert!(rae(&h, &zero).is_err());
        let v = HyperParams::new([("a", 1.1), ("b", 3.0)]).unwrap();
        let t = HyperParams::new([("a", 1.0), ("b", 2.0)]).unwrap();
        assert!((rae(&v, &t).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn final_rae_examples() {
        let h = HyperParams::scalar("h", 2.0);
        assert_eq!(final_rae(&trace(&[2.0; 150]), 100, &h).unwrap(), 0.0);
        let mut vals = vec![5.0; 50];
        vals.extend(std::iter::repeat(2.2).take(100));
        assert!((final_rae(&trace(&vals), 100, &h).unwrap() - 0.1).abs() < 1e-12);
        let vals = [1.0, 3.0, 2.6];
        let global: f64 = (1.0 + 3.0 + 2.6) / 3.0;
        assert!((final_rae(&trace(&vals), 3, &h).unwrap() - (global - 2.0).abs() / 2.0).abs() < 1e-12);
        assert!(matches!(final_rae(&trace(&vals), 4, &h), Err(Error::Bounds(_))));
    }

    #[test]
    fn loglog_examples() {
        let f = loglog_slope(&[1.0, 10.0], &[1.0, 0.1]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let xs = [1e2, 1e3, 1e4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap().slope + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&xs, &[2.0; 3]).unwrap().slope, 0.0);
        assert!(matches!(loglog_slope(&[1.0, -1.0], &[1.0, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&xs, &[5.0; 4]).unwrap(), 0.0);
        let r = spearman(&xs, &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    proptest! {
        #[test]
        fn rrmse_scale_invariant(
            ys in proptest::collection::vec(0.1f64..10.0, 1..20),
            noise in proptest::collection::vec(-1.0f64..1.0, 20),
            c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        ) {
            let y_star = s(&ys);
            let y: Vec<f64> = ys.iter().zip(&noise).map(|(a, e)| a + e).collect();
            let base = rrmse(&s(&y), &y_star).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert_eq!(rrmse(&y_star, &y_star).unwrap(), 0.0);
            let scaled_y: Vec<f64> = y.iter().map(|v| c * v).collect();
            let scaled_star: Vec<f64> = ys.iter().map(|v| c * v).collect();
            let scaled = rrmse(&s(&scaled_y), &s(&scaled_star)).unwrap();
            prop_assert!((scaled - base).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn rae_scale_invariant(est in 0.01f64..10.0, truth in 0.01f64..10.0, c in 0.01f64..100.0) {
            let a = rae(&HyperParams::scalar("h", est), &HyperParams::scalar("h", truth)).unwrap();
            let b = rae(&HyperParams::scalar("h", c * est), &HyperParams::scalar("h", c * truth)).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            prop_assert_eq!(rae(&HyperParams::scalar("h", truth), &HyperParams::scalar("h", truth)).unwrap(), 0.0);
        }

        #[test]
        fn loglog_recovers_power_laws(k in -3.0f64..3.0, c in 0.01f64..100.0) {
            let xs = [1.0, 3.0, 10.0, 30.0, 100.0];
            let ys: Vec<f64> = xs.iter().map(|x: &f64| c * x.powf(k)).collect();
            let f = loglog_slope(&xs, &ys).unwrap();
            prop_assert!((f.slope - k).abs() < 1e-12);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-10);
        }
    }
}
