//! Power-law fits of decaying series.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least squares of `ln v` against `ln(1+t)` over `window = (t_lo, t_hi)`.
pub fn fit_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch { expected: times.len(), got: values.len() });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < window.0 || t > window.1 {
            continue;
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::FitDomain(format!("value {v} at t = {t} is not positive")));
        }
        xs.push((1.0 + t).ln());
        ys.push(v.ln());
    }
    least_squares(&xs, &ys)
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    let n = xs.len();
    if n < 10 {
        return Err(Error::FitDomain(format!("{n} points in the window, need at least 10")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitDomain("all window points share one time".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit { slope, intercept, r_squared, points: n })
}

/// Local log-log slope over a sliding window of `width` points, centred.
pub fn local_slopes(times: &[f64], values: &[f64], width: usize) -> Vec<Option<f64>> {
    let n = times.len();
    let mut out = vec![None; n];
    if width < 2 || n < width {
        return out;
    }
    for start in 0..=n - width {
        let xs: Vec<f64> = times[start..start + width].iter().map(|t| (1.0 + t).ln()).collect();
        if values[start..start + width].iter().any(|&v| !(v > 0.0)) {
            continue;
        }
        let ys: Vec<f64> = values[start..start + width].iter().map(|v| v.ln()).collect();
        let nf = width as f64;
        let mx = xs.iter().sum::<f64>() / nf;
        let my = ys.iter().sum::<f64>() / nf;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx > 0.0 {
            out[start + width / 2] = Some(sxy / sxx);
        }
    }
    out
}

/// Onset of the terminal steep regime: the first time of the last run of
/// local slopes steeper than `-factor * target`.
///
/// Windows touching values at or below `floor` are ignored, so a trajectory
/// that has decayed into rounding does not end the run. A transient that
/// steepens and then relaxes back into a power law is not reported.
pub fn crossover_time(times: &[f64], values: &[f64], target: f64, factor: f64, width: usize, floor: f64) -> Option<f64> {
    let clipped: Vec<f64> = values.iter().map(|&v| if v > floor { v } else { 0.0 }).collect();
    let slopes = local_slopes(times, &clipped, width);
    let mut onset = None;
    for (s, &t) in slopes.iter().zip(times) {
        match s {
            Some(s) if *s < -factor * target => {
                onset.get_or_insert(t);
            }
            Some(_) => onset = None,
            None => {}
        }
    }
    onset
}

/// `n` points from `t_min` to `t_max` evenly spaced in `ln(1+t)`, with `0` prepended.
pub fn log_grid(t_max: f64, n: usize) -> Vec<f64> {
    let top = (1.0 + t_max).ln();
    let mut out: Vec<f64> = (0..=n).map(|k| (top * k as f64 / n as f64).exp() - 1.0).collect();
    out[0] = 0.0;
    out[n] = t_max;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| (1.0 + t).powi(-2)).collect();
        let f = fit_rate(&t, &v, (0.0, 100.0)).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-10);
        assert!(f.intercept.abs() < 1e-10);
        let v3: Vec<f64> = v.iter().map(|x| 3.0 * x).collect();
        let f3 = fit_rate(&t, &v3, (0.0, 100.0)).unwrap();
        assert!((f3.slope + 2.0).abs() < 1e-10);
        assert!((f3.intercept - 3.0f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn exponential_masquerades_as_steep_power() {
        let t: Vec<f64> = (10..=100).map(|k| k as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        let f = fit_rate(&t, &v, (10.0, 100.0)).unwrap();
        assert!(f.slope < -5.0);
        assert!(crossover_time(&t, &v, 2.0, 2.0, 10, 0.0).is_some());
    }

    #[test]
    fn crossover_skips_transients_and_rounding_floor() {
        let t = log_grid(1000.0, 200);
        // Power law (1+t)^-1, cut off exponentially after t = 100, then a constant floor.
        let v: Vec<f64> = t
            .iter()
            .map(|&t| {
                let base = (1.0 + t).powi(-1) * if t > 100.0 { (-(t - 100.0) / 10.0).exp() } else { 1.0 };
                base.max(1e-30) + if t < 3.0 { 5.0 * (-4.0 * t).exp() } else { 0.0 }
            })
            .collect();
        let c = crossover_time(&t, &v, 1.0, 2.0, 10, 1e-25).unwrap();
        assert!(c > 60.0 && c < 130.0, "{c}");
        let power: Vec<f64> = t.iter().map(|t| (1.0 + t).powi(-1)).collect();
        assert_eq!(crossover_time(&t, &power, 1.0, 2.0, 10, 0.0), None);
    }

    #[test]
    fn rejects_short_or_nonpositive_windows() {
        let t = [0.0, 1.0, 2.0];
        assert!(matches!(fit_rate(&t, &[1.0, 0.5, 0.2], (0.0, 3.0)), Err(Error::FitDomain(_))));
        let t: Vec<f64> = (0..12).map(|k| k as f64).collect();
        let mut v = vec![1.0; 12];
        v[4] = 0.0;
        assert!(matches!(fit_rate(&t, &v, (0.0, 20.0)), Err(Error::FitDomain(_))));
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(100.0, 40);
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[40], 100.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
