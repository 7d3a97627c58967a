//! Exponential decay-rate fitting.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Floor applied to nonpositive values before the log transform; clipped
/// points are counted in the report.
const VALUE_FLOOR: f64 = 1e-300;
const MIN_WINDOW_NODES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    /// A e^{-rate t}
    Forward,
    /// A e^{-rate (T - t)}
    Backward,
    /// A (e^{-rate t} + e^{-rate (T - t)})
    TwoSided,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayReport {
    pub shape: DecayShape,
    /// Fitted exponential rate, per unit time.
    pub rate: f64,
    pub amplitude: f64,
    pub window: (f64, f64),
    /// Theoretical rate bound the fit is compared against.
    pub bound: f64,
    pub slack_frac: f64,
    /// fitted rate >= bound (1 - slack).
    pub pass: bool,
    /// RMS residual of the log-space fit.
    pub residual: f64,
    pub clipped: usize,
    /// Seed rates from the two window halves (two-sided fits only).
    pub rate_pair: Option<(f64, f64)>,
}

/// Plain least squares of y on x. Returns (slope, intercept).
pub fn log_linear_rate(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (0.0, sy / n);
    }
    let slope = (n * sxy - sx * sy) / denom;
    (slope, (sy - slope * sx) / n)
}

/// Log-linear least squares of a positive decay series on a window, with
/// the two-sided shape refined by Gauss-Newton from half-window seeds.
pub fn fit_decay(
    times: &[f64],
    values: &[f64],
    window: (f64, f64),
    shape: DecayShape,
    bound: f64,
    slack_frac: f64,
) -> Result<DecayReport> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::ConfigInvalid(
            "decay series needs aligned times and values".into(),
        ));
    }
    let t_end = *times.last().expect("nonempty");
    let t_begin = times[0];
    if window.0 <= t_begin + 1e-12 || window.1 >= t_end - 1e-12 || window.0 >= window.1 {
        return Err(Error::ConfigInvalid(format!(
            "fit window ({}, {}) must lie strictly inside ({t_begin}, {t_end})",
            window.0, window.1
        )));
    }
    let horizon = t_end;
    let mut ts = Vec::new();
    let mut lv = Vec::new();
    let mut clipped = 0usize;
    for (t, v) in times.iter().zip(values) {
        if *t < window.0 || *t > window.1 {
            continue;
        }
        let vv = if *v <= VALUE_FLOOR {
            clipped += 1;
            VALUE_FLOOR
        } else {
            *v
        };
        ts.push(*t);
        lv.push(vv.ln());
    }
    if ts.len() < MIN_WINDOW_NODES {
        return Err(Error::WindowTooShort(ts.len()));
    }

    let (rate, amplitude, residual, rate_pair) = match shape {
        DecayShape::Forward => {
            let (slope, icpt) = log_linear_rate(&ts, &lv);
            let res = rms(&ts, &lv, |t| icpt + slope * t);
            (-slope, icpt.exp(), res, None)
        }
        DecayShape::Backward => {
            let back: Vec<f64> = ts.iter().map(|t| horizon - t).collect();
            let (slope, icpt) = log_linear_rate(&back, &lv);
            let res = rms(&back, &lv, |bt| icpt + slope * bt);
            (-slope, icpt.exp(), res, None)
        }
        DecayShape::TwoSided => {
            let mid = ts.len() / 2;
            let (sf, _) = log_linear_rate(&ts[..mid], &lv[..mid]);
            let back: Vec<f64> = ts[mid..].iter().map(|t| horizon - t).collect();
            let (sb, _) = log_linear_rate(&back, &lv[mid..]);
            let seed = 0.5 * (-sf - sb);
            let (lam, ln_a, res) = refine_two_sided(&ts, &lv, horizon, seed.max(1e-6));
            (lam, ln_a.exp(), res, Some((-sf, -sb)))
        }
    };

    Ok(DecayReport {
        shape,
        rate,
        amplitude,
        window,
        bound,
        slack_frac,
        pass: rate >= bound * (1.0 - slack_frac),
        residual,
        clipped,
        rate_pair,
    })
}

fn rms(x: &[f64], y: &[f64], model: impl Fn(f64) -> f64) -> f64 {
    let s: f64 = x
        .iter()
        .zip(y)
        .map(|(t, v)| {
            let e = v - model(*t);
            e * e
        })
        .sum();
    (s / x.len() as f64).sqrt()
}

/// Gauss-Newton on (ln A, lambda) for ln(A (e^{-lam t} + e^{-lam (T-t)})).
fn refine_two_sided(ts: &[f64], lv: &[f64], horizon: f64, seed: f64) -> (f64, f64, f64) {
    let model_ln = |lam: f64, ln_a: f64, t: f64| -> f64 {
        ln_a + ((-lam * t).exp() + (-lam * (horizon - t)).exp()).ln()
    };
    let mut lam = seed;
    // Initialize ln A from the residual mean at the seed rate.
    let mut ln_a = ts
        .iter()
        .zip(lv)
        .map(|(t, v)| v - model_ln(lam, 0.0, *t))
        .sum::<f64>()
        / ts.len() as f64;
    let mut best = (lam, ln_a, rms(ts, lv, |t| model_ln(lam, ln_a, t)));
    for _ in 0..60 {
        // Jacobian columns: d/d ln_a = 1; d/d lam.
        let mut jtj = [0.0f64; 4];
        let mut jtr = [0.0f64; 2];
        for (t, v) in ts.iter().zip(lv) {
            let ef = (-lam * t).exp();
            let eb = (-lam * (horizon - t)).exp();
            let dlam = (-t * ef - (horizon - t) * eb) / (ef + eb);
            let r = v - model_ln(lam, ln_a, *t);
            jtj[0] += 1.0;
            jtj[1] += dlam;
            jtj[2] += dlam;
            jtj[3] += dlam * dlam;
            jtr[0] += r;
            jtr[1] += dlam * r;
        }
        let det = jtj[0] * jtj[3] - jtj[1] * jtj[2];
        if det.abs() < 1e-300 {
            break;
        }
        let da = (jtr[0] * jtj[3] - jtj[1] * jtr[1]) / det;
        let dl = (jtj[0] * jtr[1] - jtj[2] * jtr[0]) / det;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let cand_lam = lam + step * dl;
            let cand_ln_a = ln_a + step * da;
            if cand_lam > 0.0 {
                let r = rms(ts, lv, |t| model_ln(cand_lam, cand_ln_a, t));
                if r < best.2 {
                    lam = cand_lam;
                    ln_a = cand_ln_a;
                    best = (lam, ln_a, r);
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    best
}
