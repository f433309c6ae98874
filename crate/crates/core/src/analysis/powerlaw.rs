//! `y = C · x^e` fits by Levenberg–Marquardt on raw residuals.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Below this exponent difference a two-regime fit is reported as no break.
pub const NO_BREAK_DELTA: f64 = 0.02;

const LAMBDA0: f64 = 1e-3;
const MAX_ITER: usize = 500;
const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub c: f64,
    pub e: f64,
    pub r2: f64,
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Sum of squared raw residuals.
    pub sse: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; the fit is then the best seen.
    pub converged: bool,
}

impl PowerFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.c * x.powf(self.e)
    }
}

fn check_points(points: &[(f64, f64)], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(LabError::invalid(format!(
            "need at least {min} points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(LabError::invalid(format!("points must be positive and finite, got {p:?}")));
    }
    Ok(())
}

/// `1 − SS_res / SS_tot` of `y = c · x^e`.
pub fn r_squared(points: &[(f64, f64)], c: f64, e: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(LabError::invalid("r² needs at least 2 points"));
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(LabError::Undefined("r² of constant y".into()));
    }
    let ss_res: f64 = points.iter().map(|&(x, y)| (y - c * x.powf(e)).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn ols_log(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::Undefined("all x values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let e = sxy / sxx;
    Ok(((my - e * mx).exp(), e))
}

fn finish(points: &[(f64, f64)], c: f64, e: f64, sse: f64, iterations: usize, converged: bool) -> PowerFit {
    let r2 = r_squared(points, c, e).unwrap_or(f64::NAN);
    PowerFit {
        c,
        e,
        r2,
        n: points.len(),
        x_min: points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        x_max: points.iter().map(|p| p.0).fold(0.0, f64::max),
        sse,
        iterations,
        converged,
    }
}

/// Ordinary least squares on `(ln x, ln y)`.
pub fn fit_power_law_log(points: &[(f64, f64)]) -> Result<PowerFit> {
    check_points(points, 3)?;
    let (c, e) = ols_log(points)?;
    let sse = points.iter().map(|&(x, y)| (y - c * x.powf(e)).powi(2)).sum();
    Ok(finish(points, c, e, sse, 0, true))
}

/// Minimizes `Σ (y − C·x^e)²` by Levenberg–Marquardt, started from the
/// log-space least-squares solution.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerFit> {
    check_points(points, 3)?;
    // Work with u = x / g (g the geometric mean of x) so the two columns of
    // the Jacobian have comparable scale; C = C' · g^(−e).
    let g = (points.iter().map(|p| p.0.ln()).sum::<f64>() / points.len() as f64).exp();
    let us: Vec<(f64, f64)> = points.iter().map(|&(x, y)| ((x / g).ln(), y)).collect();
    let sse_of = |cp: f64, e: f64| -> f64 {
        us.iter().map(|&(lu, y)| (y - cp * (e * lu).exp()).powi(2)).sum()
    };
    let (c0, e0) = ols_log(points)?;
    let mut cp = c0 * g.powf(e0);
    let mut e = e0;
    let mut sse = sse_of(cp, e);
    let mut lambda = LAMBDA0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        // Normal equations for residual r = y − f, Jacobian of f.
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(lu, y) in &us {
            let ue = (e * lu).exp();
            let f = cp * ue;
            let (j1, j2) = (ue, f * lu);
            let r = y - f;
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            b1 += j1 * r;
            b2 += j2 * r;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let m11 = a11 * (1.0 + lambda);
            let m22 = a22 * (1.0 + lambda);
            let det = m11 * m22 - a12 * a12;
            if det != 0.0 && det.is_finite() {
                let d1 = (b1 * m22 - b2 * a12) / det;
                let d2 = (m11 * b2 - a12 * b1) / det;
                let (nc, ne) = (cp + d1, e + d2);
                let nsse = sse_of(nc, ne);
                if nsse.is_finite() && nsse <= sse {
                    let step = (d1 * d1 + d2 * d2).sqrt();
                    let size = (nc * nc + ne * ne).sqrt();
                    cp = nc;
                    e = ne;
                    sse = nsse;
                    lambda /= 10.0;
                    accepted = true;
                    if step <= STEP_TOL * (size + STEP_TOL) {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping level improves the objective: a minimum to
            // working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        debug!("power-law fit hit {MAX_ITER} iterations; returning best so far");
    }
    Ok(finish(points, cp * g.powf(-e), e, sse, iterations, converged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakFit {
    pub threshold: f64,
    /// Fit to points with `x < threshold`.
    pub low: PowerFit,
    /// Fit to points with `x ≥ threshold`.
    pub high: PowerFit,
    /// `1 − (SSE_low + SSE_high) / SS_tot` over all points.
    pub combined_r2: f64,
    pub delta_e: f64,
    /// `|delta_e| ≥ NO_BREAK_DELTA`.
    pub is_break: bool,
}

/// Tries every candidate threshold that leaves at least 3 points on each
/// side and keeps the one with the highest combined r².
pub fn detect_break(points: &[(f64, f64)], candidates: &[f64]) -> Result<BreakFit> {
    check_points(points, 6)?;
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(LabError::Undefined("constant y".into()));
    }
    let fits: Vec<Option<(f64, PowerFit, PowerFit)>> = candidates
        .par_iter()
        .map(|&t| {
            let (low, high): (Vec<(f64, f64)>, Vec<(f64, f64)>) =
                points.iter().partition(|p| p.0 < t);
            if low.len() < 3 || high.len() < 3 {
                return None;
            }
            let fl = fit_power_law(&low).ok()?;
            let fh = fit_power_law(&high).ok()?;
            Some((t, fl, fh))
        })
        .collect();
    let mut best: Option<BreakFit> = None;
    for (t, low, high) in fits.into_iter().flatten() {
        let combined_r2 = 1.0 - (low.sse + high.sse) / ss_tot;
        if best.is_none_or(|b| combined_r2 > b.combined_r2) {
            let delta_e = high.e - low.e;
            best = Some(BreakFit {
                threshold: t,
                low,
                high,
                combined_r2,
                delta_e,
                is_break: delta_e.abs() >= NO_BREAK_DELTA,
            });
        }
    }
    best.ok_or_else(|| LabError::invalid("no candidate leaves 3 points on each side"))
}
