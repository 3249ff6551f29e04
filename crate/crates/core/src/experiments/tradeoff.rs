//! Accuracy-loss curve `L_acc(α) = c4·e^{−c5·α} + c6`, privacy utility
//! `U_priv(α) = ω1·ln(ω2/(ω3·α + ω4·α²))`, curve fitting and the choice of `α`.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// Utility weights used for the tradeoff plots.
pub const DEFAULT_OMEGA: [f64; 4] = [0.02, 6.0, 9.0, 1.0];

const FIT_MAX_ITERS: usize = 500;
const GRID_STEP: f64 = 1e-4;
const GOLDEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TradeoffModel {
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub omega: [f64; 4],
}

impl Default for TradeoffModel {
    fn default() -> Self {
        Self { c4: 0.2, c5: 25.0, c6: 0.0, omega: DEFAULT_OMEGA }
    }
}

impl TradeoffModel {
    pub fn l_acc(&self, alpha: f64) -> f64 {
        self.c4 * (-self.c5 * alpha).exp() + self.c6
    }

    /// Checks the utility's log domain on `[lo, hi]` and that `U_priv` is
    /// nonincreasing there (on a 1000-point grid).
    pub fn validate_on(&self, lo: f64, hi: f64) -> Result<()> {
        check_range(lo, hi)?;
        if !(self.c4 >= 0.0 && self.c5 >= 0.0) {
            return Err(Error::InvalidArgument("c4 and c5 must be nonnegative".into()));
        }
        let grid: Vec<f64> = (0..=1000).map(|i| lo + (hi - lo) * i as f64 / 1000.0).collect();
        let u = grid.iter().map(|&a| utility_privacy(self, a)).collect::<Result<Vec<_>>>()?;
        if u.windows(2).any(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)) {
            return Err(Error::InvalidArgument("U_priv is not decreasing on the range".into()));
        }
        Ok(())
    }
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha range [{lo}, {hi}] is empty or not positive")));
    }
    Ok(())
}

/// `ω1·ln(ω2/(ω3·α + ω4·α²))`.
pub fn utility_privacy(model: &TradeoffModel, alpha: f64) -> Result<f64> {
    let [w1, w2, w3, w4] = model.omega;
    let denom = w3 * alpha + w4 * alpha * alpha;
    if !(denom > 0.0) || !(w2 > 0.0) {
        return Err(Error::InvalidArgument(format!("utility undefined at alpha = {alpha}: log argument not positive")));
    }
    let u = w1 * (w2 / denom).ln();
    if !u.is_finite() {
        return Err(Error::InvalidArgument(format!("utility diverges at alpha = {alpha}")));
    }
    Ok(u)
}

/// Maximizer of `U_priv(α) − L_acc(α)` on `[lo, hi]`; ties go to the smaller `α`.
///
/// Golden-section search when the objective is unimodal on a coarse grid,
/// otherwise a dense grid with spacing `1e−4`.
pub fn choose_alpha(model: &TradeoffModel, lo: f64, hi: f64) -> Result<f64> {
    check_range(lo, hi)?;
    let obj = |a: f64| -> Result<f64> { Ok(utility_privacy(model, a)? - model.l_acc(a)) };
    if hi == lo {
        return Ok(lo);
    }
    let coarse: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let vals = coarse.iter().map(|&a| obj(a)).collect::<Result<Vec<_>>>()?;
    let best = argmax_first(&vals);
    let rises = vals[..=best].windows(2).all(|w| w[1] >= w[0]);
    let falls = vals[best..].windows(2).all(|w| w[1] <= w[0]);
    if rises && falls {
        let a = coarse[best.saturating_sub(1)];
        let b = coarse[(best + 1).min(coarse.len() - 1)];
        let x = golden_max(&obj, a, b)?;
        // endpoints can beat an interior point on a monotone objective
        let mut pick = (x, obj(x)?);
        for e in [lo, hi] {
            let v = obj(e)?;
            if v > pick.1 || (v == pick.1 && e < pick.0) {
                pick = (e, v);
            }
        }
        return Ok(pick.0);
    }
    log::warn!("U_priv − L_acc is not unimodal on [{lo}, {hi}]; using a dense grid");
    let n = ((hi - lo) / GRID_STEP).ceil() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| (lo + i as f64 * GRID_STEP).min(hi)).collect();
    let vals = grid.iter().map(|&a| obj(a)).collect::<Result<Vec<_>>>()?;
    Ok(grid[argmax_first(&vals)])
}

fn argmax_first(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v > vals[best] {
            best = i;
        }
    }
    best
}

fn golden_max(obj: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (obj(c)?, obj(d)?);
    while b - a > GOLDEN_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = obj(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = obj(d)?;
        }
    }
    Ok((a + b) / 2.0)
}

/// How `c6` is fixed before fitting `c4`, `c5`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum C6Rule {
    /// Smallest loss value over all curves and iterations (final-iteration fits).
    #[default]
    MinOverIterations,
    /// Mean loss over iterations `from..=to` (intermediate fits).
    MeanOverWindow { from: usize, to: usize },
}

impl C6Rule {
    /// Applies the rule to loss curves indexed by iteration (index 0 is the start).
    pub fn apply(&self, curves: &[Vec<f64>]) -> Result<f64> {
        match *self {
            C6Rule::MinOverIterations => {
                curves.iter().flatten().copied().reduce(f64::min).ok_or_else(|| Error::Fit("no loss values to take c6 from".into()))
            }
            C6Rule::MeanOverWindow { from, to } => {
                let vals: Vec<f64> =
                    curves.iter().flat_map(|c| c.get(from..=to.min(c.len().saturating_sub(1))).unwrap_or(&[])).copied().collect();
                if vals.is_empty() || from > to {
                    return Err(Error::Fit(format!("window [{from}, {to}] selects no iterations")));
                }
                Ok(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitResult {
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub rmse: f64,
    pub iterations: usize,
    /// `c4` or `c5` collapsed to (nearly) zero: the data show no decay.
    pub degenerate: bool,
}

impl FitResult {
    pub fn model(&self, omega: [f64; 4]) -> TradeoffModel {
        TradeoffModel { c4: self.c4, c5: self.c5, c6: self.c6, omega }
    }
}

/// Levenberg–Marquardt fit of `c4`, `c5` in `y = c4·e^{−c5·α} + c6` with `c6` fixed.
pub fn fit_tradeoff(alphas: &[f64], losses: &[f64], c6: f64) -> Result<FitResult> {
    if alphas.len() != losses.len() || alphas.len() < 2 {
        return Err(Error::Fit("need at least two (alpha, loss) pairs of equal length".into()));
    }
    if alphas.iter().chain(losses).any(|v| !v.is_finite()) || !c6.is_finite() {
        return Err(Error::Fit("non-finite input".into()));
    }
    let rmse_of = |c4: f64, c5: f64| {
        let ss: f64 = alphas.iter().zip(losses).map(|(a, y)| (c4 * (-c5 * a).exp() + c6 - y).powi(2)).sum();
        (ss / alphas.len() as f64).sqrt()
    };
    let Some((mut c4, mut c5)) = log_linear_start(alphas, losses, c6) else {
        log::warn!("no loss exceeds c6; the fit is degenerate");
        return Ok(FitResult { c4: 0.0, c5: 0.0, c6, rmse: rmse_of(0.0, 0.0), iterations: 0, degenerate: true });
    };
    let cost = |c4: f64, c5: f64| rmse_of(c4, c5).powi(2);
    let a_max = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a_min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let span = (a_max - a_min, losses.iter().map(|y| y.abs()).fold(0.0, f64::max));
    let mut lambda = 1e-3;
    let mut current = cost(c4, c5);
    for it in 1..=FIT_MAX_ITERS {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (a, y) in alphas.iter().zip(losses) {
            let e = (-c5 * a).exp();
            let r = c4 * e + c6 - y;
            let j = Vector2::new(e, -c4 * a * e);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if jtr.norm() <= 1e-15 {
            return Ok(finish(c4, c5, c6, rmse_of(c4, c5), it, span));
        }
        let mut improved = false;
        for _ in 0..60 {
            let mut damped = jtj;
            damped[(0, 0)] += lambda * jtj[(0, 0)].max(1e-12);
            damped[(1, 1)] += lambda * jtj[(1, 1)].max(1e-12);
            let Some(step) = damped.cholesky().map(|ch| -ch.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let (n4, n5) = (c4 + step[0], c5 + step[1]);
            let trial = cost(n4, n5);
            if trial.is_finite() && trial <= current {
                let small = step.norm() <= 1e-12 * (c4.abs() + c5.abs() + 1e-12);
                let flat = current - trial <= 1e-15 * current.max(1e-300);
                c4 = n4;
                c5 = n5;
                current = trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small || flat {
                    return Ok(finish(c4, c5, c6, rmse_of(c4, c5), it, span));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at any damping: a minimum to rounding
            return Ok(finish(c4, c5, c6, rmse_of(c4, c5), it, span));
        }
    }
    Err(Error::Fit(format!("no convergence in {FIT_MAX_ITERS} iterations")))
}

/// `span = (α_max − α_min, max |y|)`; degenerate when the fitted curve
/// decays by less than 0.1% of its amplitude over the sampled range, or has
/// no amplitude.
fn finish(c4: f64, c5: f64, c6: f64, rmse: f64, iterations: usize, span: (f64, f64)) -> FitResult {
    let degenerate = !(c4 > 1e-8 * span.1.max(1e-300) && c5 * span.0 > 1e-3);
    if degenerate {
        log::warn!("degenerate tradeoff fit: c4 = {c4}, c5 = {c5}");
    }
    FitResult { c4, c5, c6, rmse, iterations, degenerate }
}

/// Least squares on `ln(y − c6) = ln c4 − c5·α` over points above `c6`.
fn log_linear_start(alphas: &[f64], losses: &[f64], c6: f64) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = alphas.iter().zip(losses).filter(|(_, y)| **y - c6 > 0.0).map(|(a, y)| (*a, (y - c6).ln())).collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let ma = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - ma).powi(2)).sum();
    let slope = if sxx > 0.0 { pts.iter().map(|p| (p.0 - ma) * (p.1 - ml)).sum::<f64>() / sxx } else { 0.0 };
    let c5 = (-slope).max(1e-6);
    Some(((ml + c5 * ma).exp(), c5))
}
