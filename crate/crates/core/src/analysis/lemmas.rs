//! Monte Carlo checks of the high-probability objective-gap bounds behind
//! the sample-complexity results.
//!
//! Each checker draws fresh noise per trial, solves the perturbed node
//! subproblem to `1e−10` and records whether the stated gap held. A check
//! passes when the observed frequency is at least
//! `1 − δ − 2·√(δ(1−δ)/trials)`.

use rayon::prelude::*;

use crate::analysis::stats::coverage_threshold;
use crate::data::{synthetic_points, NodeDataset};
use crate::dvp::{dvp_calibrate, ZetaRule};
use crate::error::{Error, Result};
use crate::model::{local_objective, ErmParams, Loss, Regularizer};
use crate::noise::{gamma_radius, gamma_tail_threshold, sample_noise, NoiseSpec, StreamKey, StreamPurpose};
use crate::pvp::pvp_zeta;
use crate::solver::{LocalProblem, Objective, SolverOptions};
use crate::Vector;

const LEMMA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LemmaReport {
    pub name: String,
    pub bound: f64,
    pub frequency: f64,
    pub threshold: f64,
    pub trials: usize,
    pub delta: f64,
    pub pass: bool,
}

impl LemmaReport {
    fn new(name: &str, bound: f64, hits: usize, trials: usize, delta: f64) -> Self {
        let frequency = hits as f64 / trials as f64;
        let threshold = coverage_threshold(delta, trials);
        Self { name: name.to_string(), bound, frequency, threshold, trials, delta, pass: frequency >= threshold }
    }
}

/// One node's data and the state entering round `t`.
#[derive(Debug, Clone)]
pub struct LemmaInstance {
    pub dataset: NodeDataset,
    pub erm: ErmParams,
    pub eta: f64,
    /// `f_p(t)`.
    pub f_prev: Vector,
    /// `f_i(t)` for each neighbor; its length is `N_p`.
    pub neighbor_prev: Vec<Vector>,
}

impl LemmaInstance {
    /// `d = 3`, `B_p = 50`, `C^R = 1`, `ρ = 0.5`, `η = 1`, two neighbors.
    pub fn default_small(seed: u64) -> Result<Self> {
        let d = 3;
        let dataset = NodeDataset::new(0, synthetic_points(50, d, 0.1, seed)?)?;
        let at = |k: f64| Vector::from_iterator(d, (0..d).map(|i| 0.1 * k * (i as f64 + 1.0)));
        Ok(Self { dataset, erm: ErmParams::new(1.0, 0.5)?, eta: 1.0, f_prev: at(1.0), neighbor_prev: vec![at(-1.0), at(2.0)] })
    }

    fn validate(&self) -> Result<()> {
        let d = self.dataset.dim();
        if d > 5 || self.dataset.len() > 50 {
            log::warn!("lemma instance larger than the intended d ≤ 5, B_p ≤ 50");
        }
        self.erm.check_node_size(self.dataset.len())?;
        crate::error::check_dim(d, self.f_prev.len())?;
        for g in &self.neighbor_prev {
            crate::error::check_dim(d, g.len())?;
        }
        crate::error::require_positive("eta", self.eta)
    }

    fn b(&self) -> f64 {
        self.dataset.len() as f64
    }

    fn n_p(&self) -> usize {
        self.neighbor_prev.len()
    }

    fn erm_problem<'a>(&'a self, loss: &'a dyn Loss, reg: &'a dyn Regularizer) -> LocalProblem<'a> {
        LocalProblem::erm(&self.dataset, loss, reg, self.erm)
    }

    fn z(&self, f: &Vector, loss: &dyn Loss, reg: &dyn Regularizer) -> Result<f64> {
        local_objective(f, &self.dataset, loss, reg, &self.erm)
    }

    /// `Z_p^prim(f)` for the noise differences `ε^{pi} = ε_p − ε_i`.
    fn z_prim(&self, f: &Vector, diffs: &[Vector], loss: &dyn Loss, reg: &dyn Regularizer) -> Result<f64> {
        let mut y = 0.0;
        for (g, e) in self.neighbor_prev.iter().zip(diffs) {
            let mid = (&self.f_prev + g) * 0.5;
            y += (f - mid).dot(e) + 0.25 * e.norm_squared();
        }
        Ok(self.z(f, loss, reg)? - self.eta * y)
    }

    fn noise(&self, seed: u64, who: usize, trial: usize, zeta: f64) -> Result<Vector> {
        sample_noise(&NoiseSpec {
            dim: self.dataset.dim(),
            zeta,
            stream: StreamKey::new(seed, StreamPurpose::Lemma, who as u64, trial as u64),
        })
    }

    /// Minimizer of `Z_p(f) + c·f`.
    fn solve_tilted(&self, loss: &dyn Loss, reg: &dyn Regularizer, linear: Vector, x0: &Vector) -> Result<Vector> {
        let mut prob = self.erm_problem(loss, reg);
        prob.linear = linear;
        Ok(prob.solve(x0.clone(), &SolverOptions::with_tol(LEMMA_TOL))?.x)
    }

    /// Unperturbed minimizer `f*` and `Z_p(f*)`.
    fn reference(&self, loss: &dyn Loss, reg: &dyn Regularizer) -> Result<(Vector, f64)> {
        let prob = self.erm_problem(loss, reg);
        let f = prob.solve(Vector::zeros(self.dataset.dim()), &SolverOptions::with_tol(LEMMA_TOL))?.x;
        let v = prob.value(&f);
        Ok((f, v))
    }

    fn diffs(&self, seed: u64, trial: usize, zeta: f64) -> Result<(Vector, Vec<Vector>)> {
        let own = self.noise(seed, 0, trial, zeta)?;
        let diffs = (1..=self.n_p()).map(|i| Ok(&own - self.noise(seed, i, trial, zeta)?)).collect::<Result<Vec<_>>>()?;
        Ok((own, diffs))
    }
}

fn check_common(delta: f64, trials: usize, alpha: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    crate::error::require_positive("alpha", alpha)
}

fn count(trials: usize, event: impl Fn(usize) -> Result<bool> + Sync) -> Result<usize> {
    (0..trials).into_par_iter().map(|r| event(r).map(usize::from)).try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Tail coverage of `Γ(k, θ)`: frequency of `Z ≤ kθ ln(k/δ)` over `draws`.
pub fn check_lemma7(k: usize, theta: f64, delta: f64, draws: usize, seed: u64) -> Result<LemmaReport> {
    check_common(delta, draws, theta)?;
    let bound = gamma_tail_threshold(k, theta, delta)?;
    let chunk = 4096;
    let chunks = draws.div_ceil(chunk);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = StreamKey::new(seed, StreamPurpose::Lemma, k as u64, c as u64).rng();
            let n = chunk.min(draws - c * chunk);
            (0..n).filter(|_| gamma_radius(&mut rng, k, 1.0 / theta) <= bound).count()
        })
        .sum();
    Ok(LemmaReport::new(&format!("lemma7(k={k},delta={delta})"), bound, hits, draws, delta))
}

/// Dual perturbation with `Φ = 0`: `f̃ = argmin Z_p(f) + (C^R/B_p)ε·f` with
/// `‖ε‖ ~ Γ(d, 2/α̂)`, against `Z_p(f*) + 16d² ln²(d/δ)/(ρB_p²α²)`.
pub fn check_lemma8(
    instance: &LemmaInstance,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    alpha: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    check_common(delta, trials, alpha)?;
    instance.validate()?;
    let erm = instance.erm;
    let b = instance.b();
    let params = dvp_calibrate(alpha, loss.c1(), b, erm.c_r, erm.rho, instance.eta, instance.n_p(), ZetaRule::ProofHalf)?;
    if params.phi > 0.0 {
        return Err(Error::Regime(format!("alpha = {alpha} needs Phi = {} > 0", params.phi)));
    }
    let d = instance.dataset.dim() as f64;
    let ln = (d / delta).ln();
    let bound = 16.0 * d * d * ln * ln / (erm.rho * b * b * alpha * alpha);
    let (f_star, z_star) = instance.reference(loss, reg)?;
    let hits = count(trials, |r| {
        let eps = instance.noise(seed, 0, r, params.zeta)?;
        let f = instance.solve_tilted(loss, reg, eps * (erm.c_r / b), &f_star)?;
        Ok(instance.z(&f, loss, reg)? <= z_star + bound)
    })?;
    Ok(LemmaReport::new("lemma8", bound, hits, trials, delta))
}

/// Primal perturbation: `f̃ = argmin Z_p^prim` for the neighbors' noise
/// differences, against `Z_p(f*) + 16(C^R)²η²N_p²d² ln²(d/δ)/(ρ³B_p²α²)`.
pub fn check_lemma11(
    instance: &LemmaInstance,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    alpha: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    check_common(delta, trials, alpha)?;
    instance.validate()?;
    let erm = instance.erm;
    let b = instance.b();
    let zeta = pvp_zeta(erm.rho, b, alpha, erm.c_r)?;
    let d = instance.dataset.dim() as f64;
    let ln = (d / delta).ln();
    let n = instance.n_p() as f64;
    let bound = 16.0 * erm.c_r.powi(2) * instance.eta.powi(2) * n * n * d * d * ln * ln / (erm.rho.powi(3) * b * b * alpha * alpha);
    let (f_star, z_star) = instance.reference(loss, reg)?;
    let hits = count(trials, |r| {
        let (_, diffs) = instance.diffs(seed, r, zeta)?;
        let tilt = diffs.iter().fold(Vector::zeros(f_star.len()), |acc, e| acc - e * instance.eta);
        let f = instance.solve_tilted(loss, reg, tilt, &f_star)?;
        Ok(instance.z(&f, loss, reg)? <= z_star + bound)
    })?;
    Ok(LemmaReport::new("lemma11", bound, hits, trials, delta))
}

/// Released output `V* = f̃ + ε_p` against the unreleased `f̃` on `Z_p^prim`,
/// with slack `4(C^R)²d²(ρτ + c4·C^R) ln²(d/δ)/(ρ²B_p²α²)` and `τ = 1`.
pub fn check_lemma12(
    instance: &LemmaInstance,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    alpha: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaReport> {
    check_common(delta, trials, alpha)?;
    instance.validate()?;
    let erm = instance.erm;
    let b = instance.b();
    let zeta = pvp_zeta(erm.rho, b, alpha, erm.c_r)?;
    let d = instance.dataset.dim() as f64;
    let ln = (d / delta).ln();
    let tau = 1.0;
    let bound = 4.0 * erm.c_r.powi(2) * d * d * (erm.rho * tau + loss.c4_lipschitz() * erm.c_r) * ln * ln
        / (erm.rho.powi(2) * b * b * alpha * alpha);
    let (f_star, _) = instance.reference(loss, reg)?;
    let hits = count(trials, |r| {
        let (own, diffs) = instance.diffs(seed, r, zeta)?;
        let tilt = diffs.iter().fold(Vector::zeros(f_star.len()), |acc, e| acc - e * instance.eta);
        let f = instance.solve_tilted(loss, reg, tilt, &f_star)?;
        let v = &f + &own;
        Ok(instance.z_prim(&v, &diffs, loss, reg)? <= instance.z_prim(&f, &diffs, loss, reg)? + bound)
    })?;
    Ok(LemmaReport::new("lemma12", bound, hits, trials, delta))
}
