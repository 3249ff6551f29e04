//! Dual variable perturbation.
//!
//! Each round a node draws `ε` with density `∝ exp(−ζ‖ε‖)`, hides it in a
//! perturbed dual `μ = λ + (C^R/2B_p)·ε`, and minimizes
//!
//! ```text
//! L_dual(f) = Z_p(f) + 2μ·f + (Φ/2)‖f‖² + η Σ_{i∈N_p} ‖f − ½(f_p(t) + f_i(t))‖²
//! ```
//!
//! The minimizer is broadcast as is; the dual update is the non-private one.
//! Because the stationarity condition is affine in `ε`, the noise can be
//! recovered exactly from the minimizer ([`kkt_recover_noise`]), which is what
//! makes the output density a change of variables of the noise density.

use std::path::Path;
use std::str::FromStr;

use crate::admm::{consensus_problem, dual_update, initial_states, AdmmConfig, Network, NodeState};
use crate::data::{NodeDataset, PartitionedDataset};
use crate::error::{check_dim, require_positive, Error, Result};
use crate::model::{empirical_gradient, Loss, Regularizer};
use crate::network::NetworkGraph;
use crate::noise::{sample_noise, NoiseSpec, StreamKey, StreamPurpose};
use crate::trace::{Mechanism, NodeRecord, RunTrace};
use crate::Vector;

/// How `ζ` follows from `α̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaRule {
    /// `ζ = α̂/2`: the value the privacy argument needs.
    #[default]
    ProofHalf,
    /// `ζ = α̂`: the value listed in the algorithm box.
    AlgorithmFull,
}

impl FromStr for ZetaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proof_half" => Ok(ZetaRule::ProofHalf),
            "algorithm_full" => Ok(ZetaRule::AlgorithmFull),
            other => Err(Error::InvalidArgument(format!("unknown zeta rule '{other}'"))),
        }
    }
}

/// Calibrated scalars of one node-round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DvpParams {
    pub alpha: f64,
    pub alpha_hat: f64,
    pub phi: f64,
    pub zeta: f64,
    pub zeta_rule: ZetaRule,
}

/// `2·ln(1 + c1 / ((B_p/C^R)(ρ + Φ + 2ηN_p)))`, the log-Jacobian allowance.
pub fn jacobian_ratio_bound(c1: f64, b_p: f64, c_r: f64, rho: f64, phi: f64, eta: f64, n_p: usize) -> f64 {
    2.0 * (c1 / ((b_p / c_r) * (rho + phi + 2.0 * eta * n_p as f64))).ln_1p()
}

/// Chooses `α̂`, `Φ` and `ζ` for privacy level `alpha`.
///
/// First try `Φ = 0`, leaving `α̂ = α − ᾱ(Φ = 0)`. When that is not positive,
/// pick `Φ` so that `ᾱ = α/2` and set `α̂ = α/2`. A negative `Φ` from that
/// formula is clamped to zero.
#[allow(clippy::too_many_arguments)]
pub fn dvp_calibrate(alpha: f64, c1: f64, b_p: f64, c_r: f64, rho: f64, eta: f64, n_p: usize, zeta_rule: ZetaRule) -> Result<DvpParams> {
    require_positive("alpha", alpha)?;
    require_positive("b_p", b_p)?;
    require_positive("c_r", c_r)?;
    require_positive("rho", rho)?;
    require_positive("eta", eta)?;
    if !(c1 >= 0.0 && c1.is_finite()) {
        return Err(Error::InvalidArgument(format!("c1 must be nonnegative, got {c1}")));
    }
    if alpha > 1.0 {
        log::warn!("alpha = {alpha} exceeds 1; the calibration argument assumes alpha <= 1");
    }
    let mut alpha_hat = alpha - jacobian_ratio_bound(c1, b_p, c_r, rho, 0.0, eta, n_p);
    let mut phi = 0.0;
    if alpha_hat <= 0.0 {
        phi = c1 / ((b_p / c_r) * (alpha / 4.0).exp_m1()) - rho - 2.0 * eta * n_p as f64;
        if phi < 0.0 {
            log::warn!("penalty Phi = {phi} is negative; clamped to 0");
            phi = 0.0;
        }
        alpha_hat = alpha / 2.0;
    }
    let zeta = match zeta_rule {
        ZetaRule::ProofHalf => alpha_hat / 2.0,
        ZetaRule::AlgorithmFull => alpha_hat,
    };
    Ok(DvpParams { alpha, alpha_hat, phi, zeta, zeta_rule })
}

/// `μ = λ + (C^R/(2B_p))·ε`.
pub fn perturb_dual(lambda: &Vector, noise: &Vector, c_r: f64, b_p: f64) -> Result<Vector> {
    check_dim(lambda.len(), noise.len())?;
    Ok(lambda + noise * (c_r / (2.0 * b_p)))
}

/// Minimizer of `L_dual` for the given perturbed dual `mu`, warm-started at `f_p(t)`.
#[allow(clippy::too_many_arguments)]
pub fn primal_update_dvp(
    state: &NodeState,
    neighbor_f: &[&Vector],
    dataset: &NodeDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
    params: &DvpParams,
    mu: &Vector,
) -> Result<Vector> {
    let prob = consensus_problem(dataset, loss, reg, config, &state.f, neighbor_f, mu, params.phi)?;
    Ok(prob.solve(state.f.clone(), &config.solver_options())?.x)
}

/// The unique noise vector for which `f_opt` minimizes `L_dual`:
///
/// ```text
/// ε = −Σ y L'(y f·x) x − (B/C^R)ρ∇R(f) − (2B/C^R)λ − (B/C^R)(Φ + 2ηN_p) f
///     + (Bη/C^R) Σ_{i∈N_p} (f_p(t) + f_i(t))
/// ```
#[allow(clippy::too_many_arguments)]
pub fn kkt_recover_noise(
    f_opt: &Vector,
    state: &NodeState,
    neighbor_f: &[&Vector],
    dataset: &NodeDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
    params: &DvpParams,
) -> Result<Vector> {
    let d = dataset.dim();
    check_dim(d, f_opt.len())?;
    check_dim(d, state.f.len())?;
    check_dim(d, state.lambda.len())?;
    let b = dataset.len() as f64;
    let c_r = config.erm.c_r;
    require_positive("c_r", c_r)?;
    let s = b / c_r;
    let n_p = neighbor_f.len() as f64;
    // Σ y L' x without the C^R/B weight
    let mut eps = -empirical_gradient(f_opt, dataset, loss, b)?;
    eps -= reg.gradient(f_opt) * (s * config.erm.rho);
    eps -= &state.lambda * (2.0 * s);
    eps -= f_opt * (s * (params.phi + 2.0 * config.eta * n_p));
    for g in neighbor_f {
        check_dim(d, g.len())?;
        eps += (&state.f + *g) * (s * config.eta);
    }
    Ok(eps)
}

/// Privacy level `α_p(t)` per node and round.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum AlphaSchedule {
    Constant(f64),
    /// Value for round `t` (0-based); the last entry repeats.
    PerIteration(Vec<f64>),
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            AlphaSchedule::Constant(a) => require_positive("alpha", *a),
            AlphaSchedule::PerIteration(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidArgument("empty alpha schedule".into()));
                }
                v.iter().try_for_each(|a| require_positive("alpha", *a))
            }
        }
    }

    /// `α_p(t)` for round `t` (0-based). Every node shares the schedule.
    pub fn alpha(&self, _node: usize, t: usize) -> f64 {
        match self {
            AlphaSchedule::Constant(a) => *a,
            AlphaSchedule::PerIteration(v) => v[t.min(v.len() - 1)],
        }
    }

    /// Smallest value the schedule can produce.
    pub fn min_alpha(&self) -> f64 {
        match self {
            AlphaSchedule::Constant(a) => *a,
            AlphaSchedule::PerIteration(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// One α per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let a: f64 = line.parse().map_err(|_| Error::Parse { line: i + 1, message: format!("bad alpha '{line}'") })?;
            v.push(a);
        }
        let s = AlphaSchedule::PerIteration(v);
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text)
    }
}

/// Outcome of one node's perturbed primal step.
pub(crate) struct DvpStep {
    pub f: Vector,
    pub noise: Vector,
    pub mu: Vector,
    pub params: DvpParams,
}

/// Calibrate, draw, perturb, minimize for node `p` in round `round` (1-based).
#[allow(clippy::too_many_arguments)]
pub(crate) fn dvp_node_step(
    net: &Network<'_>,
    p: usize,
    round: usize,
    state: &NodeState,
    neighbor_payloads: &[&Vector],
    alpha: f64,
    zeta_rule: ZetaRule,
    seed: u64,
) -> Result<DvpStep> {
    let ds = &net.data.per_node[p];
    let cfg = net.config;
    let b = ds.len() as f64;
    let params = dvp_calibrate(alpha, net.loss.c1(), b, cfg.erm.c_r, cfg.erm.rho, cfg.eta, neighbor_payloads.len(), zeta_rule)?;
    let spec =
        NoiseSpec { dim: net.dim(), zeta: params.zeta, stream: StreamKey::new(seed, StreamPurpose::Mechanism, p as u64, round as u64) };
    let noise = sample_noise(&spec)?;
    let mu = perturb_dual(&state.lambda, &noise, cfg.erm.c_r, b)?;
    let f = primal_update_dvp(state, neighbor_payloads, ds, net.loss, net.reg, cfg, &params, &mu)?;
    Ok(DvpStep { f, noise, mu, params })
}

/// Dual-perturbed distributed ERM for `config.max_iters` rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_dvp(
    partitioned: &PartitionedDataset,
    graph: &NetworkGraph,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
    schedule: &AlphaSchedule,
    zeta_rule: ZetaRule,
    seed: u64,
) -> Result<RunTrace> {
    schedule.validate()?;
    let net = Network::new(partitioned, graph, loss, reg, config)?;
    let mut states = initial_states(net.node_count(), net.dim(), seed, config.init_scale)?;
    let mut trace = RunTrace::new(Mechanism::Dvp, net.initial_record(&states)?);
    for t in 0..config.max_iters {
        let round = t + 1;
        let broadcast: Vec<Vector> = states.iter().map(|s| s.f.clone()).collect();
        let steps = net.per_node(round, |p| {
            dvp_node_step(&net, p, round, &states[p], &net.gather(p, &broadcast), schedule.alpha(p, t), zeta_rule, seed)
        })?;
        let new_f: Vec<Vector> = steps.iter().map(|s| s.f.clone()).collect();
        let new_lambda = net.per_node(round, |p| dual_update(&states[p].lambda, &new_f[p], &net.gather(p, &new_f), config.eta))?;
        let mut nodes = Vec::with_capacity(states.len());
        for (p, ((state, step), lambda)) in states.iter_mut().zip(steps).zip(new_lambda).enumerate() {
            state.f = step.f;
            state.v = state.f.clone();
            state.mu = step.mu;
            state.lambda = lambda;
            nodes.push(NodeRecord {
                f: state.f.clone(),
                lambda: state.lambda.clone(),
                broadcast: state.f.clone(),
                empirical_loss: net.empirical_loss(p, &state.f)?,
                noise_norm: Some(step.noise.norm()),
                alpha: Some(step.params.alpha),
                alpha_hat: Some(step.params.alpha_hat),
                phi: Some(step.params.phi),
                zeta: Some(step.params.zeta),
            });
            state.last_noise = step.noise;
        }
        trace.push(net.record(round, t + 1 == config.max_iters, nodes)?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::primal_update_nonprivate;
    use crate::data::DataPoint;
    use crate::model::{ErmParams, Logistic, L2};
    use crate::solver::Objective;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn calibrate_phi_zero_branch() {
        let p = dvp_calibrate(0.2, 0.25, 2.0, 1.0, 0.1, 1.0, 2, ZetaRule::ProofHalf).unwrap();
        let ln_term = 2.0 * (1.0f64 + 0.25 / 8.2).ln();
        assert_relative_eq!(ln_term, 0.06006, epsilon = 1e-5);
        assert_relative_eq!(p.alpha_hat, 0.2 - ln_term, epsilon = 1e-15);
        assert_relative_eq!(p.alpha_hat, 0.13994, epsilon = 1e-5);
        assert_eq!(p.phi, 0.0);
        assert_relative_eq!(p.zeta, p.alpha_hat / 2.0);
        let full = dvp_calibrate(0.2, 0.25, 2.0, 1.0, 0.1, 1.0, 2, ZetaRule::AlgorithmFull).unwrap();
        assert_eq!(full.zeta, full.alpha_hat);
    }

    #[test]
    fn calibrate_penalty_branch() {
        let p = dvp_calibrate(0.01, 0.25, 2.0, 1.0, 0.1, 1.0, 2, ZetaRule::ProofHalf).unwrap();
        let phi = 0.25 / (2.0 * ((0.0025f64).exp() - 1.0)) - 4.1;
        assert_relative_eq!(p.phi, phi, epsilon = 1e-9);
        assert!((p.phi - 45.84).abs() < 0.01);
        assert_eq!(p.alpha_hat, 0.005);
    }

    #[test]
    fn linear_loss_limit() {
        for a in [1e-4, 0.3, 5.0] {
            let p = dvp_calibrate(a, 0.0, 3.0, 1.0, 0.2, 1.0, 1, ZetaRule::ProofHalf).unwrap();
            assert_eq!((p.alpha_hat, p.phi), (a, 0.0));
        }
    }

    #[test]
    fn boundary_takes_penalty_branch() {
        // alpha exactly equal to the Phi = 0 allowance
        let alpha = 2.0 * 1.25f64.ln();
        let p = dvp_calibrate(alpha, 0.25, 1.0, 1.0, 1.0, 1.0, 0, ZetaRule::ProofHalf).unwrap();
        if p.phi == 0.0 {
            assert!(p.alpha_hat > 0.0 && p.alpha_hat < 1e-15);
        } else {
            assert_eq!(p.alpha_hat, alpha / 2.0);
        }
        let q = dvp_calibrate(1e-6, 0.25, 1.0, 1.0, 1.0, 1.0, 0, ZetaRule::ProofHalf).unwrap();
        assert!(q.phi > 0.0);
    }

    #[test]
    fn calibrate_rejects_bad_inputs() {
        assert!(dvp_calibrate(0.0, 0.25, 1.0, 1.0, 1.0, 1.0, 1, ZetaRule::ProofHalf).is_err());
        assert!(dvp_calibrate(0.1, -0.25, 1.0, 1.0, 1.0, 1.0, 1, ZetaRule::ProofHalf).is_err());
        assert!(dvp_calibrate(0.1, 0.25, 1.0, 1.0, 0.0, 1.0, 1, ZetaRule::ProofHalf).is_err());
    }

    proptest! {
        #[test]
        fn budget_split_holds(
            alpha in 1e-4f64..1.0,
            c1 in 0.0f64..1.0,
            s in 0.1f64..100.0,
            rho in 1e-4f64..10.0,
            eta in 0.1f64..5.0,
            n_p in 0usize..8,
        ) {
            let p = dvp_calibrate(alpha, c1, s, 1.0, rho, eta, n_p, ZetaRule::ProofHalf).unwrap();
            let bar = jacobian_ratio_bound(c1, s, 1.0, rho, p.phi, eta, n_p);
            prop_assert!(p.alpha_hat > 0.0 && p.phi >= 0.0 && p.zeta > 0.0);
            prop_assert!(p.alpha_hat + bar <= alpha + 1e-12);
        }
    }

    #[test]
    fn perturb_dual_examples() {
        let lam = Vector::from_vec(vec![0.5, -1.0]);
        assert_eq!(perturb_dual(&lam, &Vector::zeros(2), 1.0, 2.0).unwrap(), lam);
        let mu = perturb_dual(&Vector::zeros(2), &Vector::from_vec(vec![4.0, 0.0]), 1.0, 2.0).unwrap();
        assert_eq!(mu, Vector::from_vec(vec![1.0, 0.0]));
        assert!(perturb_dual(&lam, &Vector::zeros(3), 1.0, 2.0).is_err());
    }

    fn dataset(n: usize, d: usize) -> NodeDataset {
        let pts = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..d).map(|k| (((i * 7 + k * 3) % 11) as f64 / 11.0 - 0.5) * 0.9).collect();
                let v = Vector::from_vec(x);
                let v = &v / v.norm().max(1.0);
                let y = if v.sum() >= 0.0 { 1.0 } else { -1.0 };
                DataPoint::new(v, y).unwrap()
            })
            .collect();
        NodeDataset::new(0, pts).unwrap()
    }

    fn config(c_r: f64) -> AdmmConfig {
        let mut c = AdmmConfig::new(ErmParams::new(c_r, 0.1).unwrap());
        c.inner_tol = 1e-10;
        c
    }

    #[test]
    fn mechanism_off_equals_nonprivate() {
        let ds = dataset(15, 3);
        let c = config(10.0);
        let mut st = NodeState::new(Vector::from_vec(vec![0.1, -0.2, 0.3]));
        st.lambda = Vector::from_vec(vec![0.05, 0.0, -0.1]);
        let nb = Vector::from_vec(vec![0.4, 0.1, 0.0]);
        let params = DvpParams { alpha: 1.0, alpha_hat: 1.0, phi: 0.0, zeta: 0.5, zeta_rule: ZetaRule::ProofHalf };
        let mu = perturb_dual(&st.lambda, &Vector::zeros(3), 10.0, 15.0).unwrap();
        let a = primal_update_dvp(&st, &[&nb], &ds, &Logistic, &L2, &c, &params, &mu).unwrap();
        let b = primal_update_nonprivate(&st, &[&nb], &ds, &Logistic, &L2, &c).unwrap();
        assert!((a - b).norm() <= 1e-10);
    }

    #[test]
    fn large_penalty_shrinks_classifier() {
        let ds = dataset(10, 2);
        let c = config(1.0);
        let st = NodeState::new(Vector::zeros(2));
        let params = DvpParams { alpha: 0.01, alpha_hat: 0.005, phi: 1e6, zeta: 0.0025, zeta_rule: ZetaRule::ProofHalf };
        let f = primal_update_dvp(&st, &[], &ds, &Logistic, &L2, &c, &params, &Vector::zeros(2)).unwrap();
        assert!(f.norm() <= 1e-3);
    }

    #[test]
    fn returned_point_is_stationary() {
        let ds = dataset(12, 3);
        let c = config(5.0);
        let st = NodeState::new(Vector::from_vec(vec![0.2, 0.0, -0.1]));
        let nb = [Vector::from_vec(vec![0.0, 0.3, 0.1]), Vector::from_vec(vec![-0.2, 0.0, 0.0])];
        let nbr: Vec<&Vector> = nb.iter().collect();
        let params = DvpParams { alpha: 0.1, alpha_hat: 0.05, phi: 2.0, zeta: 0.025, zeta_rule: ZetaRule::ProofHalf };
        let mu = Vector::from_vec(vec![0.3, -0.4, 0.2]);
        let f = primal_update_dvp(&st, &nbr, &ds, &Logistic, &L2, &c, &params, &mu).unwrap();
        let prob = consensus_problem(&ds, &Logistic, &L2, &c, &st.f, &nbr, &mu, params.phi).unwrap();
        assert!(prob.gradient(&f).norm() <= 1e-10);
    }

    #[test]
    fn kkt_round_trip() {
        let ds = dataset(12, 3);
        let c = config(5.0);
        let mut st = NodeState::new(Vector::from_vec(vec![0.2, 0.0, -0.1]));
        st.lambda = Vector::from_vec(vec![0.1, 0.2, -0.3]);
        let nb = [Vector::from_vec(vec![0.0, 0.3, 0.1])];
        let nbr: Vec<&Vector> = nb.iter().collect();
        let params = dvp_calibrate(0.3, 0.25, 12.0, 5.0, 0.1, 1.0, 1, ZetaRule::ProofHalf).unwrap();
        for eps in [Vector::zeros(3), Vector::from_vec(vec![3.0, -7.0, 1.5])] {
            let mu = perturb_dual(&st.lambda, &eps, 5.0, 12.0).unwrap();
            let f = primal_update_dvp(&st, &nbr, &ds, &Logistic, &L2, &c, &params, &mu).unwrap();
            let back = kkt_recover_noise(&f, &st, &nbr, &ds, &Logistic, &L2, &c, &params).unwrap();
            assert!((back - &eps).amax() <= 1e-6);
        }
    }

    #[test]
    fn schedule_parsing() {
        let s = AlphaSchedule::parse("0.1\n# comment\n\n0.2\n0.3 # trailing\n").unwrap();
        assert_eq!(s, AlphaSchedule::PerIteration(vec![0.1, 0.2, 0.3]));
        assert_eq!(s.alpha(0, 10), 0.3);
        assert_eq!(s.min_alpha(), 0.1);
        assert!(AlphaSchedule::parse("0.1\n-1\n").is_err());
        assert!(AlphaSchedule::parse("").is_err());
        assert!(matches!(AlphaSchedule::parse("x"), Err(Error::Parse { line: 1, .. })));
    }
}
