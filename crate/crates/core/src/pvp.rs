//! Primal variable perturbation.
//!
//! Nodes never send their classifier during the main phase. Each round a node
//! minimizes
//!
//! ```text
//! L_prim(f) = Z_p(f) + 2λ_p·f + η Σ_{i∈N_p} ‖f − ½(f_p(t) + V_i(t) − ε_p(t))‖²
//! ```
//!
//! and broadcasts `V_p = f + ε` with fresh noise. The dual update runs on the
//! `V`s. After `t_stop` such rounds one dual-perturbed round produces the
//! released classifiers.

use crate::admm::{consensus_problem, dual_update, initial_states, AdmmConfig, Network, NodeState};
use crate::data::{NodeDataset, PartitionedDataset};
use crate::dvp::{dvp_node_step, AlphaSchedule, ZetaRule};
use crate::error::{check_dim, require_positive, Error, Result};
use crate::model::{Loss, Regularizer};
use crate::network::NetworkGraph;
use crate::noise::{sample_noise, NoiseSpec, StreamKey, StreamPurpose};
use crate::trace::{Mechanism, NodeRecord, RunTrace};
use crate::Vector;

/// Scalars of one PVP round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvpParams {
    pub alpha: f64,
    pub zeta: f64,
    pub t_stop: usize,
}

/// `ζ = ρB_pα/(2C^R)`.
pub fn pvp_zeta(rho: f64, b_p: f64, alpha: f64, c_r: f64) -> Result<f64> {
    require_positive("rho", rho)?;
    require_positive("b_p", b_p)?;
    require_positive("alpha", alpha)?;
    require_positive("c_r", c_r)?;
    Ok(rho * b_p * alpha / (2.0 * c_r))
}

/// `2C^R/(ρB_p)`: how far the minimizer can move when one sample changes.
pub fn pvp_sensitivity_bound(c_r: f64, rho: f64, b_p: f64) -> Result<f64> {
    require_positive("c_r", c_r)?;
    require_positive("rho", rho)?;
    require_positive("b_p", b_p)?;
    Ok(2.0 * c_r / (rho * b_p))
}

/// Minimizer of `L_prim`, using the neighbors' perturbed `V_i(t)` and the
/// node's own previous noise `ε_p(t)` (`state.last_noise`).
pub fn primal_update_pvp(
    state: &NodeState,
    neighbor_v: &[&Vector],
    dataset: &NodeDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
) -> Result<Vector> {
    check_dim(state.f.len(), state.last_noise.len())?;
    let targets = neighbor_v
        .iter()
        .map(|v| {
            check_dim(state.f.len(), v.len())?;
            Ok(*v - &state.last_noise)
        })
        .collect::<Result<Vec<Vector>>>()?;
    let refs: Vec<&Vector> = targets.iter().collect();
    let prob = consensus_problem(dataset, loss, reg, config, &state.f, &refs, &state.lambda, 0.0)?;
    Ok(prob.solve(state.f.clone(), &config.solver_options())?.x)
}

/// `V = f + ε`.
pub fn perturb_primal(f: &Vector, noise: &Vector) -> Result<Vector> {
    check_dim(f.len(), noise.len())?;
    Ok(f + noise)
}

/// `λ_p + (η/2) Σ_j (V_p − V_j)`.
pub fn dual_update_pvp(lambda: &Vector, own_v: &Vector, neighbor_v: &[&Vector], eta: f64) -> Result<Vector> {
    dual_update(lambda, own_v, neighbor_v, eta)
}

/// Primal-perturbed distributed ERM: `t_stop` perturbed-broadcast rounds
/// followed by one dual-perturbed round. `t_stop` defaults to
/// `max_iters − 1`, so the trace has `max_iters` rounds.
#[allow(clippy::too_many_arguments)]
pub fn run_pvp(
    partitioned: &PartitionedDataset,
    graph: &NetworkGraph,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
    schedule: &AlphaSchedule,
    t_stop: Option<usize>,
    final_zeta_rule: ZetaRule,
    seed: u64,
) -> Result<RunTrace> {
    schedule.validate()?;
    let t_stop = t_stop.unwrap_or(config.max_iters.saturating_sub(1));
    if t_stop == 0 || t_stop + 1 > config.max_iters {
        return Err(Error::InvalidArgument(format!(
            "t_stop must satisfy 1 <= t_stop <= max_iters - 1 (got t_stop = {t_stop}, max_iters = {})",
            config.max_iters
        )));
    }
    let net = Network::new(partitioned, graph, loss, reg, config)?;
    let mut states = initial_states(net.node_count(), net.dim(), seed, config.init_scale)?;
    let mut trace = RunTrace::new(Mechanism::Pvp, net.initial_record(&states)?);

    for t in 0..t_stop {
        let round = t + 1;
        let broadcast: Vec<Vector> = states.iter().map(|s| s.v.clone()).collect();
        let steps = net.per_node(round, |p| {
            let ds = &partitioned.per_node[p];
            let f = primal_update_pvp(&states[p], &net.gather(p, &broadcast), ds, loss, reg, config)?;
            let alpha = schedule.alpha(p, t);
            let zeta = pvp_zeta(config.erm.rho, ds.len() as f64, alpha, config.erm.c_r)?;
            let spec = NoiseSpec { dim: net.dim(), zeta, stream: StreamKey::new(seed, StreamPurpose::Mechanism, p as u64, round as u64) };
            let noise = sample_noise(&spec)?;
            let v = perturb_primal(&f, &noise)?;
            Ok((f, noise, v, PvpParams { alpha, zeta, t_stop }))
        })?;
        let new_v: Vec<Vector> = steps.iter().map(|s| s.2.clone()).collect();
        let new_lambda = net.per_node(round, |p| dual_update_pvp(&states[p].lambda, &new_v[p], &net.gather(p, &new_v), config.eta))?;
        let mut nodes = Vec::with_capacity(states.len());
        for (p, ((state, (f, noise, v, params)), lambda)) in states.iter_mut().zip(steps).zip(new_lambda).enumerate() {
            nodes.push(NodeRecord {
                empirical_loss: net.empirical_loss(p, &f)?,
                f: f.clone(),
                lambda: lambda.clone(),
                broadcast: v.clone(),
                noise_norm: Some(noise.norm()),
                alpha: Some(params.alpha),
                alpha_hat: None,
                phi: None,
                zeta: Some(params.zeta),
            });
            *state = NodeState { f, lambda, mu: state.mu.clone(), v, last_noise: noise };
        }
        trace.push(net.record(round, false, nodes)?);
    }

    // final dual-perturbed round on the latest f_p, λ_p and received V_i
    let round = t_stop + 1;
    let broadcast: Vec<Vector> = states.iter().map(|s| s.v.clone()).collect();
    let steps = net.per_node(round, |p| {
        dvp_node_step(&net, p, round, &states[p], &net.gather(p, &broadcast), schedule.alpha(p, t_stop), final_zeta_rule, seed)
    })?;
    let new_f: Vec<Vector> = steps.iter().map(|s| s.f.clone()).collect();
    let new_lambda = net.per_node(round, |p| dual_update(&states[p].lambda, &new_f[p], &net.gather(p, &new_f), config.eta))?;
    let mut nodes = Vec::with_capacity(states.len());
    for (p, ((state, step), lambda)) in states.iter_mut().zip(steps).zip(new_lambda).enumerate() {
        nodes.push(NodeRecord {
            f: step.f.clone(),
            lambda: lambda.clone(),
            broadcast: step.f.clone(),
            empirical_loss: net.empirical_loss(p, &step.f)?,
            noise_norm: Some(step.noise.norm()),
            alpha: Some(step.params.alpha),
            alpha_hat: Some(step.params.alpha_hat),
            phi: Some(step.params.phi),
            zeta: Some(step.params.zeta),
        });
        *state = NodeState { v: step.f.clone(), f: step.f, lambda, mu: step.mu, last_noise: step.noise };
    }
    trace.push(net.record(round, true, nodes)?);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::primal_update_nonprivate;
    use crate::data::DataPoint;
    use crate::model::{local_objective, ErmParams, Logistic, L2};
    use crate::solver::{gradient_descent, Objective};
    use approx::assert_relative_eq;

    #[test]
    fn zeta_examples() {
        assert_relative_eq!(pvp_zeta(0.1, 100.0, 0.5, 50.0).unwrap(), 0.05, epsilon = 1e-15);
        assert_relative_eq!(pvp_zeta(0.1, 100.0, 1.0, 50.0).unwrap(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(pvp_zeta(0.1, 100.0, 0.5, 100.0).unwrap(), 0.025, epsilon = 1e-15);
        assert!(pvp_zeta(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        assert_relative_eq!(pvp_sensitivity_bound(50.0, 0.1, 100.0).unwrap(), 10.0, epsilon = 1e-12);
        assert!(pvp_sensitivity_bound(50.0, 0.1, 1e18).unwrap() < 1e-12);
        assert!(pvp_sensitivity_bound(-1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn perturb_primal_examples() {
        let f = Vector::from_vec(vec![1.0, 2.0]);
        let e = Vector::from_vec(vec![-0.5, 0.25]);
        assert_eq!(perturb_primal(&f, &Vector::zeros(2)).unwrap(), f);
        assert_eq!(perturb_primal(&Vector::zeros(2), &e).unwrap(), e);
        assert_eq!(perturb_primal(&f, &e).unwrap(), Vector::from_vec(vec![0.5, 2.25]));
    }

    #[test]
    fn dual_update_on_v() {
        let lam = Vector::zeros(2);
        let a = Vector::from_vec(vec![2.0, 0.0]);
        let b = Vector::zeros(2);
        assert_eq!(dual_update_pvp(&lam, &a, &[&b], 1.0).unwrap(), Vector::from_vec(vec![1.0, 0.0]));
        assert_eq!(dual_update_pvp(&lam, &a, &[&a], 1.0).unwrap(), lam);
    }

    fn dataset() -> NodeDataset {
        let pts = vec![
            DataPoint::from_slice(&[0.6, 0.2], 1.0).unwrap(),
            DataPoint::from_slice(&[-0.3, 0.5], -1.0).unwrap(),
            DataPoint::from_slice(&[0.1, -0.8], 1.0).unwrap(),
            DataPoint::from_slice(&[-0.7, -0.1], -1.0).unwrap(),
        ];
        NodeDataset::new(0, pts).unwrap()
    }

    fn config() -> AdmmConfig {
        let mut c = AdmmConfig::new(ErmParams::new(2.0, 0.5).unwrap());
        c.inner_tol = 1e-11;
        c
    }

    #[test]
    fn zero_noise_is_nonprivate() {
        let ds = dataset();
        let c = config();
        let mut st = NodeState::new(Vector::from_vec(vec![0.1, 0.3]));
        st.lambda = Vector::from_vec(vec![-0.2, 0.1]);
        let nb = Vector::from_vec(vec![0.5, -0.5]);
        let a = primal_update_pvp(&st, &[&nb], &ds, &Logistic, &L2, &c).unwrap();
        let b = primal_update_nonprivate(&st, &[&nb], &ds, &Logistic, &L2, &c).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn shifted_neighbor_moves_target_by_half() {
        let ds = dataset();
        let c = config();
        let st = NodeState::new(Vector::from_vec(vec![0.1, 0.3]));
        let f_i = Vector::from_vec(vec![0.5, -0.5]);
        let shift = Vector::from_vec(vec![0.4, 0.2]);
        let v_i = &f_i + &shift;
        let got = primal_update_pvp(&st, &[&v_i], &ds, &Logistic, &L2, &c).unwrap();
        let target = (&st.f + &f_i) * 0.5 + &shift * 0.5;
        struct Direct<'a> {
            ds: &'a NodeDataset,
            c: AdmmConfig,
            target: Vector,
        }
        impl Objective for Direct<'_> {
            fn value(&self, x: &Vector) -> f64 {
                local_objective(x, self.ds, &Logistic, &L2, &self.c.erm).unwrap() + (x - &self.target).norm_squared()
            }
            fn gradient(&self, x: &Vector) -> Vector {
                crate::model::local_gradient(x, self.ds, &Logistic, &L2, &self.c.erm).unwrap() + (x - &self.target) * 2.0
            }
            fn hessian(&self, _: &Vector) -> nalgebra::DMatrix<f64> {
                unreachable!()
            }
        }
        let oracle = gradient_descent(&Direct { ds: &ds, c, target }, Vector::zeros(2), 0.1, 20_000);
        assert!((got - oracle).norm() < 1e-6);
    }

    #[test]
    fn compensation_identity() {
        let ds = dataset();
        let c = config();
        let mut st = NodeState::new(Vector::from_vec(vec![0.1, 0.3]));
        st.last_noise = Vector::from_vec(vec![0.7, -0.4]);
        let v_i = Vector::from_vec(vec![1.0, 1.0]);
        let comp = &v_i - &st.last_noise;
        let a = consensus_problem(&ds, &Logistic, &L2, &c, &st.f, &[&comp], &st.lambda, 0.0).unwrap();
        let x = Vector::from_vec(vec![-0.3, 0.8]);
        let direct =
            local_objective(&x, &ds, &Logistic, &L2, &c.erm).unwrap() + (&x - (&st.f + &v_i - &st.last_noise) * 0.5).norm_squared();
        assert!((a.value(&x) - direct).abs() < 1e-12);
    }
}
