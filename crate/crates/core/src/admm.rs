//! Non-private consensus ADMM and the shared synchronous-round machinery.
//!
//! Each round has three phases separated by barriers: every node solves its
//! primal subproblem against the previous round's broadcasts, all payloads are
//! exchanged, then every node updates its dual variable. Node work inside a
//! phase runs on the rayon pool; results do not depend on scheduling.

use rayon::prelude::*;

use crate::data::{NodeDataset, PartitionedDataset};
use crate::error::{check_dim, require_positive, Error, Result};
use crate::model::{consensus_objective, empirical_term, ErmParams, Loss, Regularizer};
use crate::network::NetworkGraph;
use crate::noise::{sample_noise, NoiseSpec, StreamKey, StreamPurpose};
use crate::solver::{minimize, LocalProblem, Objective, SolverOptions};
use crate::trace::{IterationRecord, Mechanism, NodeRecord, RunTrace};
use crate::Vector;

pub const DEFAULT_ETA: f64 = 1.0;
pub const DEFAULT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdmmConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Gradient-norm tolerance of every inner minimization.
    pub inner_tol: f64,
    pub init_scale: f64,
    pub erm: ErmParams,
}

impl AdmmConfig {
    pub fn new(erm: ErmParams) -> Self {
        Self { eta: DEFAULT_ETA, max_iters: 100, inner_tol: crate::solver::DEFAULT_TOL, init_scale: DEFAULT_INIT_SCALE, erm }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("eta", self.eta)?;
        require_positive("inner_tol", self.inner_tol)?;
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("init_scale must be nonnegative, got {}", self.init_scale)));
        }
        ErmParams::new(self.erm.c_r, self.erm.rho)?;
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions::with_tol(self.inner_tol)
    }
}

/// Learning state held by one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub f: Vector,
    pub lambda: Vector,
    /// Perturbed dual of the last DVP step.
    pub mu: Vector,
    /// Last broadcast perturbed primal (PVP).
    pub v: Vector,
    pub last_noise: Vector,
}

impl NodeState {
    /// State with the given classifier and zero dual.
    pub fn new(f: Vector) -> Self {
        let d = f.len();
        Self { v: f.clone(), f, lambda: Vector::zeros(d), mu: Vector::zeros(d), last_noise: Vector::zeros(d) }
    }
}

/// `f_p(0) = init_scale · ε` with `ε` drawn (ζ = 1) from the node's init
/// stream; duals start at zero.
pub fn initial_states(node_count: usize, dim: usize, seed: u64, init_scale: f64) -> Result<Vec<NodeState>> {
    (0..node_count)
        .map(|p| {
            let spec = NoiseSpec { dim, zeta: 1.0, stream: StreamKey::new(seed, StreamPurpose::Init, p as u64, 0) };
            Ok(NodeState::new(sample_noise(&spec)? * init_scale))
        })
        .collect()
}

/// Subproblem `Z_p(f) + 2·dual·f + (extra_kappa/2)‖f‖² + η Σ_i ‖f − ½(own + g_i)‖²`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn consensus_problem<'a>(
    dataset: &'a NodeDataset,
    loss: &'a dyn Loss,
    reg: &'a dyn Regularizer,
    config: &AdmmConfig,
    own: &Vector,
    targets: &[&Vector],
    dual: &Vector,
    extra_kappa: f64,
) -> Result<LocalProblem<'a>> {
    let d = dataset.dim();
    check_dim(d, own.len())?;
    check_dim(d, dual.len())?;
    let eta = config.eta;
    let mut linear = dual * 2.0;
    let mut constant = 0.0;
    for g in targets {
        check_dim(d, g.len())?;
        let m = (own + *g) * 0.5;
        linear.axpy(-2.0 * eta, &m, 1.0);
        constant += eta * m.norm_squared();
    }
    Ok(LocalProblem { dataset, loss, reg, params: config.erm, kappa: 2.0 * eta * targets.len() as f64 + extra_kappa, linear, constant })
}

/// Minimizer of `Z_p(f) + 2λ_p·f + η Σ_{i∈N_p} ‖f − ½(f_p(t) + f_i(t))‖²`,
/// warm-started at `f_p(t)`.
pub fn primal_update_nonprivate(
    state: &NodeState,
    neighbor_f: &[&Vector],
    dataset: &NodeDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
) -> Result<Vector> {
    let prob = consensus_problem(dataset, loss, reg, config, &state.f, neighbor_f, &state.lambda, 0.0)?;
    Ok(prob.solve(state.f.clone(), &config.solver_options())?.x)
}

/// `λ_p + (η/2) Σ_j (own − payload_j)`.
pub fn dual_update(lambda: &Vector, own: &Vector, neighbor_payloads: &[&Vector], eta: f64) -> Result<Vector> {
    check_dim(lambda.len(), own.len())?;
    let mut out = lambda.clone();
    for g in neighbor_payloads {
        check_dim(lambda.len(), g.len())?;
        out += (own - *g) * (0.5 * eta);
    }
    Ok(out)
}

/// Max over edges of `‖f_p − f_j‖`; zero on a single node.
pub fn consensus_residual(states: &[NodeState], graph: &NetworkGraph) -> f64 {
    let fs: Vec<&Vector> = states.iter().map(|s| &s.f).collect();
    residual_of(&fs, graph)
}

pub(crate) fn residual_of(fs: &[&Vector], graph: &NetworkGraph) -> f64 {
    graph.edges().into_iter().map(|(a, b)| (fs[a] - fs[b]).norm()).fold(0.0, f64::max)
}

/// `Σ_p Z_p(f)` as one smooth objective.
struct SumObjective<'a> {
    parts: Vec<LocalProblem<'a>>,
}

impl Objective for SumObjective<'_> {
    fn value(&self, x: &Vector) -> f64 {
        self.parts.iter().map(|p| p.value(x)).sum()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        self.parts.iter().fold(Vector::zeros(x.len()), |acc, p| acc + p.gradient(x))
    }
    fn hessian(&self, x: &Vector) -> nalgebra::DMatrix<f64> {
        self.parts.iter().fold(nalgebra::DMatrix::zeros(x.len(), x.len()), |acc, p| acc + p.hessian(x))
    }
}

/// Newton minimizer of the network objective `Σ_p Z_p(f)`, the common value
/// every node's classifier converges to.
pub fn centralized_solve(
    partitioned: &PartitionedDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    params: &ErmParams,
    tol: f64,
) -> Result<Vector> {
    require_positive("tol", tol)?;
    let obj = SumObjective { parts: partitioned.per_node.iter().map(|ds| LocalProblem::erm(ds, loss, reg, *params)).collect() };
    Ok(minimize(&obj, Vector::zeros(partitioned.dim()), &SolverOptions::with_tol(tol))?.x)
}

/// Borrowed problem description shared by the three runners.
pub(crate) struct Network<'a> {
    pub data: &'a PartitionedDataset,
    pub graph: &'a NetworkGraph,
    pub loss: &'a dyn Loss,
    pub reg: &'a dyn Regularizer,
    pub config: &'a AdmmConfig,
    pub neighbors: Vec<Vec<usize>>,
}

impl<'a> Network<'a> {
    pub fn new(
        data: &'a PartitionedDataset,
        graph: &'a NetworkGraph,
        loss: &'a dyn Loss,
        reg: &'a dyn Regularizer,
        config: &'a AdmmConfig,
    ) -> Result<Self> {
        config.validate()?;
        if data.node_count() != graph.node_count() {
            return Err(Error::InvalidArgument(format!("dataset has {} nodes but graph has {}", data.node_count(), graph.node_count())));
        }
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        for ds in &data.per_node {
            config.erm.check_node_size(ds.len())?;
        }
        let neighbors = (0..graph.node_count())
            .map(|p| graph.neighbors(p).map(|ns| ns.iter().copied().collect()))
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(Self { data, graph, loss, reg, config, neighbors })
    }

    pub fn node_count(&self) -> usize {
        self.data.node_count()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn gather<'v>(&self, p: usize, payloads: &'v [Vector]) -> Vec<&'v Vector> {
        self.neighbors[p].iter().map(|&j| &payloads[j]).collect()
    }

    pub fn empirical_loss(&self, p: usize, f: &Vector) -> Result<f64> {
        empirical_term(f, &self.data.per_node[p], self.loss, self.config.erm.c_r)
    }

    /// Runs `step` for every node in parallel, tagging failures with node and round.
    pub fn per_node<T: Send>(&self, round: usize, step: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        (0..self.node_count()).into_par_iter().map(|p| step(p).map_err(|e| e.at_node(p, round))).collect()
    }

    pub fn record(&self, iteration: usize, is_final: bool, nodes: Vec<NodeRecord>) -> Result<IterationRecord> {
        let fs: Vec<&Vector> = nodes.iter().map(|n| &n.f).collect();
        let consensus_residual = residual_of(&fs, self.graph);
        let mut avg = Vector::zeros(self.dim());
        for f in &fs {
            avg += *f;
        }
        avg /= fs.len() as f64;
        let objective = consensus_objective(&avg, self.data, self.loss, self.reg, &self.config.erm)?;
        Ok(IterationRecord { iteration, is_final, consensus_residual, objective, nodes })
    }

    /// Round-0 record for freshly initialized states.
    pub fn initial_record(&self, states: &[NodeState]) -> Result<IterationRecord> {
        let nodes = states
            .iter()
            .enumerate()
            .map(|(p, s)| {
                Ok(NodeRecord {
                    f: s.f.clone(),
                    lambda: s.lambda.clone(),
                    broadcast: s.f.clone(),
                    empirical_loss: self.empirical_loss(p, &s.f)?,
                    noise_norm: None,
                    alpha: None,
                    alpha_hat: None,
                    phi: None,
                    zeta: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.record(0, false, nodes)
    }
}

/// Non-private distributed ERM for `config.max_iters` synchronous rounds.
pub fn run_nonprivate(
    partitioned: &PartitionedDataset,
    graph: &NetworkGraph,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    config: &AdmmConfig,
    seed: u64,
) -> Result<RunTrace> {
    let net = Network::new(partitioned, graph, loss, reg, config)?;
    let mut states = initial_states(net.node_count(), net.dim(), seed, config.init_scale)?;
    let mut trace = RunTrace::new(Mechanism::None, net.initial_record(&states)?);
    for t in 0..config.max_iters {
        let round = t + 1;
        let broadcast: Vec<Vector> = states.iter().map(|s| s.f.clone()).collect();
        let new_f = net.per_node(round, |p| {
            primal_update_nonprivate(&states[p], &net.gather(p, &broadcast), &partitioned.per_node[p], loss, reg, config)
        })?;
        let new_lambda = net.per_node(round, |p| dual_update(&states[p].lambda, &new_f[p], &net.gather(p, &new_f), config.eta))?;
        let mut nodes = Vec::with_capacity(states.len());
        for (p, (state, (f, lambda))) in states.iter_mut().zip(new_f.iter().zip(new_lambda)).enumerate() {
            state.f = f.clone();
            state.v = f.clone();
            state.lambda = lambda;
            nodes.push(NodeRecord {
                f: state.f.clone(),
                lambda: state.lambda.clone(),
                broadcast: state.f.clone(),
                empirical_loss: net.empirical_loss(p, &state.f)?,
                noise_norm: None,
                alpha: None,
                alpha_hat: None,
                phi: None,
                zeta: None,
            });
        }
        trace.push(net.record(round, t + 1 == config.max_iters, nodes)?);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, DataPoint, PartitionStrategy};
    use crate::model::{local_objective, Logistic, L2};
    use crate::network::{build_topology, Topology};
    use crate::solver::gradient_descent;

    pub(crate) fn toy_points(n: usize, d: usize, seed: u64) -> Vec<DataPoint> {
        crate::data::synthetic_points(n, d, 0.0, seed).unwrap()
    }

    fn cfg() -> AdmmConfig {
        AdmmConfig::new(ErmParams::new(5.0, 0.1).unwrap())
    }

    #[test]
    fn dual_update_formula() {
        let lam = Vector::from_vec(vec![0.5, 0.5]);
        let own = Vector::from_vec(vec![2.0, 0.0]);
        let zero = Vector::zeros(2);
        let out = dual_update(&lam, &own, &[&zero], 1.0).unwrap();
        assert_eq!(out, Vector::from_vec(vec![1.5, 0.5]));
        assert_eq!(dual_update(&lam, &own, &[&own], 1.0).unwrap(), lam);
        assert!(dual_update(&lam, &own, &[&Vector::zeros(3)], 1.0).is_err());
    }

    #[test]
    fn residual_examples() {
        let g = build_topology(&Topology::Line, 2, 0).unwrap();
        let states = vec![NodeState::new(Vector::from_vec(vec![0.0, 1.0])), NodeState::new(Vector::from_vec(vec![0.0, 0.0]))];
        assert_eq!(consensus_residual(&states, &g), 1.0);
        let same = vec![states[0].clone(), states[0].clone()];
        assert_eq!(consensus_residual(&same, &g), 0.0);
    }

    #[test]
    fn isolated_node_reduces_to_local_erm() {
        let pts = toy_points(20, 3, 1);
        let ds = NodeDataset::new(0, pts).unwrap();
        let c = cfg();
        let state = NodeState::new(Vector::zeros(3));
        let f = primal_update_nonprivate(&state, &[], &ds, &Logistic, &L2, &c).unwrap();
        let part = PartitionedDataset::new(vec![ds]).unwrap();
        let star = centralized_solve(&part, &Logistic, &L2, &c.erm, 1e-10).unwrap();
        assert!((f - star).norm() < 1e-7);
    }

    #[test]
    fn primal_update_matches_gradient_descent() {
        let pts = toy_points(12, 2, 2);
        let ds = NodeDataset::new(0, pts).unwrap();
        let c = cfg();
        let mut state = NodeState::new(Vector::from_vec(vec![0.3, -0.1]));
        state.lambda = Vector::from_vec(vec![0.2, 0.4]);
        let nb = Vector::from_vec(vec![-0.5, 0.7]);
        let f = primal_update_nonprivate(&state, &[&nb], &ds, &Logistic, &L2, &c).unwrap();
        let direct = |x: &Vector| {
            local_objective(x, &ds, &Logistic, &L2, &c.erm).unwrap()
                + 2.0 * state.lambda.dot(x)
                + (x - (&state.f + &nb) * 0.5).norm_squared()
        };
        let prob = consensus_problem(&ds, &Logistic, &L2, &c, &state.f, &[&nb], &state.lambda, 0.0).unwrap();
        assert!((prob.value(&f) - direct(&f)).abs() < 1e-12);
        let gd = gradient_descent(&prob, Vector::zeros(2), 0.05, 50_000);
        assert!((f - gd).norm() < 1e-5);
    }

    #[test]
    fn symmetric_nodes_agree() {
        let ds = NodeDataset::new(0, toy_points(10, 2, 3)).unwrap();
        let c = cfg();
        let s = NodeState::new(Vector::from_vec(vec![0.1, 0.1]));
        let a = primal_update_nonprivate(&s, &[&s.f], &ds, &Logistic, &L2, &c).unwrap();
        let b = primal_update_nonprivate(&s, &[&s.f], &ds, &Logistic, &L2, &c).unwrap();
        assert_eq!(a, b);
    }

    fn ring_instance(p: usize, per: usize, d: usize) -> (PartitionedDataset, NetworkGraph) {
        let g = build_topology(&Topology::Ring, p, 0).unwrap();
        let part = partition(&toy_points(p * per, d, 4), &g, &PartitionStrategy::Even, 9).unwrap();
        (part, g)
    }

    #[test]
    fn single_node_run_has_zero_residual() {
        let (part, g) = ring_instance(1, 15, 2);
        let mut c = cfg();
        c.max_iters = 30;
        let tr = run_nonprivate(&part, &g, &Logistic, &L2, &c, 1).unwrap();
        assert_eq!(tr.len(), 30);
        assert!(tr.records.iter().all(|r| r.consensus_residual == 0.0));
        let star = centralized_solve(&part, &Logistic, &L2, &c.erm, 1e-10).unwrap();
        assert!((&tr.last().nodes[0].f - star).norm() < 1e-7);
    }

    #[test]
    fn ring_run_is_deterministic_and_converges() {
        let (part, g) = ring_instance(4, 10, 3);
        let mut c = cfg();
        c.max_iters = 200;
        let a = run_nonprivate(&part, &g, &Logistic, &L2, &c, 5).unwrap();
        let b = run_nonprivate(&part, &g, &Logistic, &L2, &c, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.last().consensus_residual < 1e-4);
        let star = centralized_solve(&part, &Logistic, &L2, &c.erm, 1e-10).unwrap();
        let zs = consensus_objective(&star, &part, &Logistic, &L2, &c.erm).unwrap();
        assert!((a.last().objective - zs).abs() / zs < 1e-3);
        // objective trend after burn-in
        for w in a.records[10..].windows(2) {
            assert!(w[1].objective <= w[0].objective + 1e-8);
        }
    }

    #[test]
    fn mismatched_graph_is_rejected() {
        let (part, _) = ring_instance(4, 5, 2);
        let g = build_topology(&Topology::Ring, 3, 0).unwrap();
        assert!(run_nonprivate(&part, &g, &Logistic, &L2, &cfg(), 0).is_err());
    }
}
