//! Histogram estimate of the privacy loss of a single perturbed update.
//!
//! One node without neighbors runs one round on `D` and on a neighboring
//! `D′`, each `runs` times with independent noise streams. The scalar outputs
//! are binned on pooled equal-mass bins and `ε̂` is the largest absolute log
//! ratio of the two histograms.

use rayon::prelude::*;

use crate::admm::{AdmmConfig, NodeState};
use crate::data::{neighboring_dataset, synthetic_points, DataPoint, NodeDataset};
use crate::dvp::{dvp_calibrate, perturb_dual, primal_update_dvp, ZetaRule};
use crate::error::{Error, Result};
use crate::model::{ErmParams, Loss, Regularizer};
use crate::noise::{sample_noise, NoiseSpec, StreamKey, StreamPurpose};
use crate::pvp::{primal_update_pvp, pvp_zeta};
use crate::trace::Mechanism;
use crate::Vector;

/// Bins whose count falls below this in either histogram are merged.
pub const MIN_BIN_COUNT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuditConfig {
    pub runs: usize,
    pub bins: usize,
    pub slack: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { runs: 100_000, bins: 20, slack: 0.2 }
    }
}

/// A scalar-feature node dataset and the mechanism settings to audit.
#[derive(Debug, Clone)]
pub struct AuditInstance {
    pub dataset: NodeDataset,
    pub config: AdmmConfig,
    pub zeta_rule: ZetaRule,
}

impl AuditInstance {
    /// `d = 1`, `B_p = 20`, `C^R = 1`, `ρ = 0.1`.
    pub fn default_scalar(seed: u64) -> Result<Self> {
        Ok(Self {
            dataset: NodeDataset::new(0, synthetic_points(20, 1, 0.1, seed)?)?,
            config: AdmmConfig::new(ErmParams::new(1.0, 0.1)?),
            zeta_rule: ZetaRule::ProofHalf,
        })
    }

    /// Replacement for point `index` that flips the sign of its feature at
    /// unit norm, the largest possible gradient change for `d = 1`.
    pub fn extreme_replacement(&self, index: usize) -> Result<DataPoint> {
        let p = self.dataset.points.get(index).ok_or(Error::IndexOutOfRange { index, len: self.dataset.len() })?;
        let s = if p.x[0] >= 0.0 { -1.0 } else { 1.0 };
        DataPoint::from_slice(&[s], p.y)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuditBin {
    pub lo: f64,
    pub hi: f64,
    pub count_d: usize,
    pub count_d_prime: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuditReport {
    pub mechanism: Mechanism,
    pub alpha: f64,
    pub epsilon_hat: f64,
    pub pass: bool,
    pub runs: usize,
    /// Number of requested bins absorbed into a neighbor for low occupancy.
    pub merged: usize,
    pub bins: Vec<AuditBin>,
}

/// Estimates `ε̂` for one perturbed update of `mechanism` on the instance
/// and its neighbor obtained by replacing point `neighbor_index`.
#[allow(clippy::too_many_arguments)]
pub fn audit_privacy(
    mechanism: Mechanism,
    instance: &AuditInstance,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    neighbor_index: usize,
    replacement: DataPoint,
    alpha: f64,
    audit: &AuditConfig,
    seed: u64,
) -> Result<AuditReport> {
    if instance.dataset.dim() != 1 {
        return Err(Error::InvalidArgument(format!("auditing needs d = 1, got {}", instance.dataset.dim())));
    }
    if audit.runs < 10_000 {
        log::warn!("{} audit runs; estimates below 10^4 runs are unreliable", audit.runs);
    }
    if audit.bins < 2 {
        return Err(Error::InvalidArgument("at least two bins are needed".into()));
    }
    crate::error::require_positive("alpha", alpha)?;
    instance.config.validate()?;
    instance.config.erm.check_node_size(instance.dataset.len())?;
    let other = neighboring_dataset(&instance.dataset, neighbor_index, replacement)?;
    let outputs = |ds: &NodeDataset, which: u64| -> Result<Vec<f64>> {
        let sampler = Sampler::new(mechanism, ds, &instance.config, instance.zeta_rule, loss, reg, alpha)?;
        (0..audit.runs).into_par_iter().map(|r| sampler.draw(StreamKey::new(seed, StreamPurpose::Audit, which, r as u64))).collect()
    };
    let a = outputs(&instance.dataset, 0)?;
    let b = outputs(&other, 1)?;
    let (bins, merged) = histogram(&a, &b, audit.bins);
    if merged > 0 {
        log::warn!("{merged} sparse bins merged into neighbors");
    }
    let epsilon_hat = bins.iter().map(|bin| (bin.count_d as f64 / bin.count_d_prime as f64).ln().abs()).fold(0.0, f64::max);
    Ok(AuditReport { mechanism, alpha, epsilon_hat, pass: epsilon_hat <= alpha + audit.slack, runs: audit.runs, merged, bins })
}

/// One node-round of a mechanism with the node's dual at zero.
struct Sampler<'a> {
    mechanism: Mechanism,
    dataset: &'a NodeDataset,
    config: &'a AdmmConfig,
    loss: &'a dyn Loss,
    reg: &'a dyn Regularizer,
    zeta: f64,
    dvp: Option<crate::dvp::DvpParams>,
    /// Noise-free PVP minimizer, fixed across runs.
    base: Vector,
}

impl<'a> Sampler<'a> {
    fn new(
        mechanism: Mechanism,
        dataset: &'a NodeDataset,
        config: &'a AdmmConfig,
        zeta_rule: ZetaRule,
        loss: &'a dyn Loss,
        reg: &'a dyn Regularizer,
        alpha: f64,
    ) -> Result<Self> {
        let state = NodeState::new(Vector::zeros(1));
        let b = dataset.len() as f64;
        let erm = config.erm;
        match mechanism {
            Mechanism::Dvp => {
                let params = dvp_calibrate(alpha, loss.c1(), b, erm.c_r, erm.rho, config.eta, 0, zeta_rule)?;
                Ok(Self { mechanism, dataset, config, loss, reg, zeta: params.zeta, dvp: Some(params), base: state.f })
            }
            Mechanism::Pvp => {
                let base = primal_update_pvp(&state, &[], dataset, loss, reg, config)?;
                let zeta = pvp_zeta(erm.rho, b, alpha, erm.c_r)?;
                Ok(Self { mechanism, dataset, config, loss, reg, zeta, dvp: None, base })
            }
            Mechanism::None => Err(Error::InvalidArgument("nothing to audit for the non-private mechanism".into())),
        }
    }

    fn draw(&self, stream: StreamKey) -> Result<f64> {
        let noise = sample_noise(&NoiseSpec { dim: 1, zeta: self.zeta, stream })?;
        match (self.mechanism, &self.dvp) {
            (Mechanism::Dvp, Some(params)) => {
                let state = NodeState::new(Vector::zeros(1));
                let erm = self.config.erm;
                let mu = perturb_dual(&state.lambda, &noise, erm.c_r, self.dataset.len() as f64)?;
                let f = primal_update_dvp(&state, &[], self.dataset, self.loss, self.reg, self.config, params, &mu)?;
                Ok(f[0])
            }
            _ => Ok(self.base[0] + noise[0]),
        }
    }
}

/// Equal-mass bins of the pooled sample, then left-to-right merging until
/// every bin holds at least [`MIN_BIN_COUNT`] of each sample.
fn histogram(a: &[f64], b: &[f64], bins: usize) -> (Vec<AuditBin>, usize) {
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len();
    let mut edges = vec![f64::NEG_INFINITY];
    for j in 1..bins {
        let e = pooled[j * n / bins];
        if e > *edges.last().unwrap() {
            edges.push(e);
        }
    }
    edges.push(f64::INFINITY);
    let raw = edges.len() - 1;
    let counts = |xs: &[f64]| {
        let mut c = vec![0usize; raw];
        for &x in xs {
            // bin j covers [edges[j], edges[j+1])
            let j = edges.partition_point(|e| *e <= x) - 1;
            c[j.min(raw - 1)] += 1;
        }
        c
    };
    let (ca, cb) = (counts(a), counts(b));
    let mut out: Vec<AuditBin> = Vec::new();
    let mut open: Option<AuditBin> = None;
    for j in 0..raw {
        let bin = open.get_or_insert(AuditBin { lo: edges[j], hi: edges[j + 1], count_d: 0, count_d_prime: 0 });
        bin.hi = edges[j + 1];
        bin.count_d += ca[j];
        bin.count_d_prime += cb[j];
        if bin.count_d >= MIN_BIN_COUNT && bin.count_d_prime >= MIN_BIN_COUNT {
            out.push(open.take().unwrap());
        }
    }
    if let Some(rest) = open {
        match out.last_mut() {
            Some(last) => {
                last.hi = rest.hi;
                last.count_d += rest.count_d;
                last.count_d_prime += rest.count_d_prime;
            }
            // too few samples overall; keep the single bin
            None => out.push(rest),
        }
    }
    let merged = bins - out.len();
    (out, merged)
}
