//! Margin losses, regularizers and the regularized ERM objectives.

use std::fmt::Debug;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::data::{NodeDataset, PartitionedDataset};
use crate::error::{check_dim, require_positive, Error, Result};
use crate::Vector;

/// Convex, twice differentiable loss of the margin `z = y f·x`.
pub trait Loss: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, z: f64) -> f64;
    fn first_derivative(&self, z: f64) -> f64;
    fn second_derivative(&self, z: f64) -> f64;
    /// Upper bound on `|L''|`.
    fn c1(&self) -> f64;
    /// Lipschitz constant of `L'`.
    fn c4_lipschitz(&self) -> f64;
}

/// `L(z) = ln(1 + e^{−z})`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Logistic;

pub fn logistic_loss() -> Logistic {
    Logistic
}

const LOGISTIC_BRANCH: f64 = 30.0;

impl Loss for Logistic {
    fn name(&self) -> &'static str {
        "logistic"
    }

    fn value(&self, z: f64) -> f64 {
        if z > LOGISTIC_BRANCH {
            (-z).exp()
        } else if z < -LOGISTIC_BRANCH {
            -z + z.exp()
        } else {
            (-z).exp().ln_1p()
        }
    }

    fn first_derivative(&self, z: f64) -> f64 {
        if z >= 0.0 {
            let e = (-z).exp();
            -e / (1.0 + e)
        } else {
            -1.0 / (1.0 + z.exp())
        }
    }

    fn second_derivative(&self, z: f64) -> f64 {
        let e = (-z.abs()).exp();
        e / ((1.0 + e) * (1.0 + e))
    }

    fn c1(&self) -> f64 {
        0.25
    }

    fn c4_lipschitz(&self) -> f64 {
        0.25
    }
}

/// Differentiable, 1-strongly convex regularizer.
pub trait Regularizer: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, f: &Vector) -> f64;
    fn gradient(&self, f: &Vector) -> Vector;
    fn hessian(&self, f: &Vector) -> DMatrix<f64>;
}

/// `R(f) = ½‖f‖²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct L2;

pub fn l2_regularizer() -> L2 {
    L2
}

impl Regularizer for L2 {
    fn name(&self) -> &'static str {
        "l2"
    }

    fn value(&self, f: &Vector) -> f64 {
        0.5 * f.norm_squared()
    }

    fn gradient(&self, f: &Vector) -> Vector {
        f.clone()
    }

    fn hessian(&self, f: &Vector) -> DMatrix<f64> {
        DMatrix::identity(f.len(), f.len())
    }
}

/// Loss names accepted in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Logistic,
}

impl LossKind {
    pub fn build(self) -> Box<dyn Loss> {
        match self {
            LossKind::Logistic => Box::new(Logistic),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" => Ok(LossKind::Logistic),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

/// Regularizer names accepted in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    #[default]
    L2,
}

impl RegularizerKind {
    pub fn build(self) -> Box<dyn Regularizer> {
        match self {
            RegularizerKind::L2 => Box::new(L2),
        }
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(RegularizerKind::L2),
            other => Err(Error::InvalidArgument(format!("unknown regularizer '{other}'"))),
        }
    }
}

/// Data weight `C^R` and regularization weight `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct ErmParams {
    pub c_r: f64,
    pub rho: f64,
}

impl ErmParams {
    /// `C^R` may be zero (pure regularization); `ρ` must be positive.
    pub fn new(c_r: f64, rho: f64) -> Result<Self> {
        if !(c_r >= 0.0 && c_r.is_finite()) {
            return Err(Error::InvalidArgument(format!("c_r must be nonnegative, got {c_r}")));
        }
        require_positive("rho", rho)?;
        Ok(Self { c_r, rho })
    }

    /// Checks `C^R ≤ B_p` for a node holding `b_p` samples.
    pub fn check_node_size(&self, b_p: usize) -> Result<()> {
        if self.c_r > b_p as f64 {
            return Err(Error::InvalidArgument(format!("c_r = {} exceeds node sample count {b_p}", self.c_r)));
        }
        Ok(())
    }
}

/// `(C^R/B_p)·Σ L(y f·x)`.
pub fn empirical_term(f: &Vector, dataset: &NodeDataset, loss: &dyn Loss, c_r: f64) -> Result<f64> {
    check_dim(dataset.dim(), f.len())?;
    let sum: f64 = dataset.points.iter().map(|pt| loss.value(pt.y * f.dot(&pt.x))).sum();
    Ok(c_r / dataset.len() as f64 * sum)
}

/// Gradient of [`empirical_term`]: `(C^R/B_p)·Σ y L'(y f·x) x`.
pub fn empirical_gradient(f: &Vector, dataset: &NodeDataset, loss: &dyn Loss, c_r: f64) -> Result<Vector> {
    check_dim(dataset.dim(), f.len())?;
    let mut g = Vector::zeros(f.len());
    for pt in &dataset.points {
        let s = pt.y * loss.first_derivative(pt.y * f.dot(&pt.x));
        g.axpy(s, &pt.x, 1.0);
    }
    Ok(g * (c_r / dataset.len() as f64))
}

/// Hessian of [`empirical_term`]: `(C^R/B_p)·Σ L''(y f·x) x xᵀ`.
pub fn empirical_hessian(f: &Vector, dataset: &NodeDataset, loss: &dyn Loss, c_r: f64) -> Result<DMatrix<f64>> {
    check_dim(dataset.dim(), f.len())?;
    let d = f.len();
    let mut h = DMatrix::zeros(d, d);
    for pt in &dataset.points {
        let w = loss.second_derivative(pt.y * f.dot(&pt.x));
        h.ger(w, &pt.x, &pt.x, 1.0);
    }
    Ok(h * (c_r / dataset.len() as f64))
}

/// Per-node objective `Z_p(f) = (C^R/B_p)·Σ L(y f·x) + ρR(f)`.
pub fn local_objective(f: &Vector, dataset: &NodeDataset, loss: &dyn Loss, reg: &dyn Regularizer, params: &ErmParams) -> Result<f64> {
    Ok(empirical_term(f, dataset, loss, params.c_r)? + params.rho * reg.value(f))
}

/// Analytic gradient of [`local_objective`].
pub fn local_gradient(f: &Vector, dataset: &NodeDataset, loss: &dyn Loss, reg: &dyn Regularizer, params: &ErmParams) -> Result<Vector> {
    Ok(empirical_gradient(f, dataset, loss, params.c_r)? + reg.gradient(f) * params.rho)
}

/// Centralized objective `(C^R/B)·Σ_p Σ_i L(y f·x) + ρR(f)`. Requires every
/// node to hold the same number of samples `B`.
pub fn centralized_objective(
    f: &Vector,
    partitioned: &PartitionedDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    params: &ErmParams,
) -> Result<f64> {
    let b = balanced_size(partitioned)?;
    check_dim(partitioned.dim(), f.len())?;
    let sum: f64 = partitioned.all_points().map(|pt| loss.value(pt.y * f.dot(&pt.x))).sum();
    Ok(params.c_r / b as f64 * sum + params.rho * reg.value(f))
}

/// Sum of the per-node objectives `Σ_p Z_p(f)`; what the consensus problem
/// minimizes once all nodes agree. Works for unbalanced partitions.
pub fn consensus_objective(
    f: &Vector,
    partitioned: &PartitionedDataset,
    loss: &dyn Loss,
    reg: &dyn Regularizer,
    params: &ErmParams,
) -> Result<f64> {
    partitioned.per_node.iter().map(|ds| local_objective(f, ds, loss, reg, params)).sum()
}

/// Common node size, or an error when nodes differ.
pub fn balanced_size(partitioned: &PartitionedDataset) -> Result<usize> {
    let b = partitioned.per_node[0].len();
    if let Some(ds) = partitioned.per_node.iter().find(|ds| ds.len() != b) {
        return Err(Error::InvalidArgument(format!(
            "centralized objective needs equal node sizes; node {} has {} samples, node 0 has {b}",
            ds.node_id,
            ds.len()
        )));
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataPoint;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> impl Iterator<Item = f64> {
        (0..=10_000).map(|i| -50.0 + i as f64 * 0.01)
    }

    #[test]
    fn logistic_reference_values() {
        let l = logistic_loss();
        assert_relative_eq!(l.value(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(l.first_derivative(0.0), -0.5, epsilon = 1e-15);
        assert_relative_eq!(l.second_derivative(0.0), 0.25, epsilon = 1e-15);
        assert_eq!(l.c1(), 0.25);
        assert_eq!(l.c4_lipschitz(), 0.25);
        assert!(l.value(800.0).is_finite() && l.value(-800.0).is_finite());
        assert_relative_eq!(l.value(-800.0), 800.0);
    }

    #[test]
    fn logistic_grid_bounds() {
        let l = logistic_loss();
        let max_h = grid().map(|z| l.second_derivative(z)).fold(0.0, f64::max);
        assert!(max_h <= 0.25 + 1e-15);
        assert!(grid().all(|z| l.first_derivative(z).abs() <= 1.0));
        assert!(grid().all(|z| l.second_derivative(z) >= 0.0));
    }

    #[test]
    fn logistic_branches_are_continuous() {
        let l = logistic_loss();
        for z in [30.0, -30.0] {
            let (a, b) = (l.value(z - 1e-9), l.value(z + 1e-9));
            assert!((a - b).abs() < 1e-8 * a.abs().max(1e-13));
        }
    }

    #[test]
    fn logistic_derivatives_match_finite_differences() {
        let l = logistic_loss();
        let h = 1e-5;
        for z in [-35.0, -4.0, -0.3, 0.0, 0.7, 5.0, 29.9, 31.0] {
            let fd1 = (l.value(z + h) - l.value(z - h)) / (2.0 * h);
            let fd2 = (l.first_derivative(z + h) - l.first_derivative(z - h)) / (2.0 * h);
            assert!((fd1 - l.first_derivative(z)).abs() < 1e-8, "z = {z}");
            assert!((fd2 - l.second_derivative(z)).abs() < 1e-8, "z = {z}");
        }
    }

    #[test]
    fn l2_basics() {
        let r = l2_regularizer();
        assert_eq!(r.value(&Vector::zeros(3)), 0.0);
        assert_eq!(r.gradient(&Vector::from_vec(vec![1.0, 2.0])), Vector::from_vec(vec![1.0, 2.0]));
    }

    fn sample_dataset() -> NodeDataset {
        let pts = vec![
            DataPoint::from_slice(&[0.3, -0.4], 1.0).unwrap(),
            DataPoint::from_slice(&[-0.6, 0.1], -1.0).unwrap(),
            DataPoint::from_slice(&[0.2, 0.9], 1.0).unwrap(),
        ];
        NodeDataset::new(0, pts).unwrap()
    }

    #[test]
    fn zero_classifier_gives_ln2() {
        let ds = sample_dataset();
        let params = ErmParams::new(3.0, 0.7).unwrap();
        let z = local_objective(&Vector::zeros(2), &ds, &Logistic, &L2, &params).unwrap();
        assert_relative_eq!(z, 3.0 * std::f64::consts::LN_2, epsilon = 1e-14);
    }

    #[test]
    fn single_point_at_origin() {
        let ds = NodeDataset::new(0, vec![DataPoint::from_slice(&[0.0, 0.0], 1.0).unwrap()]).unwrap();
        let params = ErmParams::new(1.0, 0.5).unwrap();
        let f = Vector::from_vec(vec![2.0, -1.0]);
        let z = local_objective(&f, &ds, &Logistic, &L2, &params).unwrap();
        assert_relative_eq!(z, std::f64::consts::LN_2 + 0.5 * 5.0 / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_data_weight_leaves_regularizer() {
        let ds = sample_dataset();
        let params = ErmParams::new(0.0, 0.7).unwrap();
        let f = Vector::from_vec(vec![0.4, -2.0]);
        let g = local_gradient(&f, &ds, &Logistic, &L2, &params).unwrap();
        assert_relative_eq!(g, &f * 0.7, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_pairs_cancel_at_zero() {
        let pts = vec![DataPoint::from_slice(&[0.5, 0.1], 1.0).unwrap(), DataPoint::from_slice(&[-0.5, -0.1], 1.0).unwrap()];
        let ds = NodeDataset::new(0, pts).unwrap();
        let g = local_gradient(&Vector::zeros(2), &ds, &Logistic, &L2, &ErmParams::new(2.0, 1.0).unwrap()).unwrap();
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = sample_dataset();
        let p = ErmParams::new(1.0, 1.0).unwrap();
        assert!(matches!(
            local_objective(&Vector::zeros(3), &ds, &Logistic, &L2, &p),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn centralized_requires_balance() {
        let a = sample_dataset();
        let b = NodeDataset::new(1, vec![DataPoint::from_slice(&[0.1, 0.1], 1.0).unwrap()]).unwrap();
        let part = PartitionedDataset::new(vec![a, b]).unwrap();
        let p = ErmParams::new(1.0, 1.0).unwrap();
        assert!(centralized_objective(&Vector::zeros(2), &part, &Logistic, &L2, &p).is_err());
        assert!(consensus_objective(&Vector::zeros(2), &part, &Logistic, &L2, &p).is_ok());
    }

    #[test]
    fn centralized_single_node_equals_local() {
        let ds = sample_dataset();
        let part = PartitionedDataset::new(vec![ds.clone()]).unwrap();
        let p = ErmParams::new(2.0, 0.3).unwrap();
        let f = Vector::from_vec(vec![0.7, -1.2]);
        assert_relative_eq!(
            centralized_objective(&f, &part, &Logistic, &L2, &p).unwrap(),
            local_objective(&f, &ds, &Logistic, &L2, &p).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn centralized_duplicate_partitions() {
        let ds = sample_dataset();
        let mut other = ds.clone();
        other.node_id = 1;
        let part = PartitionedDataset::new(vec![ds.clone(), other]).unwrap();
        let p = ErmParams::new(2.0, 0.3).unwrap();
        let f = Vector::from_vec(vec![-0.2, 0.5]);
        let single = empirical_term(&f, &ds, &Logistic, p.c_r).unwrap();
        assert_relative_eq!(
            centralized_objective(&f, &part, &Logistic, &L2, &p).unwrap(),
            2.0 * single + 0.3 * L2.value(&f),
            epsilon = 1e-13
        );
    }

    fn arb_dataset(d: usize) -> impl Strategy<Value = NodeDataset> {
        prop::collection::vec((prop::collection::vec(-1.0f64..1.0, d), prop::bool::ANY), 1..12).prop_map(move |rows| {
            let pts = rows
                .into_iter()
                .map(|(x, pos)| {
                    let v = Vector::from_vec(x);
                    let n = v.norm().max(1.0);
                    DataPoint::new(v / n, if pos { 1.0 } else { -1.0 }).unwrap()
                })
                .collect();
            NodeDataset::new(0, pts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(
            ds in arb_dataset(3),
            f in prop::collection::vec(-3.0f64..3.0, 3),
            c_r in 0.0f64..5.0,
            rho in 0.01f64..2.0,
        ) {
            let p = ErmParams::new(c_r, rho).unwrap();
            let f = Vector::from_vec(f);
            let g = local_gradient(&f, &ds, &Logistic, &L2, &p).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let mut a = f.clone();
                let mut b = f.clone();
                a[k] += h;
                b[k] -= h;
                let fd = (local_objective(&a, &ds, &Logistic, &L2, &p).unwrap()
                    - local_objective(&b, &ds, &Logistic, &L2, &p).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-6);
            }
        }

        #[test]
        fn objective_matches_direct_summation(ds in arb_dataset(2), f in prop::collection::vec(-3.0f64..3.0, 2)) {
            let p = ErmParams::new(1.5, 0.2).unwrap();
            let f = Vector::from_vec(f);
            let mut direct = 0.0;
            for pt in &ds.points {
                let z = pt.y * (f[0] * pt.x[0] + f[1] * pt.x[1]);
                direct += (1.0 + (-z).exp()).ln();
            }
            direct = direct * 1.5 / ds.len() as f64 + 0.1 * (f[0] * f[0] + f[1] * f[1]);
            prop_assert!((local_objective(&f, &ds, &Logistic, &L2, &p).unwrap() - direct).abs() <= 1e-12 * direct.max(1.0));
        }

        #[test]
        fn objective_is_convex(
            ds in arb_dataset(2),
            a in prop::collection::vec(-3.0f64..3.0, 2),
            b in prop::collection::vec(-3.0f64..3.0, 2),
            t in 0.0f64..1.0,
        ) {
            let p = ErmParams::new(2.0, 0.1).unwrap();
            let (a, b) = (Vector::from_vec(a), Vector::from_vec(b));
            let z = |f: &Vector| local_objective(f, &ds, &Logistic, &L2, &p).unwrap();
            let mid = &a * t + &b * (1.0 - t);
            prop_assert!(z(&mid) <= t * z(&a) + (1.0 - t) * z(&b) + 1e-9);
        }

        #[test]
        fn l2_is_one_strongly_convex(
            a in prop::collection::vec(-10.0f64..10.0, 4),
            b in prop::collection::vec(-10.0f64..10.0, 4),
        ) {
            let (a, b) = (Vector::from_vec(a), Vector::from_vec(b));
            let lhs = (L2.gradient(&a) - L2.gradient(&b)).dot(&(&a - &b));
            prop_assert!(lhs >= (&a - &b).norm_squared() - 1e-9);
        }
    }
}
