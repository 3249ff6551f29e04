//! Closed-form node sample sizes `B_p` sufficient for an `α_acc`-accurate
//! classifier with probability `1 − δ`.
//!
//! The leading constants `β` are unknown; with the default `β = 1` the values
//! are only meaningful relative to each other.

use crate::error::{require_positive, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundInputs {
    /// `‖f⁰‖`, norm of the reference classifier.
    pub norm_f0: f64,
    pub alpha_acc: f64,
    pub delta: f64,
    pub c_r: f64,
    pub rho: f64,
    pub eta: f64,
    pub n_p: usize,
    pub d: usize,
    pub c1: f64,
    pub beta: f64,
    /// Constant of the third full-PVP term; `None` means `C^R`.
    pub c_b: Option<f64>,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self { norm_f0: 1.0, alpha_acc: 0.1, delta: 0.05, c_r: 1.0, rho: 0.1, eta: 1.0, n_p: 2, d: 5, c1: 0.25, beta: 1.0, c_b: None }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        require_positive("norm_f0", self.norm_f0)?;
        require_positive("alpha_acc", self.alpha_acc)?;
        require_positive("c_r", self.c_r)?;
        require_positive("rho", self.rho)?;
        require_positive("eta", self.eta)?;
        require_positive("beta", self.beta)?;
        if let Some(c_b) = self.c_b {
            require_positive("c_b", c_b)?;
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if !(self.c1 >= 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidArgument(format!("c1 must be nonnegative, got {}", self.c1)));
        }
        if self.alpha_acc > 1.0 {
            log::warn!("alpha_acc = {} exceeds 1", self.alpha_acc);
        }
        Ok(())
    }

    fn d_log(&self) -> f64 {
        let d = self.d as f64;
        d * (d / self.delta).ln()
    }

    /// `C^R‖f⁰‖² ln(1/δ)/α_acc²`, shared by every mechanism.
    fn base_term(&self) -> f64 {
        // ordered so that unit inputs stay exact
        self.c_r * self.norm_f0 * self.norm_f0 * -self.delta.ln() / self.alpha_acc / self.alpha_acc
    }

    fn pvp_terms(&self, alpha: f64) -> [f64; 2] {
        let a = self.alpha_acc;
        let n = self.n_p as f64;
        [self.c_r * self.norm_f0.powi(3) * self.eta * n * self.d_log() / (a * a * alpha), self.base_term()]
    }
}

fn check_alpha(alpha_min: f64) -> Result<()> {
    require_positive("alpha_min", alpha_min)
}

fn max_of(terms: &[f64]) -> f64 {
    terms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Non-private consensus ADMM: `β·C^R‖f⁰‖² ln(1/δ)/α_acc²`.
pub fn bound_nonprivate(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.beta * inputs.base_term())
}

/// The three dual-perturbation terms before scaling by `β`.
pub fn dvp_terms(inputs: &BoundInputs, alpha_min: f64) -> Result<[f64; 3]> {
    inputs.validate()?;
    check_alpha(alpha_min)?;
    let a = inputs.alpha_acc;
    let f0 = inputs.norm_f0;
    Ok([f0 * inputs.d_log() / (a * alpha_min), inputs.c_r * inputs.c1 * f0 * f0 / (a * alpha_min), inputs.base_term()])
}

/// Dual perturbation with smallest per-round privacy level `alpha_min`.
pub fn bound_dvp(inputs: &BoundInputs, alpha_min: f64) -> Result<f64> {
    Ok(inputs.beta * max_of(&dvp_terms(inputs, alpha_min)?))
}

/// Primal perturbation, intermediate iterates `f_p(t)`.
pub fn bound_pvp_intermediate(inputs: &BoundInputs, alpha_min: f64) -> Result<f64> {
    inputs.validate()?;
    check_alpha(alpha_min)?;
    Ok(inputs.beta * max_of(&inputs.pvp_terms(alpha_min)))
}

/// The five full primal-perturbation terms before scaling by `β`.
pub fn pvp_full_terms(inputs: &BoundInputs, alpha_min: f64) -> Result<[f64; 5]> {
    inputs.validate()?;
    check_alpha(alpha_min)?;
    let [t1, t2] = inputs.pvp_terms(alpha_min);
    let a = inputs.alpha_acc;
    let f0 = inputs.norm_f0;
    let c_b = inputs.c_b.unwrap_or(inputs.c_r);
    let ln = (inputs.d as f64 / inputs.delta).ln();
    let d = inputs.d as f64;
    Ok([
        t1,
        t2,
        4.0 * c_b * f0 * d * ln * ln / (a * alpha_min),
        4.0 * f0.powi(3) * inputs.eta * inputs.n_p as f64 * inputs.d_log() / (a * a * alpha_min),
        4.0 * inputs.c_r.powf(1.5) * f0 * f0 * inputs.d_log() / (a.powf(1.5) * alpha_min),
    ])
}

/// Primal perturbation, broadcast outputs `V_p(t)`.
pub fn bound_pvp_full(inputs: &BoundInputs, alpha_min: f64) -> Result<f64> {
    Ok(inputs.beta * max_of(&pvp_full_terms(inputs, alpha_min)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn hand_value_is_exact() {
        let inputs = BoundInputs { beta: 1.0, c_r: 1.0, norm_f0: 1.0, delta: (-1.0f64).exp(), alpha_acc: 0.1, ..Default::default() };
        assert_eq!(bound_nonprivate(&inputs).unwrap(), 100.0);
    }

    #[test]
    fn halving_alpha_acc_quadruples() {
        let a = BoundInputs { alpha_acc: 0.2, ..Default::default() };
        let b = BoundInputs { alpha_acc: 0.1, ..a };
        assert_relative_eq!(bound_nonprivate(&b).unwrap(), 4.0 * bound_nonprivate(&a).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn delta_near_one_vanishes() {
        let x = BoundInputs { delta: 1.0 - 1e-12, ..Default::default() };
        assert!(bound_nonprivate(&x).unwrap() < 1e-9);
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(bound_nonprivate(&BoundInputs { delta: 1.0, ..Default::default() }).is_err());
        assert!(bound_nonprivate(&BoundInputs { alpha_acc: 0.0, ..Default::default() }).is_err());
        assert!(bound_dvp(&BoundInputs::default(), 0.0).is_err());
        assert!(bound_pvp_full(&BoundInputs { d: 0, ..Default::default() }, 0.1).is_err());
    }

    #[test]
    fn dvp_three_way_tie() {
        // Fix d, δ, α; choose c1 and α_acc so all three terms agree.
        // t3 = t1  ⇔  α_acc = C^R f0 ln(1/δ) α / (d ln(d/δ)).
        let (d, delta, alpha, f0, c_r) = (4usize, 0.05f64, 0.5f64, 1.0f64, 1.0f64);
        let dl = d as f64 * (d as f64 / delta).ln();
        let alpha_acc = c_r * f0 * (1.0 / delta).ln() * alpha / dl;
        // t2 = t1  ⇔  c1 = d ln(d/δ)/(C^R f0).
        let c1 = dl / (c_r * f0);
        let inputs = BoundInputs { d, delta, norm_f0: f0, c_r, c1, alpha_acc, ..Default::default() };
        let t = dvp_terms(&inputs, alpha).unwrap();
        assert_relative_eq!(t[0], t[1], max_relative = 1e-12);
        assert_relative_eq!(t[0], t[2], max_relative = 1e-12);
    }

    #[test]
    fn dvp_first_term_dominates_for_large_d() {
        let inputs = BoundInputs { d: 100_000, ..Default::default() };
        let t = dvp_terms(&inputs, 0.5).unwrap();
        assert!(t[0] > t[1] && t[0] > t[2]);
        assert_eq!(bound_dvp(&inputs, 0.5).unwrap(), t[0]);
    }

    #[test]
    fn pvp_intermediate_linear_in_neighbors() {
        // with a large N_p the first term dominates and scales linearly
        let a = BoundInputs { n_p: 100, ..Default::default() };
        let b = BoundInputs { n_p: 200, ..a };
        assert_relative_eq!(bound_pvp_intermediate(&b, 0.1).unwrap(), 2.0 * bound_pvp_intermediate(&a, 0.1).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn pvp_intermediate_crossover() {
        // t1 = t2 at α* = ‖f0‖ η N d ln(d/δ) / ln(1/δ); bisection must find the same point
        let x = BoundInputs::default();
        let closed = x.norm_f0 * x.eta * x.n_p as f64 * x.d_log() / (1.0 / x.delta).ln();
        let (mut lo, mut hi) = (1e-6f64, 1e6f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            let [t1, t2] = x.pvp_terms(mid);
            if t1 > t2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(lo, closed, max_relative = 1e-9);
    }

    #[test]
    fn full_reduces_to_intermediate_when_dominated() {
        // d = 1, N_p = 0: the extras shrink relative to the base term as C^R·α_acc → 0
        let x = BoundInputs { d: 1, n_p: 0, norm_f0: 10.0, c_r: 1.0, delta: 0.5, alpha_acc: 1e-3, ..Default::default() };
        let full = pvp_full_terms(&x, 1.0).unwrap();
        assert!(full[2..].iter().all(|t| *t < full[1]));
        assert_eq!(bound_pvp_full(&x, 1.0).unwrap(), bound_pvp_intermediate(&x, 1.0).unwrap());
    }

    #[test]
    fn c_b_override() {
        let x = BoundInputs { d: 50, ..Default::default() };
        let big = BoundInputs { c_b: Some(1e6), ..x };
        assert!(bound_pvp_full(&big, 0.5).unwrap() > bound_pvp_full(&x, 0.5).unwrap());
    }

    fn inputs() -> impl Strategy<Value = (BoundInputs, f64)> {
        (
            (0.1f64..10.0, 0.01f64..1.0, 0.001f64..0.9, 0.1f64..100.0),
            (0.01f64..10.0, 0.1f64..5.0, 0usize..10, 1usize..50, 0.0f64..1.0, 0.1f64..10.0),
            0.01f64..2.0,
        )
            .prop_map(|((norm_f0, alpha_acc, delta, c_r), (rho, eta, n_p, d, c1, beta), alpha)| {
                (BoundInputs { norm_f0, alpha_acc, delta, c_r, rho, eta, n_p, d, c1, beta, c_b: None }, alpha)
            })
    }

    // independent re-evaluation straight from the formulas
    fn oracle(x: &BoundInputs, alpha: f64) -> [f64; 4] {
        let (f0, a, dl, c) = (x.norm_f0, x.alpha_acc, (x.d as f64) * ((x.d as f64) / x.delta).ln(), x.c_r);
        let l1 = (1.0 / x.delta).ln();
        let base = c * f0.powi(2) * l1 / a.powi(2);
        let p1 = c * f0.powi(3) * x.eta * x.n_p as f64 * dl / (a.powi(2) * alpha);
        let ln = ((x.d as f64) / x.delta).ln();
        let extra = [
            4.0 * c * f0 * x.d as f64 * ln.powi(2) / (a * alpha),
            4.0 * f0.powi(3) * x.eta * x.n_p as f64 * dl / (a.powi(2) * alpha),
            4.0 * c.powf(1.5) * f0.powi(2) * dl / (a.powf(1.5) * alpha),
        ];
        let dvp = (f0 * dl / (a * alpha)).max(c * x.c1 * f0.powi(2) / (a * alpha)).max(base);
        let inter = p1.max(base);
        let full = extra.iter().fold(inter, |m, t| m.max(*t));
        [x.beta * base, x.beta * dvp, x.beta * inter, x.beta * full]
    }

    fn all(x: &BoundInputs, alpha: f64) -> [f64; 4] {
        [
            bound_nonprivate(x).unwrap(),
            bound_dvp(x, alpha).unwrap(),
            bound_pvp_intermediate(x, alpha).unwrap(),
            bound_pvp_full(x, alpha).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn matches_independent_evaluation((x, alpha) in inputs()) {
            for (got, want) in all(&x, alpha).iter().zip(oracle(&x, alpha)) {
                prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }

        #[test]
        fn monotone_under_perturbation((x, alpha) in inputs(), k in 1.01f64..3.0, step in 1usize..5) {
            let base = all(&x, alpha);
            let up = |b: [f64; 4], v: [f64; 4]| b.iter().zip(v).all(|(b, v)| v >= *b * (1.0 - 1e-12));
            let down = |b: [f64; 4], v: [f64; 4]| b.iter().zip(v).all(|(b, v)| v <= *b * (1.0 + 1e-12));
            let grow = [
                BoundInputs { norm_f0: x.norm_f0 * k, ..x },
                BoundInputs { c_r: x.c_r * k, ..x },
                BoundInputs { d: x.d + step, ..x },
                BoundInputs { n_p: x.n_p + step, ..x },
            ];
            for g in &grow {
                let v = all(g, alpha);
                prop_assert!(up(base, v));
            }
            let shrink = [
                (BoundInputs { alpha_acc: x.alpha_acc * k, ..x }, alpha),
                (x, alpha * k),
                (BoundInputs { delta: x.delta + (1.0 - x.delta) * (1.0 - 1.0 / k), ..x }, alpha),
            ];
            for (g, a) in &shrink {
                let v = all(g, *a);
                prop_assert!(down(base, v));
            }
        }
    }
}
