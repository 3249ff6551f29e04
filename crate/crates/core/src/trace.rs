//! Per-round records of a run and their CSV form.
//!
//! One CSV row per node per round. Round 0 holds the initialization. Columns:
//!
//! ```text
//! mechanism,iteration,node,is_final_iteration,consensus_residual,objective,
//! empirical_loss,noise_norm,alpha,alpha_hat,phi,zeta,v_norm,
//! f_0..f_{d-1},lambda_0..lambda_{d-1},broadcast_0..broadcast_{d-1}
//! ```
//!
//! Mechanism-specific columns are empty when they do not apply. `broadcast_*`
//! is the payload the node sent to its neighbors that round.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    None,
    Dvp,
    Pvp,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::None => "none",
            Mechanism::Dvp => "dvp",
            Mechanism::Pvp => "pvp",
        })
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "nonprivate" => Ok(Mechanism::None),
            "dvp" => Ok(Mechanism::Dvp),
            "pvp" => Ok(Mechanism::Pvp),
            other => Err(Error::InvalidArgument(format!("unknown mechanism '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub f: Vector,
    pub lambda: Vector,
    pub broadcast: Vector,
    /// `C̄_p = (C^R/B_p)·Σ L(y f_p·x)`.
    pub empirical_loss: f64,
    pub noise_norm: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub phi: Option<f64>,
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub is_final: bool,
    /// Max over edges of `‖f_p − f_j‖`.
    pub consensus_residual: f64,
    /// `Σ_p Z_p(f̄)` at the node average `f̄`.
    pub objective: f64,
    pub nodes: Vec<NodeRecord>,
}

impl IterationRecord {
    pub fn average_f(&self) -> Vector {
        let mut acc = Vector::zeros(self.nodes[0].f.len());
        for n in &self.nodes {
            acc += &n.f;
        }
        acc / self.nodes.len() as f64
    }

    pub fn mean_empirical_loss(&self) -> f64 {
        self.nodes.iter().map(|n| n.empirical_loss).sum::<f64>() / self.nodes.len() as f64
    }
}

/// Append-only record of a run. `records[t − 1]` describes round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub mechanism: Mechanism,
    pub initial: IterationRecord,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn new(mechanism: Mechanism, initial: IterationRecord) -> Self {
        Self { mechanism, initial, records: Vec::new() }
    }

    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    /// Number of completed rounds.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.initial.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.initial.nodes[0].f.len()
    }

    /// State after round `t`; `t = 0` is the initialization.
    pub fn at(&self, t: usize) -> Result<&IterationRecord> {
        if t == 0 {
            Ok(&self.initial)
        } else {
            self.records.get(t - 1).ok_or(Error::IndexOutOfRange { index: t, len: self.records.len() + 1 })
        }
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().unwrap_or(&self.initial)
    }

    /// Final classifiers `f_p`.
    pub fn final_classifiers(&self) -> Vec<Vector> {
        self.last().nodes.iter().map(|n| n.f.clone()).collect()
    }

    fn header(d: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "mechanism",
            "iteration",
            "node",
            "is_final_iteration",
            "consensus_residual",
            "objective",
            "empirical_loss",
            "noise_norm",
            "alpha",
            "alpha_hat",
            "phi",
            "zeta",
            "v_norm",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for prefix in ["f", "lambda", "broadcast"] {
            h.extend((0..d).map(|i| format!("{prefix}_{i}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dim();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::header(d))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for rec in std::iter::once(&self.initial).chain(&self.records) {
            for (p, n) in rec.nodes.iter().enumerate() {
                let v_norm = (self.mechanism == Mechanism::Pvp).then(|| n.broadcast.norm());
                let mut row = vec![
                    self.mechanism.to_string(),
                    rec.iteration.to_string(),
                    p.to_string(),
                    rec.is_final.to_string(),
                    rec.consensus_residual.to_string(),
                    rec.objective.to_string(),
                    n.empirical_loss.to_string(),
                    opt(n.noise_norm),
                    opt(n.alpha),
                    opt(n.alpha_hat),
                    opt(n.phi),
                    opt(n.zeta),
                    opt(v_norm),
                ];
                for v in [&n.f, &n.lambda, &n.broadcast] {
                    row.extend(v.iter().map(|x| x.to_string()));
                }
                out.write_record(&row)?;
            }
        }
        out.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let d = headers.iter().filter(|h| h.starts_with("f_")).count();
        if d == 0 || headers.len() != 13 + 3 * d {
            return Err(Error::Parse { line: 1, message: "unexpected trace header".into() });
        }
        let mut mechanism = None;
        let mut rounds: Vec<IterationRecord> = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let bad = |m: &str| Error::Parse { line, message: m.to_string() };
            let num = |k: usize| row[k].parse::<f64>().map_err(|_| bad(&format!("bad number in column {k}")));
            let opt = |k: usize| -> Result<Option<f64>> {
                if row[k].is_empty() {
                    Ok(None)
                } else {
                    num(k).map(Some)
                }
            };
            let vec_at = |start: usize| -> Result<Vector> {
                let vals = (start..start + d).map(num).collect::<Result<Vec<_>>>()?;
                Ok(Vector::from_vec(vals))
            };
            let m: Mechanism = row[0].parse()?;
            if *mechanism.get_or_insert(m) != m {
                return Err(bad("mixed mechanisms in one trace"));
            }
            let iteration: usize = row[1].parse().map_err(|_| bad("bad iteration"))?;
            let node: usize = row[2].parse().map_err(|_| bad("bad node"))?;
            let is_final: bool = row[3].parse().map_err(|_| bad("bad is_final_iteration"))?;
            let record = NodeRecord {
                empirical_loss: num(6)?,
                noise_norm: opt(7)?,
                alpha: opt(8)?,
                alpha_hat: opt(9)?,
                phi: opt(10)?,
                zeta: opt(11)?,
                f: vec_at(13)?,
                lambda: vec_at(13 + d)?,
                broadcast: vec_at(13 + 2 * d)?,
            };
            match rounds.last_mut() {
                Some(r) if r.iteration == iteration => {
                    if node != r.nodes.len() {
                        return Err(bad("node rows out of order"));
                    }
                    r.nodes.push(record);
                }
                _ => {
                    if iteration != rounds.len() || node != 0 {
                        return Err(bad("rounds out of order"));
                    }
                    rounds.push(IterationRecord {
                        iteration,
                        is_final,
                        consensus_residual: num(4)?,
                        objective: num(5)?,
                        nodes: vec![record],
                    });
                }
            }
        }
        let mut it = rounds.into_iter();
        let initial = it.next().ok_or(Error::Parse { line: 1, message: "empty trace".into() })?;
        Ok(Self { mechanism: mechanism.unwrap_or(Mechanism::None), initial, records: it.collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![-1e6f64..1e6, any::<f64>().prop_filter("finite", |x| x.is_finite())]
    }

    fn node(d: usize) -> impl Strategy<Value = NodeRecord> {
        let v = move || prop::collection::vec(finite(), d).prop_map(Vector::from_vec);
        (v(), v(), v(), finite(), prop::option::of(finite()), prop::option::of(finite()), prop::option::of(finite())).prop_map(
            |(f, lambda, broadcast, empirical_loss, noise_norm, alpha, phi)| NodeRecord {
                f,
                lambda,
                broadcast,
                empirical_loss,
                noise_norm,
                alpha,
                alpha_hat: alpha.map(|a| a / 2.0),
                phi,
                zeta: noise_norm,
            },
        )
    }

    fn trace() -> impl Strategy<Value = RunTrace> {
        (1usize..4, 1usize..4, 0usize..4, prop_oneof![Just(Mechanism::None), Just(Mechanism::Dvp), Just(Mechanism::Pvp)])
            .prop_flat_map(|(d, p, rounds, m)| {
                let round = move || (prop::collection::vec(node(d), p), finite(), finite());
                (prop::collection::vec(round(), rounds + 1), Just(m))
            })
            .prop_map(|(rounds, m)| {
                let n = rounds.len();
                let mut recs = rounds.into_iter().enumerate().map(|(i, (nodes, r, o))| IterationRecord {
                    iteration: i,
                    is_final: i + 1 == n && i > 0,
                    consensus_residual: r.abs(),
                    objective: o,
                    nodes,
                });
                let mut t = RunTrace::new(m, recs.next().unwrap());
                recs.for_each(|r| t.push(r));
                t
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(t in trace()) {
            let text = t.to_csv_string().unwrap();
            let back = RunTrace::read_csv(text.as_bytes()).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn header_layout() {
        let h = RunTrace::header(2);
        assert_eq!(h.len(), 19);
        assert_eq!(h[13], "f_0");
        assert_eq!(h[18], "broadcast_1");
    }

    #[test]
    fn rejects_garbage() {
        assert!(RunTrace::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
