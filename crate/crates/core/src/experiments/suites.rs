//! Multi-seed runs: single runs with trace output, loss-vs-iteration curves
//! per privacy level, and the privacy/accuracy tradeoff with its fitted model.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::admm::run_nonprivate;
use crate::analysis::stats::{mann_whitney_less, mean, spearman, variance};
use crate::dvp::{run_dvp, AlphaSchedule, ZetaRule};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, Prepared};
use crate::experiments::metrics::{loss_curve, misclassification_rate};
use crate::experiments::plot::{line_chart, Series};
use crate::experiments::tradeoff::{choose_alpha, fit_tradeoff, FitResult};
use crate::pvp::run_pvp;
use crate::trace::{Mechanism, RunTrace};

/// Runs one mechanism on prepared data.
pub fn run_mechanism(
    mechanism: Mechanism,
    prep: &Prepared,
    schedule: &AlphaSchedule,
    zeta_rule: ZetaRule,
    t_stop: Option<usize>,
    seed: u64,
) -> Result<RunTrace> {
    let (data, graph, cfg, loss, reg) = (&prep.train, &prep.graph, &prep.admm, prep.loss.as_ref(), prep.reg.as_ref());
    match mechanism {
        Mechanism::None => run_nonprivate(data, graph, loss, reg, cfg, seed),
        Mechanism::Dvp => run_dvp(data, graph, loss, reg, cfg, schedule, zeta_rule, seed),
        Mechanism::Pvp => run_pvp(data, graph, loss, reg, cfg, schedule, t_stop, zeta_rule, seed),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunSummary {
    pub mechanism: Mechanism,
    pub seed: u64,
    pub iterations: usize,
    pub final_residual: f64,
    pub final_objective: f64,
    pub mean_final_loss: f64,
    pub misclassification: Option<f64>,
    pub trace_file: PathBuf,
}

/// `run`: one trace CSV per seed, named `trace_<mechanism>_seed<seed>.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let prep = config.prepare()?;
    let schedule = config.schedule()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let trace = run_mechanism(config.mechanism, &prep, &schedule, config.zeta_rule, config.t_stop, seed)?;
            let file = config.output_dir.join(format!("trace_{}_seed{seed}.csv", config.mechanism));
            let out = fs::File::create(&file).map_err(|e| Error::io(&file, e))?;
            trace.write_csv(std::io::BufWriter::new(out))?;
            let last = trace.last();
            Ok(RunSummary {
                mechanism: config.mechanism,
                seed,
                iterations: trace.len(),
                final_residual: last.consensus_residual,
                final_objective: last.objective,
                mean_final_loss: last.mean_empirical_loss(),
                misclassification: mer_of(&trace, &prep)?,
                trace_file: file,
            })
        })
        .collect()
}

fn mer_of(trace: &RunTrace, prep: &Prepared) -> Result<Option<f64>> {
    if prep.test.is_empty() {
        return Ok(None);
    }
    let per_node = trace.final_classifiers().iter().map(|f| misclassification_rate(f, &prep.test)).collect::<Result<Vec<_>>>()?;
    Ok(Some(mean(&per_node)))
}

/// Seed-averaged node-mean loss `C̄(t)` of one mechanism at one privacy level.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Curve {
    pub mechanism: Mechanism,
    /// `None` for the non-private baseline.
    pub alpha: Option<f64>,
    /// Mean over seeds for `t = 0..=T`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `C̄(T)` of every seed, in seed order.
    pub finals: Vec<f64>,
    pub misclassification: Option<f64>,
}

impl Curve {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("curves are nonempty")
    }

    fn label(&self) -> String {
        match self.alpha {
            Some(a) => format!("{} alpha={a}", self.mechanism),
            None => "non-private".into(),
        }
    }
}

fn curve(prep: &Prepared, config: &ExperimentConfig, mechanism: Mechanism, alpha: Option<f64>) -> Result<Curve> {
    let schedule = AlphaSchedule::Constant(alpha.unwrap_or(1.0));
    let runs: Vec<(Vec<f64>, Option<f64>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let trace = run_mechanism(mechanism, prep, &schedule, config.zeta_rule, config.t_stop, seed)?;
            Ok((loss_curve(&trace), mer_of(&trace, prep)?))
        })
        .collect::<Result<_>>()?;
    let len = runs[0].0.len();
    let column = |t: usize| runs.iter().map(|r| r.0[t]).collect::<Vec<_>>();
    let mers: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
    Ok(Curve {
        mechanism,
        alpha,
        mean: (0..len).map(|t| mean(&column(t))).collect(),
        std: (0..len).map(|t| variance(&column(t)).sqrt()).collect(),
        finals: column(len - 1),
        misclassification: (!mers.is_empty()).then(|| mean(&mers)),
    })
}

/// Non-private baseline followed by one curve per `alphas` entry for `mechanism`.
pub fn collect_curves(prep: &Prepared, config: &ExperimentConfig, mechanism: Mechanism) -> Result<Vec<Curve>> {
    let mut out = vec![curve(prep, config, Mechanism::None, None)?];
    if mechanism != Mechanism::None {
        for &a in &config.alphas {
            out.push(curve(prep, config, mechanism, Some(a))?);
        }
    }
    Ok(out)
}

/// Spearman correlation between `α` and the final mean loss over the private curves.
pub fn alpha_loss_spearman(curves: &[Curve]) -> Result<f64> {
    let private: Vec<&Curve> = curves.iter().filter(|c| c.alpha.is_some()).collect();
    let a: Vec<f64> = private.iter().map(|c| c.alpha.unwrap()).collect();
    let l: Vec<f64> = private.iter().map(|c| c.final_mean()).collect();
    spearman(&a, &l)
}

/// One-sided rank test that `a` is less dispersed than `b`: Mann–Whitney on
/// absolute deviations from each sample's median. Returns the p-value.
pub fn dispersion_rank_test(a: &[f64], b: &[f64]) -> Result<f64> {
    let dev = |xs: &[f64]| {
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let med = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        xs.iter().map(|x| (x - med).abs()).collect::<Vec<_>>()
    };
    mann_whitney_less(&dev(a), &dev(b))
}

/// Privacy level at which [`select_rho`] compares candidates.
pub const RHO_SELECTION_ALPHA: f64 = 0.3;

/// Picks the `ρ` from `grid` with the smallest seed-averaged final loss of
/// `mechanism` at privacy level `alpha`. Ties keep the earlier entry.
/// Returns the chosen value with the loss of every candidate.
pub fn select_rho(config: &ExperimentConfig, mechanism: Mechanism, grid: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("rho grid is empty".into()));
    }
    let mut losses = Vec::with_capacity(grid.len());
    for &rho in grid {
        let cfg = ExperimentConfig { rho, ..config.clone() };
        let prep = cfg.prepare()?;
        let a = (mechanism != Mechanism::None).then_some(alpha);
        losses.push(curve(&prep, &cfg, mechanism, a)?.final_mean());
    }
    let best = (0..grid.len()).fold(0, |b, i| if losses[i] < losses[b] { i } else { b });
    Ok((grid[best], losses))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceReport {
    pub curves: Vec<Curve>,
    pub csv: PathBuf,
    pub plot: PathBuf,
}

/// Writes `convergence.csv` (`mechanism,alpha,iteration,mean_loss,std_loss`)
/// and `convergence.svg` to the output directory.
pub fn run_convergence_suite(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    let prep = config.prepare()?;
    let curves = collect_curves(&prep, config, config.mechanism)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("mechanism,alpha,iteration,mean_loss,std_loss\n");
    for c in &curves {
        for (t, (m, s)) in c.mean.iter().zip(&c.std).enumerate() {
            csv.push_str(&format!("{},{},{t},{m},{s}\n", c.mechanism, fmt_opt(c.alpha)));
        }
    }
    let csv_path = dir.join("convergence.csv");
    write_text(&csv_path, &csv)?;
    let series: Vec<Series> = curves
        .iter()
        .map(|c| Series { label: c.label(), points: c.mean.iter().enumerate().map(|(t, v)| (t as f64, *v)).collect() })
        .collect();
    let plot = dir.join("convergence.svg");
    line_chart(&plot, "Empirical loss vs iteration", "iteration", "mean empirical loss", &series)?;
    Ok(ConvergenceReport { curves, csv: csv_path, plot })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TradeoffPoint {
    pub alpha: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub misclassification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TradeoffReport {
    pub mechanism: Mechanism,
    pub points: Vec<TradeoffPoint>,
    pub nonprivate_loss: f64,
    pub c6: f64,
    /// `None` when the fit did not converge; the raw points are still reported.
    pub fit: Option<FitResult>,
    pub chosen_alpha: Option<f64>,
    pub spearman: Option<f64>,
    pub csv: PathBuf,
    pub plot: PathBuf,
}

/// Writes `tradeoff.csv` (`alpha,mean_loss,std_loss,misclassification,fitted`),
/// `tradeoff.svg` and `tradeoff_fit.json`.
pub fn run_tradeoff_suite(config: &ExperimentConfig) -> Result<TradeoffReport> {
    if config.alphas.len() < 6 {
        return Err(Error::Config(format!("the tradeoff suite needs at least 6 alphas, got {}", config.alphas.len())));
    }
    if config.mechanism == Mechanism::None {
        return Err(Error::Config("the tradeoff suite needs a private mechanism".into()));
    }
    let prep = config.prepare()?;
    let curves = collect_curves(&prep, config, config.mechanism)?;
    let c6 = config.c6.apply(&curves.iter().map(|c| c.mean.clone()).collect::<Vec<_>>())?;
    let points: Vec<TradeoffPoint> = curves[1..]
        .iter()
        .map(|c| TradeoffPoint {
            alpha: c.alpha.unwrap(),
            mean_loss: c.final_mean(),
            std_loss: *c.std.last().unwrap(),
            misclassification: c.misclassification,
        })
        .collect();
    let alphas: Vec<f64> = points.iter().map(|p| p.alpha).collect();
    let losses: Vec<f64> = points.iter().map(|p| p.mean_loss).collect();
    let fit = match fit_tradeoff(&alphas, &losses, c6) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("tradeoff fit failed, reporting raw points: {e}");
            None
        }
    };
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let chosen_alpha = match fit {
        Some(f) if !f.degenerate => Some(choose_alpha(&f.model(config.omega), lo, hi)?),
        _ => None,
    };

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("alpha,mean_loss,std_loss,misclassification,fitted\n");
    for p in &points {
        let fitted = fit.map(|f| f.model(config.omega).l_acc(p.alpha));
        csv.push_str(&format!("{},{},{},{},{}\n", p.alpha, p.mean_loss, p.std_loss, fmt_opt(p.misclassification), fmt_opt(fitted)));
    }
    let csv_path = dir.join("tradeoff.csv");
    write_text(&csv_path, &csv)?;
    let mut series = vec![Series {
        label: format!("{} measured", config.mechanism),
        points: alphas.iter().copied().zip(losses.iter().copied()).collect(),
    }];
    if let Some(f) = fit {
        let m = f.model(config.omega);
        let grid = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0);
        series.push(Series { label: "fitted L_acc".into(), points: grid.map(|a| (a, m.l_acc(a))).collect() });
    }
    let plot = dir.join("tradeoff.svg");
    line_chart(&plot, "Privacy-accuracy tradeoff", "alpha", "empirical loss at final iteration", &series)?;
    let report = TradeoffReport {
        mechanism: config.mechanism,
        points,
        nonprivate_loss: curves[0].final_mean(),
        c6,
        fit,
        chosen_alpha,
        spearman: alpha_loss_spearman(&curves).ok(),
        csv: csv_path,
        plot,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_text(&dir.join("tradeoff_fit.json"), &json)?;
    Ok(report)
}

/// Reads back a `tradeoff.csv`.
pub fn read_tradeoff_csv(text: &str) -> Result<Vec<TradeoffPoint>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || Error::Parse { line: i + 2, message: "bad tradeoff row".into() };
        let num = |k: usize| row.get(k).ok_or_else(bad)?.parse::<f64>().map_err(|_| bad());
        out.push(TradeoffPoint {
            alpha: num(0)?,
            mean_loss: num(1)?,
            std_loss: num(2)?,
            misclassification: if row.get(3).is_none_or(str::is_empty) { None } else { Some(num(3)?) },
        });
    }
    Ok(out)
}

/// One curve of a `convergence.csv`: `(mechanism, alpha, means, stds)`.
pub type CurveRows = (Mechanism, Option<f64>, Vec<f64>, Vec<f64>);

/// Reads back a `convergence.csv`, one group per curve.
pub fn read_convergence_csv(text: &str) -> Result<Vec<CurveRows>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out: Vec<CurveRows> = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = || Error::Parse { line: i + 2, message: "bad convergence row".into() };
        let mech: Mechanism = row.get(0).ok_or_else(bad)?.parse()?;
        let alpha = match row.get(1).ok_or_else(bad)? {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad())?),
        };
        let t: usize = row.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let m: f64 = row.get(3).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let s: f64 = row.get(4).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if t == 0 {
            out.push((mech, alpha, Vec::new(), Vec::new()));
        }
        let g = out.last_mut().ok_or_else(bad)?;
        if g.0 != mech || g.1 != alpha || g.2.len() != t {
            return Err(bad());
        }
        g.2.push(m);
        g.3.push(s);
    }
    Ok(out)
}
