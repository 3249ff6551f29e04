use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use dp_admm::analysis::bounds::{bound_dvp, bound_nonprivate, bound_pvp_full, bound_pvp_intermediate, dvp_terms, pvp_full_terms};
use dp_admm::analysis::{
    audit_privacy, check_lemma11, check_lemma12, check_lemma7, check_lemma8, AuditConfig, AuditInstance, BoundInputs, LemmaInstance,
};
use dp_admm::experiments::suites::RHO_SELECTION_ALPHA;
use dp_admm::experiments::{run_convergence_suite, run_experiment, run_tradeoff_suite, select_rho, ExperimentConfig};
use dp_admm::model::{Logistic, L2};
use dp_admm::trace::Mechanism;

#[derive(Parser)]
#[command(name = "dp-admm", version, about = "Differentially private consensus ADMM: simulator, bound calculators and privacy auditor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mechanism per seed and write trace CSVs
    Run(ConfigArgs),
    /// Loss-vs-iteration curves for every alpha in the config
    Convergence(ConfigArgs),
    /// Privacy/accuracy tradeoff sweep, curve fit and alpha selection
    Tradeoff {
        #[command(flatten)]
        config: ConfigArgs,
        /// Pick rho from this comma-separated grid before the sweep
        #[arg(long, value_delimiter = ',')]
        rho_grid: Vec<f64>,
    },
    /// Empirical privacy audit of one perturbed update (d = 1)
    Audit(AuditArgs),
    /// Sample-size bounds for the given inputs
    Bounds(BoundArgs),
    /// Monte Carlo checks of the noise and objective-perturbation lemmas
    Lemmacheck(LemmaArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed list with this single seed
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the config's output directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, default_value = "dvp")]
    mechanism: Mechanism,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    runs: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 0.2)]
    slack: f64,
    /// Index of the point replaced in the neighboring dataset
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Audit against an identical dataset instead of a neighbor
    #[arg(long)]
    control: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 1.0)]
    norm_f0: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha_acc: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    c_r: f64,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Neighbor count N_p
    #[arg(long, default_value_t = 2)]
    n_p: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.25)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Constant of the third full-PVP term; defaults to c_r
    #[arg(long)]
    c_b: Option<f64>,
    /// Smallest per-round privacy level
    #[arg(long, default_value_t = 0.1)]
    alpha_min: f64,
}

#[derive(Args)]
struct LemmaArgs {
    /// Comma-separated subset of 7, 8, 11, 12
    #[arg(long, value_delimiter = ',', default_value = "7,8,11,12")]
    which: Vec<u32>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Gamma shape for the tail-coverage check (7)
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Gamma scale for the tail-coverage check (7)
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn emit(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            for s in run_experiment(&args.load()?)? {
                emit(&s)?;
            }
        }
        Command::Convergence(args) => {
            let rep = run_convergence_suite(&args.load()?)?;
            for c in &rep.curves {
                emit(&json!({ "name": "convergence", "mechanism": c.mechanism, "alpha": c.alpha, "final_loss": c.final_mean() }))?;
            }
            emit(&json!({ "name": "outputs", "csv": rep.csv, "plot": rep.plot }))?;
        }
        Command::Tradeoff { config, rho_grid } => {
            let mut cfg = config.load()?;
            if !rho_grid.is_empty() {
                let (rho, losses) = select_rho(&cfg, cfg.mechanism, &rho_grid, RHO_SELECTION_ALPHA)?;
                emit(&json!({ "name": "rho_selection", "alpha": RHO_SELECTION_ALPHA, "grid": rho_grid, "losses": losses, "rho": rho }))?;
                cfg.rho = rho;
            }
            let rep = run_tradeoff_suite(&cfg)?;
            emit(&json!({ "name": "tradeoff", "report": rep }))?;
        }
        Command::Audit(a) => {
            let inst = AuditInstance::default_scalar(a.seed)?;
            let replacement = if a.control {
                inst.dataset.points.get(a.index).cloned().context("index out of range")?
            } else {
                inst.extreme_replacement(a.index)?
            };
            let cfg = AuditConfig { runs: a.runs, bins: a.bins, slack: a.slack };
            let mut all_pass = true;
            for alpha in a.alpha {
                let r = audit_privacy(a.mechanism, &inst, &Logistic, &L2, a.index, replacement.clone(), alpha, &cfg, a.seed)?;
                all_pass &= r.pass;
                emit(&json!({
                    "name": format!("audit_{}{}", a.mechanism, if a.control { "_control" } else { "" }),
                    "alpha": alpha,
                    "bound": alpha + a.slack,
                    "epsilon_hat": r.epsilon_hat,
                    "pass": r.pass,
                    "runs": r.runs,
                    "merged_bins": r.merged,
                }))?;
            }
            return Ok(all_pass);
        }
        Command::Bounds(b) => {
            let x = BoundInputs {
                norm_f0: b.norm_f0,
                alpha_acc: b.alpha_acc,
                delta: b.delta,
                c_r: b.c_r,
                rho: b.rho,
                eta: b.eta,
                n_p: b.n_p,
                d: b.d,
                c1: b.c1,
                beta: b.beta,
                c_b: b.c_b,
            };
            let a = b.alpha_min;
            emit(&json!({ "name": "nonprivate", "bound": bound_nonprivate(&x)? }))?;
            emit(&json!({ "name": "dvp", "bound": bound_dvp(&x, a)?, "terms": dvp_terms(&x, a)? }))?;
            emit(&json!({ "name": "pvp_intermediate", "bound": bound_pvp_intermediate(&x, a)? }))?;
            emit(&json!({ "name": "pvp_full", "bound": bound_pvp_full(&x, a)?, "terms": pvp_full_terms(&x, a)? }))?;
        }
        Command::Lemmacheck(l) => {
            let inst = LemmaInstance::default_small(l.seed)?;
            let mut all_pass = true;
            for w in l.which {
                let r = match w {
                    7 => check_lemma7(l.k, l.theta, l.delta, l.trials, l.seed)?,
                    8 => check_lemma8(&inst, &Logistic, &L2, l.alpha, l.delta, l.trials, l.seed)?,
                    11 => check_lemma11(&inst, &Logistic, &L2, l.alpha, l.delta, l.trials, l.seed)?,
                    12 => check_lemma12(&inst, &Logistic, &L2, l.alpha, l.delta, l.trials, l.seed)?,
                    other => bail!("no checker for lemma {other}; choose from 7, 8, 11, 12"),
                };
                all_pass &= r.pass;
                emit(&r)?;
            }
            return Ok(all_pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
