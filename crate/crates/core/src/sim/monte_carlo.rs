//! Replicated simulation of the WG, PC and ML estimators on one design cell.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dgp::{generate_with_rng, DgpConfig, Design};
use crate::baselines::{iterated_pc_moments, within_group_moments};
use crate::error::{Error, Result};
use crate::estimate::{fit_structured, EmConfig, FitResult, ModelVariant, Structure};
use crate::moments::demean_panel;
use crate::panel::PanelDataset;
use crate::restricted::{concentrate_common_regressors, fit_phi_and_common};
use crate::selection::{select_r1_r2, select_r_trace, SelectionConfig};

/// Two-sided 95% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Wg,
    Pc,
    Mle,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Wg => "wg",
            Estimator::Pc => "pc",
            Estimator::Mle => "mle",
        }
    }

    /// Parses a comma-separated list such as `wg,pc,mle`.
    pub fn parse_list(s: &str) -> Result<Vec<Estimator>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let e: Estimator = part.parse()?;
            if !out.contains(&e) {
                out.push(e);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("no estimators given"));
        }
        Ok(out)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wg" => Ok(Estimator::Wg),
            "pc" => Ok(Estimator::Pc),
            "mle" => Ok(Estimator::Mle),
            _ => Err(Error::invalid(format!(
                "unknown estimator '{s}' (expected wg, pc or mle)"
            ))),
        }
    }
}

/// How replications are scheduled. Results do not depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub dgp: DgpConfig,
    pub n_reps: usize,
    pub estimators: Vec<Estimator>,
    /// Choose factor numbers per replication instead of using the truth.
    pub select: bool,
    pub em: EmConfig,
    pub selection: SelectionConfig,
    pub execution: Execution,
}

impl McConfig {
    pub fn new(dgp: DgpConfig, n_reps: usize) -> Self {
        let mut selection = SelectionConfig::default();
        selection.em.tol_param = 1e-6;
        selection.em.max_iters = 1000;
        Self {
            dgp,
            n_reps,
            estimators: vec![Estimator::Wg, Estimator::Pc, Estimator::Mle],
            select: false,
            em: EmConfig::default(),
            selection,
            execution: Execution::default(),
        }
    }
}

/// Bias and RMSE of one estimator, per coefficient.
#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// First failure message, if any.
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub design: Design,
    pub n: usize,
    pub t: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub error_dist: String,
    pub select: bool,
    pub rows: Vec<EstimatorSummary>,
    /// Share of replications (in percent) with correctly chosen factor numbers.
    pub pct_r_correct: Option<f64>,
    /// MLE 95% interval coverage per coefficient, from trace-form SEs.
    pub coverage: Option<Vec<f64>>,
    pub mean_se: Option<Vec<f64>>,
    pub mle_not_converged: usize,
}

impl McReport {
    pub fn summary(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.estimator == e)
    }

    /// Flat key-value header followed by a one-row table in the layout of
    /// the published tables and a per-coefficient diagnostics table.
    pub fn to_report_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# interfx simulate");
        let _ = writeln!(s, "design={}", self.design);
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "t={}", self.t);
        let _ = writeln!(s, "reps={}", self.n_reps);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "dist={}", self.error_dist);
        let _ = writeln!(s, "select_r={}", if self.select { "on" } else { "off" });
        let _ = writeln!(s, "pct_r_correct={}", fmt_opt(self.pct_r_correct, 1));
        let _ = writeln!(s, "mle_not_converged={}", self.mle_not_converged);
        for row in &self.rows {
            let _ = writeln!(s, "{}_failed={}", row.estimator.label(), row.n_failed);
            if let Some(msg) = &row.first_failure {
                let _ = writeln!(s, "{}_first_failure={}", row.estimator.label(), msg.replace('\n', " "));
            }
        }

        let k = self.rows.first().map_or(0, |r| r.bias.len());
        let _ = writeln!(s, "\n[table]");
        let mut header = vec!["n".to_string(), "t".into(), "pct_r_correct".into()];
        let mut values = vec![
            self.n.to_string(),
            self.t.to_string(),
            fmt_opt(self.pct_r_correct, 1),
        ];
        for row in &self.rows {
            for j in 0..k {
                let tag = format!("{}_beta{}", row.estimator.label(), j + 1);
                header.push(format!("{tag}_bias"));
                header.push(format!("{tag}_rmse"));
                values.push(format!("{:.4}", row.bias[j]));
                values.push(format!("{:.4}", row.rmse[j]));
            }
        }
        let _ = writeln!(s, "{}", header.join(","));
        let _ = writeln!(s, "{}", values.join(","));

        let _ = writeln!(s, "\n[diagnostics]");
        let _ = writeln!(s, "estimator,coef,bias,rmse,n_ok,coverage95,mean_se");
        for row in &self.rows {
            for j in 0..k {
                let (cov, se) = if row.estimator == Estimator::Mle {
                    (
                        self.coverage.as_ref().map(|c| c[j]),
                        self.mean_se.as_ref().map(|m| m[j]),
                    )
                } else {
                    (None, None)
                };
                let _ = writeln!(
                    s,
                    "{},beta{},{:.6e},{:.6e},{},{},{}",
                    row.estimator.label(),
                    j + 1,
                    row.bias[j],
                    row.rmse[j],
                    row.n_ok,
                    fmt_opt(cov, 4),
                    cov.and(se).map_or("NA".into(), |v| format!("{v:.6e}")),
                );
            }
        }
        s
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.digits$}"))
}

/// Outcome of one replication.
#[derive(Debug, Clone)]
struct RepRecord {
    estimates: Vec<std::result::Result<DVector<f64>, String>>,
    mle_se: Option<DVector<f64>>,
    mle_converged: bool,
    correct: Option<bool>,
}

/// Runs `cfg.n_reps` replications. Replication j draws from the ChaCha
/// stream j of the generator seeded with `cfg.dgp.seed`, and the records are
/// reduced in replication order, so the report does not depend on the
/// schedule or the thread count.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McReport> {
    if cfg.n_reps == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if cfg.estimators.is_empty() {
        return Err(Error::invalid("no estimators requested"));
    }
    cfg.dgp.validate()?;
    cfg.em.validate()?;
    let records: Vec<RepRecord> = run_reps(cfg)?;
    Ok(reduce(cfg, &records))
}

fn run_reps(cfg: &McConfig) -> Result<Vec<RepRecord>> {
    let one = |j: usize| run_rep(cfg, j as u64);
    match cfg.execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..cfg.n_reps).into_par_iter().map(one).collect()
        }
        _ => (0..cfg.n_reps).map(one).collect(),
    }
}

fn run_rep(cfg: &McConfig, j: u64) -> Result<RepRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.dgp.seed);
    rng.set_stream(j);
    let (data, _) = generate_with_rng(&cfg.dgp, &mut rng)?;
    let design = cfg.dgp.design;

    let choice = if cfg.select {
        match choose_factors(&data, design, &cfg.selection) {
            Ok(c) => Some(c),
            Err(e) => {
                let msg = format!("factor selection failed: {e}");
                return Ok(RepRecord {
                    estimates: cfg.estimators.iter().map(|_| Err(msg.clone())).collect(),
                    mle_se: None,
                    mle_converged: false,
                    correct: Some(false),
                });
            }
        }
    } else {
        None
    };
    let choice_ref = choice.as_ref();
    let counts = choice.clone().unwrap_or_else(|| FactorChoice::truth(design));

    let mut estimates = Vec::with_capacity(cfg.estimators.len());
    let mut mle_se = None;
    let mut mle_converged = false;
    for est in &cfg.estimators {
        let res = match est {
            Estimator::Wg => within_group_moments(&demean_panel(&data)).map(|b| b.beta_hat),
            Estimator::Pc => iterated_pc_moments(
                &demean_panel(&data),
                counts.pc_factors(design),
                cfg.em.pc_max_iters,
                cfg.em.pc_tol,
            )
            .map(|b| b.beta_hat),
            Estimator::Mle => mle_fit(&data, design, &counts, &cfg.em).map(|fit| {
                mle_converged = fit.converged;
                mle_se = Some(fit.se_beta.clone());
                fit.theta_hat.beta
            }),
        };
        estimates.push(res.map_err(|e| e.to_string()));
    }
    Ok(RepRecord {
        estimates,
        mle_se,
        mle_converged,
        correct: choice_ref.map(|c| c.is_correct(design)),
    })
}

/// Factor numbers used for one replication.
#[derive(Debug, Clone, PartialEq, Eq)]
struct FactorChoice {
    /// Total number of factors, observed ones included.
    r: usize,
    /// Outcome factors found in the second step (zero-restriction designs).
    r1: usize,
}

impl FactorChoice {
    fn truth(design: Design) -> Self {
        Self {
            r: design.total_factors(),
            r1: design.outcome_factors(),
        }
    }

    fn is_correct(&self, design: Design) -> bool {
        match design {
            Design::Dgp2 => self.r == 2 && self.r1 == 1,
            _ => self.r == design.total_factors(),
        }
    }

    fn pc_factors(&self, design: Design) -> usize {
        match design {
            Design::Dgp2 => self.r1,
            _ => self.r,
        }
    }
}

fn choose_factors(data: &PanelDataset, design: Design, cfg: &SelectionConfig) -> Result<FactorChoice> {
    match design {
        Design::Dgp1 | Design::Dgp2 => {
            let s = select_r1_r2(data, cfg)?;
            Ok(FactorChoice { r: s.r, r1: s.r1 })
        }
        // Observed loadings and common regressors count towards the total.
        Design::Dgp3 | Design::Dgp4 => {
            let s = select_r_trace(&demean_panel(data), cfg)?;
            Ok(FactorChoice { r: s.r, r1: s.r })
        }
    }
}

/// Routes to the likelihood matching the design: the basic model when all
/// factors reach the outcome, zero restrictions otherwise, and the observed
/// loading models when Φ (and D) are available.
fn mle_fit(data: &PanelDataset, design: Design, c: &FactorChoice, em: &EmConfig) -> Result<FitResult> {
    match design {
        Design::Dgp1 | Design::Dgp2 => {
            let structure = if c.r1 >= c.r {
                Structure::basic(c.r)
            } else {
                Structure {
                    variant: ModelVariant::ZeroRestrictions { r1: c.r1 },
                    r: c.r,
                    phi: None,
                }
            };
            fit_structured(&demean_panel(data), &structure, em, None)
        }
        Design::Dgp3 => {
            let phi = data.phi_observed().cloned();
            let r2 = phi.as_ref().map_or(0, |p| p.ncols());
            let structure = Structure {
                variant: ModelVariant::ObservedPhi { r1: c.r.saturating_sub(r2) },
                r: c.r.saturating_sub(r2) + r2,
                phi,
            };
            fit_structured(&demean_panel(data), &structure, em, None)
        }
        Design::Dgp4 => {
            let r2 = data.phi_observed().map_or(0, |p| p.ncols());
            // The constant column of D is not a factor.
            let r3 = data.d_observed().map_or(0, |d| d.ncols()).saturating_sub(1);
            let r1 = c.r.saturating_sub(r2 + r3);
            if r1 == 0 {
                let conc = concentrate_common_regressors(data)?;
                let structure = Structure {
                    variant: ModelVariant::ObservedPhi { r1: 0 },
                    r: r2,
                    phi: data.phi_observed().cloned(),
                };
                return fit_structured(&demean_panel(&conc), &structure, em, data.d_observed());
            }
            fit_phi_and_common(data, r1, em)
        }
    }
}

fn reduce(cfg: &McConfig, records: &[RepRecord]) -> McReport {
    let k = cfg.dgp.beta_true.len();
    let beta = &cfg.dgp.beta_true;
    let mut rows = Vec::new();
    for (idx, est) in cfg.estimators.iter().enumerate() {
        let ok: Vec<&DVector<f64>> = records
            .iter()
            .filter_map(|r| r.estimates[idx].as_ref().ok())
            .collect();
        let first_failure = records
            .iter()
            .find_map(|r| r.estimates[idx].as_ref().err().cloned());
        let n_ok = ok.len();
        let mut bias = vec![f64::NAN; k];
        let mut rmse = vec![f64::NAN; k];
        if n_ok > 0 {
            for j in 0..k {
                let errs: Vec<f64> = ok.iter().map(|b| b[j] - beta[j]).collect();
                let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
                bias[j] = pairwise_sum(&errs) / n_ok as f64;
                rmse[j] = (pairwise_sum(&sq) / n_ok as f64).sqrt();
            }
        }
        rows.push(EstimatorSummary {
            estimator: *est,
            bias,
            rmse,
            n_ok,
            n_failed: records.len() - n_ok,
            first_failure,
        });
    }

    let pct_r_correct = cfg.select.then(|| {
        let hits = records.iter().filter(|r| r.correct == Some(true)).count();
        100.0 * hits as f64 / records.len() as f64
    });

    let mle_idx = cfg.estimators.iter().position(|e| *e == Estimator::Mle);
    let (coverage, mean_se, mle_not_converged) = match mle_idx {
        Some(idx) => {
            let pairs: Vec<(&DVector<f64>, &DVector<f64>)> = records
                .iter()
                .filter_map(|r| match (&r.estimates[idx], &r.mle_se) {
                    (Ok(b), Some(se)) if se.iter().all(|v| v.is_finite()) => Some((b, se)),
                    _ => None,
                })
                .collect();
            let not_conv = records
                .iter()
                .filter(|r| r.estimates[idx].is_ok() && !r.mle_converged)
                .count();
            if pairs.is_empty() {
                (None, None, not_conv)
            } else {
                let m = pairs.len() as f64;
                let cov = (0..k)
                    .map(|j| {
                        let hits: Vec<f64> = pairs
                            .iter()
                            .map(|(b, se)| ((b[j] - beta[j]).abs() <= Z_975 * se[j]) as u8 as f64)
                            .collect();
                        pairwise_sum(&hits) / m
                    })
                    .collect();
                let se = (0..k)
                    .map(|j| pairwise_sum(&pairs.iter().map(|(_, se)| se[j]).collect::<Vec<_>>()) / m)
                    .collect();
                (Some(cov), Some(se), not_conv)
            }
        }
        None => (None, None, 0),
    };

    McReport {
        design: cfg.dgp.design,
        n: cfg.dgp.n,
        t: cfg.dgp.t,
        n_reps: cfg.n_reps,
        seed: cfg.dgp.seed,
        error_dist: cfg.dgp.error_dist.to_string(),
        select: cfg.select,
        rows,
        pct_r_correct,
        coverage,
        mean_se,
        mle_not_converged,
    }
}

/// Pairwise summation in index order.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}
