use std::fmt::Write as _;

use interfx::inference::covariance_moment_form;
use interfx::selection::{select_r1_r2, select_r_trace, SelectionConfig};
use interfx::{demean_panel, EmConfig, FitResult, Init, PanelDataset, RestrictedSpec};
use nalgebra::{DMatrix, DVector};

use crate::report::{criterion_table, emit, read_panel, read_side};
use crate::{Count, EstimateArgs, Failure, InitMethod, Model, SeMethod};

/// Factor numbers used for the fit, with the selection criteria when any
/// of them was chosen automatically.
struct Counts {
    r: usize,
    r1: usize,
    ic: Option<Vec<f64>>,
    step2_ic: Option<Vec<f64>>,
}

pub fn run(args: &EstimateArgs) -> Result<(), Failure> {
    check_flags(args)?;
    let mut data = read_panel(&args.panel)?;
    let phi = args.phi.as_deref().map(read_side).transpose()?;
    let common = args.common.as_deref().map(read_side).transpose()?;
    if let Some(phi) = &phi {
        data = data.with_phi(phi.clone())?;
    }
    if let Some(d) = &common {
        data = data.with_common(d.clone())?;
    }

    let em = EmConfig {
        tol_param: args.tol,
        max_iters: args.max_iters,
        init: match args.init {
            InitMethod::Pc => Init::IteratedPc,
            InitMethod::Random => Init::Random(args.seed),
        },
        ..EmConfig::default()
    };
    em.validate()?;

    let counts = resolve_counts(args, &data, &em)?;
    let fit = match args.model {
        Model::Basic => interfx::fit_mle(&data, counts.r, &em)?,
        Model::Zero => {
            RestrictedSpec::ZeroRestrictions {
                r1: counts.r1,
                r2: counts.r - counts.r1,
            }
            .fit(&data, &em)?
        }
        Model::Phi => interfx::fit_observed_phi(&data, counts.r1, &em)?,
        Model::PhiCommon => interfx::fit_phi_and_common(&data, counts.r1, &em)?,
    };

    let se = match args.se {
        SeMethod::Trace => fit.se_beta.clone(),
        SeMethod::Moment => covariance_moment_form(&fit.theta_hat, data.n_periods())?.se_beta,
    };
    let text = render(args, &data, &counts, &fit, &se);
    emit(&text, args.out.as_deref())?;
    eprintln!(
        "{} after {} iterations, loglik {:.6}, FOC residual {:.2e}",
        if fit.converged { "converged" } else { "not converged" },
        fit.n_iters,
        fit.loglik(),
        fit.foc_residual
    );
    if fit.converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn check_flags(args: &EstimateArgs) -> Result<(), Failure> {
    let reject = |flag: &str| {
        Err(Failure::Input(format!(
            "{flag} is not used by --model {}",
            model_label(args.model)
        )))
    };
    match args.model {
        Model::Basic => {
            if args.r1.is_some() || args.r2.is_some() {
                return reject("--r1/--r2");
            }
        }
        _ if args.r.is_some() => return reject("--r"),
        Model::Zero => {}
        Model::Phi | Model::PhiCommon => {
            if args.r2.is_some() {
                return reject("--r2 (the observed loadings fix it)");
            }
        }
    }
    match args.model {
        Model::Phi if args.phi.is_none() => {
            return Err(Failure::Input(
                "--model phi requires observed loadings: pass --phi <path>".into(),
            ))
        }
        Model::PhiCommon if args.common.is_none() => {
            return Err(Failure::Input(
                "--model phi-common requires common regressors: pass --common <path>".into(),
            ))
        }
        Model::Basic | Model::Zero if args.phi.is_some() => return reject("--phi"),
        Model::Basic | Model::Zero | Model::Phi if args.common.is_some() => return reject("--common"),
        _ => {}
    }
    if args.se == SeMethod::Moment && args.model != Model::Basic {
        return Err(Failure::Input(
            "--se moment is only available for --model basic".into(),
        ));
    }
    Ok(())
}

fn model_label(m: Model) -> &'static str {
    match m {
        Model::Basic => "basic",
        Model::Zero => "zero",
        Model::Phi => "phi",
        Model::PhiCommon => "phi-common",
    }
}

fn selection_config(args: &EstimateArgs, em: &EmConfig) -> SelectionConfig {
    SelectionConfig {
        r_max: args.r_max,
        em: em.clone(),
        ..SelectionConfig::default()
    }
}

fn resolve_counts(args: &EstimateArgs, data: &PanelDataset, em: &EmConfig) -> Result<Counts, Failure> {
    let fixed = |r: usize, r1: usize| Counts {
        r,
        r1,
        ic: None,
        step2_ic: None,
    };
    match args.model {
        Model::Basic => match args.r.unwrap_or(Count::Auto) {
            Count::Fixed(r) => Ok(fixed(r, r)),
            Count::Auto => {
                let s = select_r_trace(&demean_panel(data), &selection_config(args, em))?;
                Ok(Counts {
                    r: s.r,
                    r1: s.r,
                    ic: Some(s.ic),
                    step2_ic: None,
                })
            }
        },
        Model::Zero => {
            let (r1, r2) = (args.r1.unwrap_or(Count::Auto), args.r2.unwrap_or(Count::Auto));
            let counts = match (r1, r2) {
                (Count::Fixed(a), Count::Fixed(b)) => fixed(a + b, a),
                _ => {
                    let s = select_r1_r2(data, &selection_config(args, em))?;
                    let (a, b) = match (r1, r2) {
                        (Count::Fixed(a), _) => (a, s.r.saturating_sub(a)),
                        (_, Count::Fixed(b)) => (s.r.saturating_sub(b), b),
                        _ => (s.r1, s.r2),
                    };
                    Counts {
                        r: a + b,
                        r1: a,
                        ic: Some(s.ic),
                        step2_ic: Some(s.step2_ic),
                    }
                }
            };
            if counts.r1 == 0 {
                return Err(Failure::Input(
                    "zero-restrictions model needs at least one outcome factor (r1 >= 1)".into(),
                ));
            }
            Ok(counts)
        }
        Model::Phi | Model::PhiCommon => {
            let r2 = data.phi_observed().map_or(0, |p| p.ncols());
            let r3 = data.d_observed().map_or(0, non_constant_columns);
            match args.r1.unwrap_or(Count::Auto) {
                Count::Fixed(r1) => Ok(fixed(r1 + r2, r1)),
                Count::Auto => {
                    // Observed loadings and non-constant common regressors
                    // count towards the selected total.
                    let s = select_r_trace(&demean_panel(data), &selection_config(args, em))?;
                    let r1 = s.r.saturating_sub(r2 + r3);
                    Ok(Counts {
                        r: r1 + r2,
                        r1,
                        ic: Some(s.ic),
                        step2_ic: None,
                    })
                }
            }
        }
    }
}

fn non_constant_columns(d: &DMatrix<f64>) -> usize {
    d.column_iter()
        .filter(|c| {
            let first = c[0];
            c.iter().any(|v| (v - first).abs() > 1e-12 * first.abs().max(1.0))
        })
        .count()
}

fn render(
    args: &EstimateArgs,
    data: &PanelDataset,
    counts: &Counts,
    fit: &FitResult,
    se: &DVector<f64>,
) -> String {
    let mut s = String::from("# interfx estimate\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("model", model_label(args.model).into());
    kv("n", data.n_units().to_string());
    kv("t", data.n_periods().to_string());
    kv("k", data.n_regressors().to_string());
    kv("r", counts.r.to_string());
    kv("r1", counts.r1.to_string());
    kv("r2", (counts.r - counts.r1).to_string());
    if let Some(d) = data.d_observed() {
        kv("r3", d.ncols().to_string());
    }
    kv("r_selection", if counts.ic.is_some() { "auto" } else { "fixed" }.into());
    kv("converged", fit.converged.to_string());
    kv("iterations", fit.n_iters.to_string());
    kv("loglik", format!("{:e}", fit.loglik()));
    kv("foc_residual", format!("{:e}", fit.foc_residual));
    kv("foc_beta", format!("{:e}", fit.foc.beta));
    kv("foc_loadings", format!("{:e}", fit.foc.loadings));
    kv("foc_moment", format!("{:e}", fit.foc.moment));
    kv("foc_sigma", format!("{:e}", fit.foc.sigma));
    kv("foc_restricted", format!("{:e}", fit.foc.restricted));
    kv(
        "se_method",
        match args.se {
            SeMethod::Trace => "trace",
            SeMethod::Moment => "moment",
        }
        .into(),
    );
    kv("tol", format!("{:e}", args.tol));
    kv("max_iters", args.max_iters.to_string());
    kv(
        "init",
        match args.init {
            InitMethod::Pc => "pc".into(),
            InitMethod::Random => format!("random:{}", args.seed),
        },
    );

    s += "\n[beta]\ncoef,estimate,se\n";
    for (j, b) in fit.beta_hat().iter().enumerate() {
        let _ = writeln!(s, "beta{},{b:e},{:e}", j + 1, se[j]);
    }
    if let Some(ic) = &counts.ic {
        s += &criterion_table("ic", ic);
    }
    if let Some(ic) = &counts.step2_ic {
        s += &criterion_table("step2_ic", ic);
    }
    if !fit.warnings.is_empty() {
        s += "\n[warnings]\n";
        for w in &fit.warnings {
            let _ = writeln!(s, "{}", w.replace('\n', " "));
        }
    }
    s
}
