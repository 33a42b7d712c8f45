//! Subcommands other than `suite`. Each returns a JSON document.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Subcommand, ValueEnum};
use hamrearr_core::flow::{
    flow, pullback, volume_check, FlowSpec, GridField, Hamiltonian, Method,
};
use hamrearr_core::functional::{
    alpha_curves, family_l1_norm_bound, l1_lower_bound, lipschitz_report, minkowski_functional, ri_norm,
    ri_norm_axiom_report, Mode, SupportFamily,
};
use hamrearr_core::hessian::{counterexample_map, p_report, DEFAULT_DET_THRESHOLD};
use hamrearr_core::io::{parse_family, parse_functions, parse_grid_field, FunctionFile};
use hamrearr_core::measure::{equidistributed, DiscreteFunction};
use hamrearr_core::quadratic::{symplectic_defect, QuadraticForm};
use hamrearr_core::rearrange::{
    abs_sup_bound_check, chebyshev_lower, katok_transport, product_abs_bound_check, split_to_equal_mass,
    sup_pairing,
};
use serde_json::{json, Value};

use crate::report::{read_file, CliError};

const DEFAULT_TOL: f64 = 1e-9;
const DEFAULT_MAX_CELLS: usize = 1 << 16;

fn core(context: &str) -> impl FnOnce(hamrearr_core::Error) -> CliError + '_ {
    move |source| CliError::Core { context: context.to_string(), source }
}

fn load_functions(path: &Path) -> Result<FunctionFile, CliError> {
    parse_functions(&read_file(path)?).map_err(core(&path.display().to_string()))
}

fn named<'a>(file: &'a FunctionFile, name: &str) -> Result<&'a DiscreteFunction, CliError> {
    file.get(name).ok_or_else(|| CliError::Usage(format!("no function named `{name}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RearrangeOp {
    /// Decreasing rearrangement of `--phi`.
    Profile,
    /// Whether `--phi` and `--psi` are equidistributed.
    Equidistributed,
    /// Supremum of ∫φψ over rearrangements of `--phi`, with a witness.
    Sup,
    /// ∫φψ ≥ ⨍φ∫ψ for similarly ordered `--phi`, `--psi`.
    Chebyshev,
    /// sup ∫|φ|ψ against its three-term bound.
    AbsSup,
    /// sup ∫|fξ| ≤ 4 sup|∫fξ| + 3⨍|f|∫|ξ|.
    ProductAbs,
    /// Level-set transport from `--phi` to `--psi`.
    Transport,
}

#[derive(Debug, Args)]
pub struct RearrangeArgs {
    #[arg(value_enum)]
    pub op: RearrangeOp,
    /// Function file (`masses:` header, `name: values` lines).
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long)]
    pub phi: String,
    #[arg(long)]
    pub psi: Option<String>,
    /// ε for `transport`.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Cell limit when refining to equal masses.
    #[arg(long, default_value_t = DEFAULT_MAX_CELLS)]
    pub max_cells: usize,
}

pub fn rearrange(args: &RearrangeArgs) -> Result<Value, CliError> {
    let file = load_functions(&args.file)?;
    let phi = named(&file, &args.phi)?;
    let inputs = json!({ "file": args.file, "phi": args.phi, "psi": args.psi });
    let op = args.op.to_possible_value().expect("named variant").get_name().to_string();
    if args.op == RearrangeOp::Profile {
        let profile = phi.decreasing_rearrangement();
        let steps: Vec<Value> =
            profile.breakpoints.iter().map(|(v, s)| json!({ "value": v, "cumulative_mass": s })).collect();
        return Ok(json!({ "op": op, "inputs": inputs, "value": steps }));
    }
    let psi_name = args.psi.as_deref().ok_or_else(|| CliError::Usage(format!("`{op}` needs --psi")))?;
    let psi = named(&file, psi_name)?;
    if args.op == RearrangeOp::Equidistributed {
        return Ok(json!({ "op": op, "inputs": inputs, "value": equidistributed(phi, psi) }));
    }
    let refined = split_to_equal_mass(&[phi.clone(), psi.clone()], args.max_cells).map_err(core("refinement"))?;
    let (phi, psi) = (&refined[0], &refined[1]);
    let bound = |r: hamrearr_core::rearrange::BoundReport| {
        json!({ "op": op, "inputs": inputs, "value": r.lhs, "bound": r.rhs, "holds": r.holds, "tolerance": args.tol })
    };
    Ok(match args.op {
        RearrangeOp::Sup => {
            let s = sup_pairing(phi, psi).map_err(core("sup"))?;
            json!({ "op": op, "inputs": inputs, "value": s.value, "witness": s.witness, "cells": psi.len() })
        }
        RearrangeOp::Chebyshev => bound(chebyshev_lower(phi, psi, args.tol).map_err(core("chebyshev"))?),
        RearrangeOp::AbsSup => bound(abs_sup_bound_check(phi, psi, args.tol).map_err(core("abs-sup"))?),
        RearrangeOp::ProductAbs => bound(product_abs_bound_check(phi, psi, args.tol).map_err(core("product-abs"))?),
        RearrangeOp::Transport => {
            let plan = katok_transport(phi, psi, args.epsilon).map_err(core("transport"))?;
            json!({
                "op": op,
                "inputs": inputs,
                "value": plan.error,
                "bound": plan.bound,
                "holds": plan.error < plan.bound,
                "witness": plan,
                "tolerance": args.epsilon,
            })
        }
        RearrangeOp::Profile | RearrangeOp::Equidistributed => unreachable!("handled above"),
    })
}

#[derive(Debug, Subcommand)]
pub enum FunctionalOp {
    /// p(ξ) = max over pairs of a + ∫fξ.
    Eval {
        #[command(flatten)]
        common: FamilyArgs,
        #[arg(long)]
        xi: String,
    },
    /// L1 lower bound q(ξ) ≥ a₀ + b∫|ξ| and the α-curve constants.
    Bound {
        #[command(flatten)]
        common: FamilyArgs,
        #[arg(long)]
        xi: String,
        #[arg(long, default_value_t = 1e-12)]
        zero_tol: f64,
    },
    /// Minkowski functional of the sublevel set {p < c}.
    Minkowski {
        #[command(flatten)]
        common: FamilyArgs,
        #[arg(long)]
        xi: String,
        #[arg(long)]
        level: f64,
    },
    /// Rearrangement-invariant norm sup ∫|fζ|.
    Rinorm {
        #[command(flatten)]
        common: FamilyArgs,
        #[arg(long)]
        xi: String,
    },
    /// Randomized norm-axiom report.
    Axioms {
        #[command(flatten)]
        common: FamilyArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Randomized Lipschitz report on the sup-norm ball of radius R.
    Lipschitz {
        #[command(flatten)]
        common: FamilyArgs,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    /// Family file: a function file plus `pair: a name` lines.
    #[arg(long)]
    pub family: PathBuf,
    /// Evaluate each f as given rather than over its rearrangements.
    #[arg(long)]
    pub fixed: bool,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

fn load_family(args: &FamilyArgs) -> Result<(FunctionFile, SupportFamily), CliError> {
    parse_family(&read_file(&args.family)?, !args.fixed).map_err(core(&args.family.display().to_string()))
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn functional(op: &FunctionalOp, seed: u64) -> Result<Value, CliError> {
    Ok(match op {
        FunctionalOp::Eval { common, xi } => {
            let (file, family) = load_family(common)?;
            let xi_f = named(&file, xi)?;
            let mode = if common.fixed { Mode::Fixed } else { Mode::OverRearrangements };
            let value = family.evaluate(xi_f, mode).map_err(core("evaluate"))?;
            json!({ "op": "eval", "xi": xi, "mode": mode, "value": value })
        }
        FunctionalOp::Bound { common, xi, zero_tol } => {
            let (file, family) = load_family(common)?;
            let xi_f = named(&file, xi)?;
            let report = l1_lower_bound(&family, xi_f, *zero_tol, common.tol).map_err(core("bound"))?;
            let curves: Vec<Value> = family
                .pairs()
                .iter()
                .map(|p| if p.f.is_constant() { Value::Null } else { to_json(&alpha_curves(&p.f)) })
                .collect();
            let norm = family_l1_norm_bound(&family, None, common.tol).map_err(core("l1 norm"))?;
            json!({ "op": "bound", "xi": xi, "report": to_json(&report), "alpha_curves": curves,
                    "family_l1": to_json(&norm) })
        }
        FunctionalOp::Minkowski { common, xi, level } => {
            let (file, family) = load_family(common)?;
            let value = minkowski_functional(&family, *level, named(&file, xi)?).map_err(core("minkowski"))?;
            json!({ "op": "minkowski", "xi": xi, "level": level, "value": value })
        }
        FunctionalOp::Rinorm { common, xi } => {
            let (file, family) = load_family(common)?;
            let value = ri_norm(&family, named(&file, xi)?).map_err(core("rinorm"))?;
            json!({ "op": "rinorm", "xi": xi, "value": value })
        }
        FunctionalOp::Axioms { common, trials } => {
            let (_, family) = load_family(common)?;
            let report = ri_norm_axiom_report(&family, *trials, seed, common.tol).map_err(core("axioms"))?;
            json!({ "op": "axioms", "seed": seed, "report": to_json(&report) })
        }
        FunctionalOp::Lipschitz { common, radius, trials } => {
            let (_, family) = load_family(common)?;
            let report = lipschitz_report(&family, *radius, *trials, seed, common.tol).map_err(core("lipschitz"))?;
            json!({ "op": "lipschitz", "seed": seed, "report": to_json(&report) })
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Leapfrog,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// A grid field file, or `quad:q1,...,qn` for Σ q_ν x_ν y_ν.
    #[arg(long)]
    pub hamiltonian: String,
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Leapfrog)]
    pub method: MethodArg,
    /// Sample the Jacobian determinant at this many points of the unit cube.
    #[arg(long)]
    pub check_volume: Option<usize>,
    /// Points to map, as comma-separated coordinates; repeatable.
    #[arg(long = "point")]
    pub points: Vec<String>,
    /// Pull this grid field back by the flow and report integrals.
    #[arg(long)]
    pub field: Option<PathBuf>,
}

fn parse_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("invalid number `{t}`"))))
        .collect()
}

fn load_field(path: &Path) -> Result<GridField, CliError> {
    parse_grid_field(&read_file(path)?).map_err(core(&path.display().to_string()))
}

pub fn flow_command(args: &FlowArgs) -> Result<Value, CliError> {
    let hamiltonian = match args.hamiltonian.strip_prefix("quad:") {
        Some(list) => Hamiltonian::Quadratic(QuadraticForm::diagonal_type(&parse_list(list)?)),
        None => Hamiltonian::Grid(Arc::new(load_field(Path::new(&args.hamiltonian))?)),
    };
    let method = match args.method {
        MethodArg::Exact => Method::ExactLinear,
        MethodArg::Leapfrog => Method::Leapfrog,
    };
    let dim = hamiltonian.dim();
    let spec = FlowSpec { hamiltonian, duration: args.duration, steps: args.steps, method };
    let g = flow(&spec).map_err(core("flow"))?;
    let mut out = json!({
        "method": method,
        "dim": dim,
        "duration": args.duration,
        "steps": args.steps,
    });
    if let Some(m) = g.matrix() {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        out["matrix"] = json!(rows);
        out["symplectic_defect"] = json!(symplectic_defect(&m));
    }
    if let Some(samples) = args.check_volume {
        out["volume"] = serde_json::to_value(volume_check(g.as_ref(), samples)).expect("serializes");
    }
    let mut images = Vec::new();
    for p in &args.points {
        let z = parse_list(p)?;
        if z.len() != dim {
            return Err(CliError::Usage(format!("point `{p}` needs {dim} coordinates")));
        }
        images.push(json!({ "point": z, "image": g.apply(&z) }));
    }
    if !images.is_empty() {
        out["images"] = json!(images);
    }
    if let Some(path) = &args.field {
        let xi = load_field(path)?;
        let pb = pullback(g.as_ref(), &xi).map_err(core("pullback"))?;
        out["pullback"] = json!({
            "integral_before": pb.integral_before,
            "integral_after": pb.integral_after,
            "interpolation_error": pb.interpolation_error,
            "max_difference": pb.field.max_difference(&xi).map_err(core("pullback"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct HessianArgs {
    /// Grid field file.
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DET_THRESHOLD)]
    pub threshold: f64,
    /// Also evaluate p after pulling back by the diagonal scaling with
    /// these exponents (summing to zero).
    #[arg(long)]
    pub map: Option<String>,
}

pub fn hessian_command(args: &HessianArgs) -> Result<Value, CliError> {
    let xi = load_field(&args.field)?;
    let before = p_report(&xi, args.threshold).map_err(core("critical points"))?;
    let mut out = json!({ "threshold": args.threshold, "before": before });
    if let Some(list) = &args.map {
        let c = parse_list(list)?;
        let g = counterexample_map(&c).map_err(core("map"))?;
        let pb = pullback(g.as_ref(), &xi).map_err(core("pullback"))?;
        let after = p_report(&pb.field, args.threshold).map_err(core("critical points after map"))?;
        out["map"] = json!(c);
        out["difference"] = json!(after.value - before.value);
        out["after"] = serde_json::to_value(&after).expect("serializes");
        out["interpolation_error"] = json!(pb.interpolation_error);
    }
    Ok(out)
}
