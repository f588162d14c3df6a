//! Command-line surface and the fitting pipelines behind each subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use sop_core::{
    adaptive_pspline_spec, ed_upper_bounds, factor_by_curve_spec, fit, hierarchical_m0_spec,
    lambda_field, predict_curve, CurveDesign, Family, FitOptions, FitResult, MixedModelSpec,
};

use crate::ingest::{ingest_panel, ingest_xy};
use crate::report::{CurveBlock, FitReport, ModelDescriptor, ModelKind};
use crate::{report, simulate};

/// Penalized-spline curve fitting with variance-parameter selection.
#[derive(Parser)]
#[command(name = "sop", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit a curve whose smoothness adapts along the covariate
    FitAdaptive(AdaptiveArgs),
    /// Fit a curve with one global smoothing parameter
    FitPspline(PsplineArgs),
    /// Fit a population curve with per-subject curve deviations
    FitHierarchical(PanelArgs),
    /// Fit one curve per group plus per-subject curve deviations
    FitFactor(PanelArgs),
    /// Write a seeded benchmark dataset as CSV
    Simulate {
        #[command(subcommand)]
        what: SimulateCmd,
    },
}

#[derive(Args)]
pub struct FitControl {
    /// Response family
    #[arg(long, default_value = "gaussian")]
    pub family: String,
    /// Cap on variance updates within one working-response cycle
    #[arg(long, default_value_t = 200)]
    pub max_inner: usize,
    /// Cap on working-response refresh cycles
    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,
    /// Relative convergence tolerance
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Directory for report.json and curve exports
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AdaptiveArgs {
    /// Input CSV with columns x,y (and trials for binomial data)
    pub data: PathBuf,
    /// Number of B-spline segments of the main basis
    #[arg(long, default_value_t = 197)]
    pub nseg: usize,
    /// Degree of the main B-spline basis
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Order of the coefficient difference penalty
    #[arg(long, default_value_t = 2)]
    pub penalty_order: usize,
    /// Number of basis functions modelling the local smoothing level
    #[arg(long, default_value_t = 15)]
    pub psi_basis: usize,
    #[command(flatten)]
    pub control: FitControl,
}

#[derive(Args)]
pub struct PsplineArgs {
    /// Input CSV with columns x,y (and trials for binomial data)
    pub data: PathBuf,
    /// Number of B-spline segments of the basis
    #[arg(long, default_value_t = 197)]
    pub nseg: usize,
    /// Degree of the B-spline basis
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Order of the coefficient difference penalty
    #[arg(long, default_value_t = 2)]
    pub penalty_order: usize,
    #[command(flatten)]
    pub control: FitControl,
}

#[derive(Args)]
pub struct PanelArgs {
    /// Input CSV with columns t,y,subject (and group for factor fits)
    pub data: PathBuf,
    /// Population-curve basis size
    #[arg(long, default_value_t = 23)]
    pub pop_basis: usize,
    /// Subject-curve basis size
    #[arg(long, default_value_t = 13)]
    pub subj_basis: usize,
    /// Order of the difference penalties (population and subject)
    #[arg(long, default_value_t = 2)]
    pub penalty_order: usize,
    #[command(flatten)]
    pub control: FitControl,
}

#[derive(Subcommand)]
pub enum SimulateCmd {
    /// Oscillating curve with frequency increasing towards zero
    Doppler {
        /// Random seed (required: outputs must be reproducible)
        #[arg(long)]
        seed: u64,
        /// Number of observations
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Counts with a flat baseline and three narrow peaks
    PoissonPeaks {
        /// Random seed (required: outputs must be reproducible)
        #[arg(long)]
        seed: u64,
        /// Number of grid points
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Balanced panel of subject curves around a shared trend
    Hierarchical {
        /// Random seed (required: outputs must be reproducible)
        #[arg(long)]
        seed: u64,
        /// Number of subjects
        #[arg(long, default_value_t = 30)]
        subjects: usize,
        /// Observations per subject
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// What a successfully executed command reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
    Wrote,
}

fn parse_family(name: &str) -> Result<Family, String> {
    match name {
        "gaussian" => Ok(Family::gaussian()),
        "poisson" => Ok(Family::poisson()),
        "binomial" => Ok(Family::binomial()),
        other => Err(format!(
            "unknown family '{other}' (expected gaussian, poisson, or binomial)"
        )),
    }
}

fn fit_options(control: &FitControl) -> FitOptions {
    FitOptions {
        max_inner: control.max_inner,
        max_outer: control.max_outer,
        tol: control.tol,
        track_states: false,
    }
}

fn ensure_out(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir)
        .map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))
}

fn run_fit(spec: &MixedModelSpec, control: &FitControl) -> Result<(FitResult, u64), String> {
    let options = fit_options(control);
    let start = Instant::now();
    let result = fit(spec, &options).map_err(|e| {
        format!(
            "fit failed: {e}\nhint: if a variance component is degenerate, the data cannot \
             identify it; reduce the basis sizes or simplify the penalty structure"
        )
    })?;
    let timing_ms = start.elapsed().as_millis() as u64;
    Ok((result, timing_ms))
}

fn finish_report(
    spec: &MixedModelSpec,
    result: &FitResult,
    model: ModelDescriptor,
    timing_ms: u64,
    out: &Path,
) -> Result<FitReport, String> {
    let bounds = ed_upper_bounds(spec, &result.state)
        .map_err(|e| format!("cannot compute effective-dimension bounds: {e}"))?;
    let rep = FitReport::assemble(model, spec, result, &bounds, timing_ms);
    rep.write(out)
        .map_err(|e| format!("cannot write report.json: {e}"))?;
    Ok(rep)
}

fn export_curves<D: CurveDesign + ?Sized>(
    designs: &[(&str, &D)],
    spec: &MixedModelSpec,
    result: &FitResult,
    grid: &[f64],
    out: &Path,
) -> Result<(), String> {
    let mut blocks = Vec::with_capacity(designs.len());
    for (label, design) in designs {
        let prediction = predict_curve(*design, spec, result, grid)
            .map_err(|e| format!("cannot evaluate the fitted curve: {e}"))?;
        blocks.push(CurveBlock {
            label: (*label).to_string(),
            x: grid.to_vec(),
            prediction,
        });
    }
    report::write_curves(out, &blocks).map_err(|e| format!("cannot write curve.csv: {e}"))
}

fn outcome_of(result: &FitResult) -> Outcome {
    if result.converged {
        Outcome::Converged
    } else {
        Outcome::NotConverged
    }
}

/// Shared pipeline of `fit-adaptive` and `fit-pspline`.
fn run_scatter_fit(
    data: &Path,
    nseg: usize,
    degree: usize,
    penalty_order: usize,
    psi_basis: usize,
    kind: ModelKind,
    control: &FitControl,
) -> Result<Outcome, String> {
    let family = parse_family(&control.family)?;
    let binomial = control.family == "binomial";
    let raw = ingest_xy(data, binomial)?;
    let y: Vec<f64> = if binomial {
        let m = raw.trials.as_ref().unwrap();
        raw.y.iter().zip(m).map(|(s, m)| s / m).collect()
    } else {
        raw.y.clone()
    };

    let (spec, aspec) = adaptive_pspline_spec(
        &raw.x,
        &y,
        family,
        nseg,
        degree,
        penalty_order,
        psi_basis,
    )
    .map_err(|e| {
        format!(
            "model construction failed: {e}\nhint: the settings must satisfy \
             penalty-order <= degree + 1 and psi-basis < nseg + degree - penalty-order"
        )
    })?;
    let spec = if binomial {
        let m = DVector::from_vec(raw.trials.clone().unwrap());
        spec.with_trials(m)
            .map_err(|e| format!("model construction failed: {e}"))?
    } else {
        spec
    };

    ensure_out(&control.out)?;
    let (result, timing_ms) = run_fit(&spec, control)?;

    let model = ModelDescriptor {
        kind,
        family: control.family.clone(),
        observations: spec.n(),
        fixed_rank: spec.rank_x(),
        coefficients: spec.rank_x() + spec.q_total(),
        basis: vec![aspec.d()],
        penalty_order,
        variance_parameters: spec.p_total(),
    };
    finish_report(&spec, &result, model, timing_ms, &control.out)?;

    let mut grid = raw.x.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    export_curves(&[("smooth", &aspec)], &spec, &result, &grid, &control.out)?;
    if psi_basis > 1 {
        let field = lambda_field(&aspec, &result.state)
            .map_err(|e| format!("cannot compute the smoothing field: {e}"))?;
        report::write_lambda(&control.out, field.as_slice())
            .map_err(|e| format!("cannot write lambda.csv: {e}"))?;
    }
    Ok(outcome_of(&result))
}

fn run_panel_fit(args: &PanelArgs, factor: bool) -> Result<Outcome, String> {
    let family = parse_family(&args.control.family)?;
    if args.control.family == "binomial" {
        return Err("binomial panels are not supported; supply gaussian or poisson data".into());
    }
    let data = ingest_panel(&args.data, factor)?;
    let q = args.penalty_order;
    let build = if factor {
        factor_by_curve_spec(
            &data.t,
            &data.y,
            data.groups.as_ref().unwrap(),
            family,
            args.pop_basis,
            args.subj_basis,
            q,
            q,
        )
    } else {
        hierarchical_m0_spec(
            &data.t,
            &data.y,
            family,
            args.pop_basis,
            args.subj_basis,
            q,
            q,
        )
    };
    let (spec, hspec) = build.map_err(|e| {
        format!(
            "model construction failed: {e}\nhint: pop-basis and subj-basis must be at \
             least 4 and exceed the penalty order; at least two subjects are required"
        )
    })?;

    ensure_out(&args.control.out)?;
    let (result, timing_ms) = run_fit(&spec, &args.control)?;

    let model = ModelDescriptor {
        kind: if factor {
            ModelKind::Factor
        } else {
            ModelKind::Hierarchical
        },
        family: args.control.family.clone(),
        observations: spec.n(),
        fixed_rank: spec.rank_x(),
        coefficients: spec.rank_x() + spec.q_total(),
        basis: vec![args.pop_basis, args.subj_basis],
        penalty_order: q,
        variance_parameters: spec.p_total(),
    };
    finish_report(&spec, &result, model, timing_ms, &args.control.out)?;

    if factor {
        let g0 = hspec
            .group_curve(0)
            .map_err(|e| format!("cannot evaluate the group curve: {e}"))?;
        let g1 = hspec
            .group_curve(1)
            .map_err(|e| format!("cannot evaluate the group curve: {e}"))?;
        export_curves(
            &[("group0", &g0 as &dyn CurveDesign), ("group1", &g1)],
            &spec,
            &result,
            &data.t,
            &args.control.out,
        )?;
    } else {
        let pop = hspec
            .population_curve()
            .map_err(|e| format!("cannot evaluate the population curve: {e}"))?;
        export_curves(
            &[("population", &pop as &dyn CurveDesign)],
            &spec,
            &result,
            &data.t,
            &args.control.out,
        )?;
    }
    Ok(outcome_of(&result))
}

fn run_simulate(cmd: &SimulateCmd) -> Result<Outcome, String> {
    match cmd {
        SimulateCmd::Doppler { seed, n, out } => {
            if *n < 10 {
                return Err("at least 10 observations are required".into());
            }
            ensure_out(out)?;
            let (x, y) = simulate::doppler(*seed, *n);
            simulate::write_xy_csv(&out.join("doppler.csv"), &x, &y)?;
            Ok(Outcome::Wrote)
        }
        SimulateCmd::PoissonPeaks { seed, n, out } => {
            if *n < 10 {
                return Err("at least 10 grid points are required".into());
            }
            ensure_out(out)?;
            let (x, y) = simulate::poisson_peaks(*seed, *n);
            simulate::write_xy_csv(&out.join("poisson_peaks.csv"), &x, &y)?;
            Ok(Outcome::Wrote)
        }
        SimulateCmd::Hierarchical {
            seed,
            subjects,
            points,
            out,
        } => {
            if *subjects < 2 {
                return Err(
                    "at least two subjects are required to separate the population curve \
                     from subject deviations"
                        .into(),
                );
            }
            if *points < 4 {
                return Err("at least 4 observations per subject are required".into());
            }
            ensure_out(out)?;
            let (t, y) = simulate::hierarchical(*seed, *subjects, *points);
            simulate::write_panel_csv(&out.join("hierarchical.csv"), &t, &y)?;
            Ok(Outcome::Wrote)
        }
    }
}

/// Execute a parsed command.
pub fn run(cli: Cli) -> Result<Outcome, String> {
    match &cli.command {
        Command::FitAdaptive(a) => {
            if a.psi_basis < 1 {
                return Err("psi-basis must be at least 1".into());
            }
            run_scatter_fit(
                &a.data,
                a.nseg,
                a.degree,
                a.penalty_order,
                a.psi_basis,
                ModelKind::Adaptive,
                &a.control,
            )
        }
        Command::FitPspline(a) => run_scatter_fit(
            &a.data,
            a.nseg,
            a.degree,
            a.penalty_order,
            1,
            ModelKind::Pspline,
            &a.control,
        ),
        Command::FitHierarchical(a) => run_panel_fit(a, false),
        Command::FitFactor(a) => run_panel_fit(a, true),
        Command::Simulate { what } => run_simulate(what),
    }
}
